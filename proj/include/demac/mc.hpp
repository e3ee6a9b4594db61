#pragma once

// Monte-Carlo reference estimators.  Realization r draws every eigendomain
// Gaussian from a substream keyed by (seed, r), so estimates are bit-for-bit
// reproducible and independent of evaluation order.  Accumulation uses
// Welford's algorithm in realization-index order.
//
// Antithetic mode pairs realization 2s with its sign-flipped scatter twin
// 2s+1 (both drawn from substream s) and reports honest pair-mean statistics:
// the standard error is computed over the R/2 pair averages, never from the
// raw correlated values.

#include <cmath>
#include <cstdint>
#include <vector>

#include "channel.hpp"
#include "core.hpp"
#include "rng.hpp"
#include "solve.hpp"

namespace demac {

template <class T>
struct MCConfig {
  long realizations = 10000;
  std::uint64_t seed = kDefaultSeed;
  bool antithetic = false;
};

template <class T>
struct MCEstimate {
  T mean = 0;
  T std_error = 0;
  long realizations = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Precomputed factors so the per-realization work is two small matrix
// products per link: H = mean_w + sum_lk U_lk (sqrtG_lk .* W_lk) R_lk with
// R_lk = sqrt(P_k/M_k) V_lk^H Q_k^{1/2} and mean_w the weighted mean.
template <class T>
struct SamplerPlan {
  Dimensions dims;
  CMat<T> mean_w;                               // N x M
  std::vector<std::vector<CMat<T>>> left_fac;   // [l][k] = U_lk
  std::vector<std::vector<RMat<T>>> sqrt_g;     // [l][k]
  std::vector<std::vector<CMat<T>>> right_fac;  // [l][k]
};

template <class T>
SamplerPlan<T> make_sampler_plan(const ChannelModel<T>& model,
                                 const InputCovarianceSet<T>& q) {
  check_structure(model);
  const QWeights<T> qw = make_qweights(model, q);
  const Dimensions& d = model.dims;
  SamplerPlan<T> plan;
  plan.dims = d;
  plan.mean_w = weighted_mean(model, qw);
  plan.left_fac.resize(d.L);
  plan.sqrt_g.resize(d.L);
  plan.right_fac.resize(d.L);
  for (Index l = 0; l < d.L; ++l) {
    plan.left_fac[l].resize(d.K);
    plan.sqrt_g[l].resize(d.K);
    plan.right_fac[l].resize(d.K);
    for (Index k = 0; k < d.K; ++k) {
      plan.left_fac[l][k] = model.links[l][k].U;
      plan.sqrt_g[l][k] = model.links[l][k].G.cwiseSqrt();
      CMat<T> rf = std::sqrt(qw.w[k]) * model.links[l][k].V.adjoint();
      if (!qw.identity[k]) rf = (rf * qw.qh[k]).eval();
      plan.right_fac[l][k] = rf;
    }
  }
  return plan;
}

// Scatter part of one realization.  The draw order is part of the
// reproducibility contract: users outer, receive sets inner, eigendomain
// entries column-major.
template <class T>
CMat<T> sample_scatter(const SamplerPlan<T>& plan, Substream& rng) {
  const Dimensions& d = plan.dims;
  CMat<T> h = CMat<T>::Zero(d.N(), d.M());
  for (Index k = 0; k < d.K; ++k) {
    for (Index l = 0; l < d.L; ++l) {
      const Index n = d.N_l[l], m = d.M_k[k];
      CMat<T> w(n, m);
      for (Index j = 0; j < m; ++j)
        for (Index i = 0; i < n; ++i)
          w(i, j) = std::complex<T>(rng.cnormal());
      h.block(d.rx_offset(l), d.tx_offset(k), n, m) =
          plan.left_fac[l][k] *
          (plan.sqrt_g[l][k].template cast<std::complex<T>>().cwiseProduct(w) *
           plan.right_fac[l][k]);
    }
  }
  return h;
}

template <class T>
class Welford {
 public:
  void add(T v) {
    ++n_;
    const T delta = v - mean_;
    mean_ += delta / T(n_);
    m2_ += delta * (v - mean_);
  }
  T mean() const { return mean_; }
  T std_error() const {
    if (n_ < 2) return T(0);
    return std::sqrt(m2_ / (T(n_ - 1) * T(n_)));
  }
  long count() const { return n_; }

 private:
  long n_ = 0;
  T mean_ = 0;
  T m2_ = 0;
};

// Shared driver: evaluates a statistic of the channel realization and
// aggregates it, with optional antithetic pairing.
template <class T, class Stat>
MCEstimate<T> run_mc(const ChannelModel<T>& model,
                     const InputCovarianceSet<T>& q, const MCConfig<T>& cfg,
                     Stat&& stat) {
  if (cfg.realizations < 1)
    throw InvalidArgument("Monte Carlo needs at least one realization");
  if (cfg.antithetic && cfg.realizations % 2 != 0)
    throw InvalidArgument("antithetic sampling needs an even realization count");
  const SamplerPlan<T> plan = make_sampler_plan(model, q);
  Welford<T> acc;
  if (cfg.antithetic) {
    const long pairs = cfg.realizations / 2;
    for (long s = 0; s < pairs; ++s) {
      Substream rng(cfg.seed, static_cast<std::uint64_t>(s));
      const CMat<T> scatter = sample_scatter(plan, rng);
      const T v_plus = stat(CMat<T>(plan.mean_w + scatter));
      const T v_minus = stat(CMat<T>(plan.mean_w - scatter));
      acc.add((v_plus + v_minus) / 2);
    }
  } else {
    for (long r = 0; r < cfg.realizations; ++r) {
      Substream rng(cfg.seed, static_cast<std::uint64_t>(r));
      const CMat<T> scatter = sample_scatter(plan, rng);
      acc.add(stat(CMat<T>(plan.mean_w + scatter)));
    }
  }
  MCEstimate<T> out;
  out.mean = acc.mean();
  out.std_error = acc.std_error();
  out.realizations = cfg.realizations;
  out.seed = cfg.seed;
  return out;
}

}  // namespace detail

// One channel realization H = mean_w + scatter for external consumers; the
// caller owns the substream, so repeated calls walk one stream.
template <class T>
CMat<T> sample_channel(const ChannelModel<T>& model,
                       const InputCovarianceSet<T>& q, Substream& rng) {
  const detail::SamplerPlan<T> plan = detail::make_sampler_plan(model, q);
  return plan.mean_w + detail::sample_scatter(plan, rng);
}

// Sample-average mutual information E log det(I + x^{-1} H H^H) in nats.
template <class T>
MCEstimate<T> ergodic_mi(const ChannelModel<T>& model,
                         const InputCovarianceSet<T>& q, T x,
                         const MCConfig<T>& cfg = MCConfig<T>{}) {
  detail::check_x(x);
  const Index n = model.dims.N();
  return detail::run_mc(model, q, cfg, [&](const CMat<T>& h) {
    const CMat<T> gram =
        CMat<T>::Identity(n, n) + (h * h.adjoint()) / x;
    return logdet_hermitian_pd_llt(gram, "mutual information sample");
  });
}

// Sample-average resolvent trace (1/N) tr( (-xI - H H^H)^{-1} ), the
// Monte-Carlo counterpart of the deterministic-equivalent Cauchy transform
// at z = -x (real there).
template <class T>
MCEstimate<T> ergodic_resolvent_trace(const ChannelModel<T>& model,
                                      const InputCovarianceSet<T>& q, T x,
                                      const MCConfig<T>& cfg = MCConfig<T>{}) {
  detail::check_x(x);
  const Index n = model.dims.N();
  return detail::run_mc(model, q, cfg, [&](const CMat<T>& h) {
    CMat<T> shifted = h * h.adjoint();
    shifted += x * CMat<T>::Identity(n, n);
    Eigen::LLT<CMat<T>> llt(shifted);
    if (llt.info() != Eigen::Success)
      throw FactorizationFailure("resolvent sample: Cholesky failed");
    // tr((xI + HH^H)^{-1}) = ||L^{-1}||_F^2
    const CMat<T> linv =
        llt.matrixL().solve(CMat<T>::Identity(n, n));
    return -linv.squaredNorm() / T(n);
  });
}

}  // namespace demac
