#pragma once

// Deterministic-equivalent fixed-point solvers.  The central object is the
// coupled system
//
//   Phi_tilde = I_N - sum_k eta_Q_tilde_k(G_k)
//   Phi_k     = I_{M_k} - eta_Q_k(G_B)
//   G_B       = ( -x Phi_tilde - A inv(Phi) A^H )^{-1}
//   G_k       = [ ( -x Phi - A^H inv(Phi_tilde) A )^{-1} ]_kk
//
// evaluated at z = -x on the negative real axis, where A stacks the weighted
// means sqrt(P_k/M_k) Hbar_lk Q_k^{1/2} and Phi = blkdiag(Phi_k).  The fixed
// point is unique with all G blocks negative definite; iterating the system
// to a sweep-to-sweep tolerance converges from the conventional identity
// start in practice, and a fallback restart from the interior point
// G = -x^{-1} I (the zero-channel resolvent) covers models for which the
// identity start hits an exactly singular first iterate.
//
// Reduced solvers cover structured special cases without N x N inversions:
// a common receive eigenbasis per set (zero mean), the single-receive-set
// scalar iteration, the single-set structured Rician case, and the diagonal
// variance-profile system.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "channel.hpp"
#include "core.hpp"

namespace demac {

template <class T>
struct SolverConfig {
  T tol = T(1e-10);       // max entrywise absolute change between sweeps
  long max_iters = 10000;  // sweep budget before NoConvergence
  T damping = T(0);        // new = (1 - damping) * update + damping * old
};

template <class T>
struct DEState {
  T x = 0;
  CMat<T> Phi_tilde;             // N x N
  std::vector<CMat<T>> Phi_k;    // M_k x M_k each
  CMat<T> G_B;                   // N x N resolvent-mean block
  std::vector<CMat<T>> G_k;      // M_k x M_k resolvent-mean blocks
  long iters = 0;
  T residual = 0;
};

// State of the common-receive-basis solvers: per receive set the diagonal
// lambda_l of the basis-aligned resolvent factor (entries in (0, 1] at the
// fixed point, with G_B = -x^{-1} blkdiag(U_l diag(lambda_l) U_l^H)), plus
// the per-user blocks G_k.
template <class T>
struct ReducedState {
  T x = 0;
  std::vector<RVec<T>> lambda;  // one real N_l vector per receive set
  std::vector<CMat<T>> G_k;     // M_k x M_k each
  long iters = 0;
  T residual = 0;
};

// State of the diagonal variance-profile system: the diagonals of the two
// resolvent means (real at z = -x).
template <class T>
struct VarianceProfileState {
  T x = 0;
  RVec<T> g_tilde;  // N entries
  RVec<T> g;        // M entries
  long iters = 0;
  T residual = 0;
};

template <class T>
std::complex<T> cauchy_transform(const DEState<T>& s) {
  return s.G_B.trace() / T(s.G_B.rows());
}

template <class T>
std::complex<T> cauchy_transform(const ReducedState<T>& s) {
  T sum = 0;
  Index n = 0;
  for (const RVec<T>& lam : s.lambda) {
    sum += lam.sum();
    n += lam.size();
  }
  return std::complex<T>(-sum / (T(n) * s.x), T(0));
}

template <class T>
std::complex<T> cauchy_transform(const VarianceProfileState<T>& s) {
  return std::complex<T>(s.g_tilde.mean(), T(0));
}

// ---------------------------------------------------------------------------
// Shared solver plumbing

namespace detail {

// Per-user covariance weights: w_k = P_k / M_k, the PSD square root of Q_k,
// and an exact-identity flag so that Q = I introduces no round-off.
template <class T>
struct QWeights {
  std::vector<T> w;
  std::vector<CMat<T>> qh;
  std::vector<bool> identity;
};

template <class T>
QWeights<T> make_qweights(const ChannelModel<T>& model,
                          const InputCovarianceSet<T>& q) {
  check_covariances(model.dims, q);
  QWeights<T> out;
  const Index k_count = model.dims.K;
  out.w.resize(k_count);
  out.qh.resize(k_count);
  out.identity.resize(k_count);
  for (Index k = 0; k < k_count; ++k) {
    out.w[k] = model.P[k] / T(model.dims.M_k[k]);
    const CMat<T> eye =
        CMat<T>::Identity(model.dims.M_k[k], model.dims.M_k[k]);
    out.identity[k] = (q.Q[k].array() == eye.array()).all();
    out.qh[k] = out.identity[k] ? eye : psd_sqrt(q.Q[k], "input covariance");
  }
  return out;
}

// Stacked weighted mean A with user block k equal to
// sqrt(P_k/M_k) Hbar_:k Q_k^{1/2}.
template <class T>
CMat<T> weighted_mean(const ChannelModel<T>& model, const QWeights<T>& qw) {
  const Dimensions& d = model.dims;
  CMat<T> a = CMat<T>::Zero(d.N(), d.M());
  for (Index k = 0; k < d.K; ++k) {
    const T sw = std::sqrt(qw.w[k]);
    for (Index l = 0; l < d.L; ++l) {
      auto blk = a.block(d.rx_offset(l), d.tx_offset(k), d.N_l[l], d.M_k[k]);
      blk = sw * model.links[l][k].Hbar;
      if (!qw.identity[k]) blk = (blk * qw.qh[k]).eval();
    }
  }
  return a;
}

// Covariance-weighted user block: w_k Qh_k G_k Qh_k.
template <class T>
CMat<T> weighted_block(const QWeights<T>& qw, Index k, const CMat<T>& gk) {
  if (qw.identity[k]) return qw.w[k] * gk;
  return qw.w[k] * (qw.qh[k] * gk * qw.qh[k]);
}

// Attempts a solve from the conventional identity start, then from the
// interior start, then from the interior start with damping at least 1/2.
// Theorems guarantee a unique fixed point, so every successful route agrees.
template <class T, class Attempt>
auto run_with_restart_ladder(const SolverConfig<T>& cfg, Attempt&& attempt)
    -> decltype(attempt(false, cfg.damping)) {
  try {
    return attempt(false, cfg.damping);
  } catch (const SingularIteration&) {
  } catch (const NoConvergence&) {
  }
  try {
    return attempt(true, cfg.damping);
  } catch (const SingularIteration&) {
  } catch (const NoConvergence&) {
  }
  return attempt(true, std::max(cfg.damping, T(0.5)));
}

template <class T>
void check_x(T x) {
  if (!(x > T(0)) || !std::isfinite(x))
    throw InvalidArgument("noise level x must be positive and finite");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// General solver

// Explicit-initialization variant; runs strictly from the given start (no
// restart ladder), which the uniqueness probes rely on.
template <class T>
DEState<T> solve_fixed_point(const ChannelModel<T>& model,
                             const InputCovarianceSet<T>& q, T x,
                             const SolverConfig<T>& cfg, const CMat<T>& g_b0,
                             const std::vector<CMat<T>>& g_k0) {
  check_structure(model);
  detail::check_x(x);
  const Dimensions& d = model.dims;
  const Index n = d.N();
  if (g_b0.rows() != n || g_b0.cols() != n ||
      static_cast<Index>(g_k0.size()) != d.K)
    throw DimensionMismatch("initial state has wrong shape");
  for (Index k = 0; k < d.K; ++k)
    if (g_k0[k].rows() != d.M_k[k] || g_k0[k].cols() != d.M_k[k])
      throw DimensionMismatch("initial state has wrong shape");

  const detail::QWeights<T> qw = detail::make_qweights(model, q);
  const CMat<T> a = detail::weighted_mean(model, qw);
  const bool mean_free = (a.norm() == T(0));

  CMat<T> g_b = g_b0;
  std::vector<CMat<T>> g_k = g_k0;
  CMat<T> phi_tilde_prev = CMat<T>::Identity(n, n);
  std::vector<CMat<T>> phi_k_prev(d.K);
  for (Index k = 0; k < d.K; ++k)
    phi_k_prev[k] = CMat<T>::Identity(d.M_k[k], d.M_k[k]);

  CMat<T> phi_tilde(n, n);
  std::vector<CMat<T>> phi_k(d.K);
  T residual = std::numeric_limits<T>::infinity();

  for (long it = 1; it <= cfg.max_iters; ++it) {
    // correlation-map half: Phi's from the current resolvent means
    phi_tilde.setZero();
    for (Index l = 0; l < d.L; ++l) {
      auto blk =
          phi_tilde.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
      blk.setIdentity();
    }
    for (Index k = 0; k < d.K; ++k) {
      const CMat<T> tk = detail::weighted_block(qw, k, g_k[k]);
      for (Index l = 0; l < d.L; ++l) {
        const LinkStatistics<T>& s = model.links[l][k];
        const RVec<T> diag = detail::pi_tilde_diag(s, tk);
        phi_tilde.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]) -=
            s.U * diag.template cast<std::complex<T>>().asDiagonal() *
            s.U.adjoint();
      }
    }
    phi_tilde = herm(phi_tilde);
    for (Index k = 0; k < d.K; ++k) {
      CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
      for (Index l = 0; l < d.L; ++l) {
        const LinkStatistics<T>& s = model.links[l][k];
        const CMat<T> gb_l =
            g_b.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
        const RVec<T> diag = detail::pi_diag(s, gb_l);
        ek += s.V * diag.template cast<std::complex<T>>().asDiagonal() *
              s.V.adjoint();
      }
      if (!qw.identity[k]) ek = (qw.qh[k] * ek * qw.qh[k]).eval();
      phi_k[k] = herm(CMat<T>(CMat<T>::Identity(d.M_k[k], d.M_k[k]) -
                              qw.w[k] * ek));
    }

    // resolvent half
    CMat<T> g_b_new(n, n);
    std::vector<CMat<T>> g_k_new(d.K);
    if (mean_free) {
      g_b_new.setZero();
      for (Index l = 0; l < d.L; ++l) {
        const CMat<T> blk = phi_tilde.block(d.rx_offset(l), d.rx_offset(l),
                                            d.N_l[l], d.N_l[l]);
        g_b_new.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]) =
            inverse_checked(CMat<T>(-x * blk), "receive resolvent update");
      }
      for (Index k = 0; k < d.K; ++k)
        g_k_new[k] = inverse_checked(CMat<T>(-x * phi_k[k]),
                                     "transmit resolvent update");
    } else {
      CMat<T> a_phi_inv = a;  // A * inv(Phi), block column at a time
      for (Index k = 0; k < d.K; ++k) {
        const CMat<T> inv_k =
            inverse_checked(phi_k[k], "transmit correlation factor");
        a_phi_inv.middleCols(d.tx_offset(k), d.M_k[k]) =
            (a.middleCols(d.tx_offset(k), d.M_k[k]) * inv_k).eval();
      }
      g_b_new = inverse_checked(
          CMat<T>(-x * phi_tilde - a_phi_inv * a.adjoint()),
          "receive resolvent update");

      const CMat<T> phi_tilde_inv =
          inverse_checked(phi_tilde, "receive correlation factor");
      CMat<T> big = -(a.adjoint() * phi_tilde_inv * a);
      for (Index k = 0; k < d.K; ++k)
        big.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]) -=
            x * phi_k[k];
      const CMat<T> g_full =
          inverse_checked(big, "transmit resolvent update");
      for (Index k = 0; k < d.K; ++k)
        g_k_new[k] = herm(
            g_full.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]));
    }
    g_b_new = herm(g_b_new);
    for (Index k = 0; k < d.K; ++k) g_k_new[k] = herm(g_k_new[k]);

    if (cfg.damping > T(0)) {
      g_b_new = (1 - cfg.damping) * g_b_new + cfg.damping * g_b;
      for (Index k = 0; k < d.K; ++k)
        g_k_new[k] = (1 - cfg.damping) * g_k_new[k] + cfg.damping * g_k[k];
    }

    residual = std::max(max_abs_diff(phi_tilde, phi_tilde_prev),
                        max_abs_diff(g_b_new, g_b));
    for (Index k = 0; k < d.K; ++k) {
      residual = std::max(residual, max_abs_diff(phi_k[k], phi_k_prev[k]));
      residual = std::max(residual, max_abs_diff(g_k_new[k], g_k[k]));
    }

    phi_tilde_prev = phi_tilde;
    phi_k_prev = phi_k;
    g_b = std::move(g_b_new);
    g_k = std::move(g_k_new);

    if (residual <= cfg.tol)
      return DEState<T>{x,  std::move(phi_tilde), std::move(phi_k),
                        std::move(g_b), std::move(g_k), it, residual};
  }
  throw NoConvergence(cfg.max_iters, static_cast<double>(residual));
}

template <class T>
DEState<T> solve_fixed_point(const ChannelModel<T>& model,
                             const InputCovarianceSet<T>& q, T x,
                             const SolverConfig<T>& cfg = SolverConfig<T>{}) {
  check_structure(model);
  detail::check_x(x);
  const Dimensions& d = model.dims;
  return detail::run_with_restart_ladder(cfg, [&](bool interior, T damping) {
    SolverConfig<T> c = cfg;
    c.damping = damping;
    const std::complex<T> v =
        interior ? std::complex<T>(-1 / x) : std::complex<T>(1);
    CMat<T> g_b0 = v * CMat<T>::Identity(d.N(), d.N());
    std::vector<CMat<T>> g_k0;
    g_k0.reserve(d.K);
    for (Index k = 0; k < d.K; ++k)
      g_k0.push_back(v * CMat<T>::Identity(d.M_k[k], d.M_k[k]));
    return solve_fixed_point(model, q, x, c, g_b0, g_k0);
  });
}

// ---------------------------------------------------------------------------
// Common receive eigenbasis (zero mean): only diagonal N-side quantities are
// iterated, so no N x N inversion is required.

template <class T>
ReducedState<T> solve_reduced_common_u(const ChannelModel<T>& model,
                                       const InputCovarianceSet<T>& q, T x,
                                       const SolverConfig<T>& cfg =
                                           SolverConfig<T>{}) {
  check_structure(model);
  detail::check_x(x);
  if (!has_zero_mean(model))
    throw PreconditionViolated(
        "common-basis solver requires a zero-mean model");
  if (!has_common_receive_basis(model))
    throw PreconditionViolated(
        "common-basis solver requires one receive eigenbasis per set");
  const Dimensions& d = model.dims;
  const detail::QWeights<T> qw = detail::make_qweights(model, q);

  return detail::run_with_restart_ladder(cfg, [&](bool interior, T damping) {
    std::vector<CMat<T>> g_k(d.K);
    for (Index k = 0; k < d.K; ++k)
      g_k[k] = (interior ? std::complex<T>(-1 / x) : std::complex<T>(1)) *
               CMat<T>::Identity(d.M_k[k], d.M_k[k]);
    std::vector<RVec<T>> lam(d.L), lam_prev(d.L);
    for (Index l = 0; l < d.L; ++l) lam_prev[l] = RVec<T>::Ones(d.N_l[l]);

    T residual = std::numeric_limits<T>::infinity();
    for (long it = 1; it <= cfg.max_iters; ++it) {
      // lambda_l = 1 / (1 - sum_k w_k pi_tilde_lk(Qh G_k Qh)), entrywise
      std::vector<CMat<T>> tk(d.K);
      for (Index k = 0; k < d.K; ++k)
        tk[k] = detail::weighted_block(qw, k, g_k[k]);
      for (Index l = 0; l < d.L; ++l) {
        RVec<T> den = RVec<T>::Ones(d.N_l[l]);
        for (Index k = 0; k < d.K; ++k)
          den -= detail::pi_tilde_diag(model.links[l][k], tk[k]);
        if (den.cwiseAbs().minCoeff() < T(1e-14))
          throw SingularIteration("common-basis receive factor vanished");
        lam[l] = den.cwiseInverse();
      }

      // G_k = -x^{-1} (I - eta_Q_k(G_B))^{-1} with
      // G_B = -x^{-1} blkdiag(U_l diag(lambda_l) U_l^H)
      std::vector<CMat<T>> g_k_new(d.K);
      for (Index k = 0; k < d.K; ++k) {
        CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
        for (Index l = 0; l < d.L; ++l) {
          const LinkStatistics<T>& s = model.links[l][k];
          // [Pi_lk(G_B)]_jj = -x^{-1} sum_i G(i,j) lambda_l(i)
          const RVec<T> diag = s.G.transpose() * lam[l] * (-1 / x);
          ek += s.V * diag.template cast<std::complex<T>>().asDiagonal() *
                s.V.adjoint();
        }
        if (!qw.identity[k]) ek = (qw.qh[k] * ek * qw.qh[k]).eval();
        const CMat<T> phi_k = herm(
            CMat<T>(CMat<T>::Identity(d.M_k[k], d.M_k[k]) - qw.w[k] * ek));
        g_k_new[k] = herm(inverse_checked(CMat<T>(-x * phi_k),
                                          "transmit resolvent update"));
        if (damping > T(0))
          g_k_new[k] = (1 - damping) * g_k_new[k] + damping * g_k[k];
      }

      residual = T(0);
      for (Index l = 0; l < d.L; ++l)
        residual =
            std::max(residual, (lam[l] - lam_prev[l]).cwiseAbs().maxCoeff());
      for (Index k = 0; k < d.K; ++k)
        residual = std::max(residual, max_abs_diff(g_k_new[k], g_k[k]));

      lam_prev = lam;
      g_k = std::move(g_k_new);
      if (residual <= cfg.tol)
        return ReducedState<T>{x, std::move(lam), std::move(g_k), it,
                               residual};
    }
    throw NoConvergence(cfg.max_iters, static_cast<double>(residual));
  });
}

// ---------------------------------------------------------------------------
// Single receive set, zero mean, Q = I: fully scalar iteration on the two
// families of basis-aligned resolvent diagonals.

template <class T>
ReducedState<T> solve_l1_inversion_free(const ChannelModel<T>& model, T x,
                                        const SolverConfig<T>& cfg =
                                            SolverConfig<T>{}) {
  check_structure(model);
  detail::check_x(x);
  const Dimensions& d = model.dims;
  if (d.L != 1)
    throw PreconditionViolated("scalar solver requires a single receive set");
  if (!has_zero_mean(model))
    throw PreconditionViolated("scalar solver requires a zero-mean model");
  if (!has_common_receive_basis(model))
    throw PreconditionViolated(
        "scalar solver requires one common receive eigenbasis");
  const Index n = d.N();

  return detail::run_with_restart_ladder(cfg, [&](bool interior, T damping) {
    std::vector<RVec<T>> mu(d.K);  // diag of G_k in the V_k basis
    for (Index k = 0; k < d.K; ++k)
      mu[k] = RVec<T>::Constant(d.M_k[k], interior ? -1 / x : T(1));
    RVec<T> lam = RVec<T>::Ones(n), lam_prev = RVec<T>::Ones(n);

    T residual = std::numeric_limits<T>::infinity();
    for (long it = 1; it <= cfg.max_iters; ++it) {
      RVec<T> den = RVec<T>::Ones(n);
      for (Index k = 0; k < d.K; ++k) {
        const T w = model.P[k] / T(d.M_k[k]);
        den -= w * (model.links[0][k].G * mu[k]);
      }
      if (den.cwiseAbs().minCoeff() < T(1e-14))
        throw SingularIteration("scalar receive factor vanished");
      lam = den.cwiseInverse();

      residual = (lam - lam_prev).cwiseAbs().maxCoeff();
      for (Index k = 0; k < d.K; ++k) {
        const T w = model.P[k] / T(d.M_k[k]);
        RVec<T> denk =
            (-x) * RVec<T>::Ones(d.M_k[k]) -
            w * (model.links[0][k].G.transpose() * lam);
        if (denk.cwiseAbs().minCoeff() < T(1e-14))
          throw SingularIteration("scalar transmit factor vanished");
        RVec<T> mu_new = denk.cwiseInverse();
        if (damping > T(0)) mu_new = (1 - damping) * mu_new + damping * mu[k];
        residual = std::max(residual,
                            (mu_new - mu[k]).cwiseAbs().maxCoeff());
        mu[k] = std::move(mu_new);
      }
      lam_prev = lam;

      if (residual <= cfg.tol) {
        ReducedState<T> out;
        out.x = x;
        out.lambda = {lam};
        out.G_k.resize(d.K);
        for (Index k = 0; k < d.K; ++k) {
          const CMat<T>& v = model.links[0][k].V;
          out.G_k[k] = herm(CMat<T>(
              v * mu[k].template cast<std::complex<T>>().asDiagonal() *
              v.adjoint()));
        }
        out.iters = it;
        out.residual = residual;
        return out;
      }
    }
    throw NoConvergence(cfg.max_iters, static_cast<double>(residual));
  });
}

// ---------------------------------------------------------------------------
// Single receive set with a structured Rician mean Hbar_k = U diag-like V_k^H
// (at most one nonzero per row and per column of U^H Hbar_k V_k) and Q = I.
// The receive-side quantities stay diagonal in the common basis, so the
// N x N inversion is replaced by entrywise divisions; only the M x M
// resolvent block inverse remains.

template <class T>
DEState<T> solve_structured_rician_l1(const ChannelModel<T>& model, T x,
                                      const SolverConfig<T>& cfg =
                                          SolverConfig<T>{}) {
  check_structure(model);
  detail::check_x(x);
  const Dimensions& d = model.dims;
  if (d.L != 1)
    throw PreconditionViolated(
        "structured Rician solver requires a single receive set");
  if (!has_common_receive_basis(model))
    throw PreconditionViolated(
        "structured Rician solver requires one common receive eigenbasis");
  const Index n = d.N();
  const CMat<T>& u = model.links[0][0].U;

  // Eigendomain means D_k = U^H Hbar_k V_k, checked for the at-most-one
  // nonzero per row/column pattern that keeps the receive side diagonal.
  std::vector<CMat<T>> dmean(d.K);
  T scale = T(1);
  for (Index k = 0; k < d.K; ++k) {
    dmean[k] = u.adjoint() * model.links[0][k].Hbar * model.links[0][k].V;
    scale = std::max(scale, dmean[k].cwiseAbs().maxCoeff());
  }
  for (Index k = 0; k < d.K; ++k) {
    for (Index i = 0; i < dmean[k].rows(); ++i) {
      Index nonzero = 0;
      for (Index j = 0; j < dmean[k].cols(); ++j)
        if (std::abs(dmean[k](i, j)) > T(1e-10) * scale) ++nonzero;
      if (nonzero > 1)
        throw PreconditionViolated(
            "structured Rician solver: eigendomain mean must have at most "
            "one nonzero per row");
    }
    for (Index j = 0; j < dmean[k].cols(); ++j) {
      Index nonzero = 0;
      for (Index i = 0; i < dmean[k].rows(); ++i)
        if (std::abs(dmean[k](i, j)) > T(1e-10) * scale) ++nonzero;
      if (nonzero > 1)
        throw PreconditionViolated(
            "structured Rician solver: eigendomain mean must have at most "
            "one nonzero per column");
    }
  }

  return detail::run_with_restart_ladder(cfg, [&](bool interior, T damping) {
    RVec<T> gt = RVec<T>::Constant(n, interior ? -1 / x : T(1));
    std::vector<CMat<T>> g_k(d.K);
    for (Index k = 0; k < d.K; ++k)
      g_k[k] = (interior ? std::complex<T>(-1 / x) : std::complex<T>(1)) *
               CMat<T>::Identity(d.M_k[k], d.M_k[k]);

    T residual = std::numeric_limits<T>::infinity();
    for (long it = 1; it <= cfg.max_iters; ++it) {
      // Receive factor diagonal and transmit factors
      RVec<T> dt = RVec<T>::Ones(n);  // diag of Phi_tilde in the U basis
      std::vector<RVec<T>> phi_diag(d.K);  // diag of Phi_k in the V_k basis
      for (Index k = 0; k < d.K; ++k) {
        const LinkStatistics<T>& s = model.links[0][k];
        const T w = model.P[k] / T(d.M_k[k]);
        dt -= w * (s.G * detail::diag_conjugation(s.V, g_k[k]));
        phi_diag[k] =
            RVec<T>::Ones(d.M_k[k]) - w * (s.G.transpose() * gt);
      }

      // Receive update: G_B diagonal in the U basis,
      // gt_i = 1 / (-x dt_i - sum_k w_k |D_k(i, c_k(i))|^2 / phi_k(c_k(i)))
      RVec<T> mean_load = RVec<T>::Zero(n);
      for (Index k = 0; k < d.K; ++k) {
        if (phi_diag[k].cwiseAbs().minCoeff() < T(1e-14))
          throw SingularIteration("structured transmit factor vanished");
        const T w = model.P[k] / T(d.M_k[k]);
        mean_load +=
            w * (dmean[k].cwiseAbs2() * phi_diag[k].cwiseInverse());
      }
      RVec<T> den = (-x) * dt - mean_load;
      if (den.cwiseAbs().minCoeff() < T(1e-14))
        throw SingularIteration("structured receive factor vanished");
      RVec<T> gt_new = den.cwiseInverse();
      if (damping > T(0)) gt_new = (1 - damping) * gt_new + damping * gt;

      // Transmit update: full M x M block with the diagonal receive factor
      if (dt.cwiseAbs().minCoeff() < T(1e-14))
        throw SingularIteration("structured receive factor vanished");
      const RVec<T> dt_inv = dt.cwiseInverse();
      CMat<T> big(d.M(), d.M());
      for (Index k = 0; k < d.K; ++k) {
        const T swk = std::sqrt(model.P[k] / T(d.M_k[k]));
        for (Index k2 = 0; k2 < d.K; ++k2) {
          const T swk2 = std::sqrt(model.P[k2] / T(d.M_k[k2]));
          const CMat<T> cross =
              dmean[k].adjoint() *
              dt_inv.template cast<std::complex<T>>().asDiagonal() *
              dmean[k2];
          big.block(d.tx_offset(k), d.tx_offset(k2), d.M_k[k], d.M_k[k2]) =
              -(swk * swk2) *
              (model.links[0][k].V * cross * model.links[0][k2].V.adjoint());
        }
        big.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]) -=
            x * (model.links[0][k].V *
                 phi_diag[k].template cast<std::complex<T>>().asDiagonal() *
                 model.links[0][k].V.adjoint());
      }
      const CMat<T> g_full =
          inverse_checked(big, "transmit resolvent update");
      residual = (gt_new - gt).cwiseAbs().maxCoeff();
      gt = std::move(gt_new);
      for (Index k = 0; k < d.K; ++k) {
        CMat<T> gk_new = herm(
            g_full.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]));
        if (damping > T(0)) gk_new = (1 - damping) * gk_new + damping * g_k[k];
        residual = std::max(residual, max_abs_diff(gk_new, g_k[k]));
        g_k[k] = std::move(gk_new);
      }

      if (residual <= cfg.tol) {
        DEState<T> out;
        out.x = x;
        out.Phi_tilde = herm(CMat<T>(
            u * dt.template cast<std::complex<T>>().asDiagonal() *
            u.adjoint()));
        out.Phi_k.resize(d.K);
        for (Index k = 0; k < d.K; ++k)
          out.Phi_k[k] = herm(CMat<T>(
              model.links[0][k].V *
              phi_diag[k].template cast<std::complex<T>>().asDiagonal() *
              model.links[0][k].V.adjoint()));
        out.G_B = herm(CMat<T>(
            u * gt.template cast<std::complex<T>>().asDiagonal() *
            u.adjoint()));
        out.G_k = std::move(g_k);
        out.iters = it;
        out.residual = residual;
        return out;
      }
    }
    throw NoConvergence(cfg.max_iters, static_cast<double>(residual));
  });
}

// ---------------------------------------------------------------------------
// Diagonal variance-profile system: entries H_ij independent with variances
// sigma2(i,j)/N plus an arbitrary deterministic mean.  Iterates only the two
// resolvent-mean diagonals.

template <class T>
VarianceProfileState<T> solve_variance_profile_diag(
    const RMat<T>& sigma2, const CMat<T>& hbar, T x,
    const SolverConfig<T>& cfg = SolverConfig<T>{}) {
  detail::check_x(x);
  if (sigma2.rows() != hbar.rows() || sigma2.cols() != hbar.cols())
    throw DimensionMismatch("variance profile and mean shapes differ");
  if (sigma2.minCoeff() < T(0))
    throw NotPSD("variance profile has a negative entry");
  const Index n = sigma2.rows(), m = sigma2.cols();
  const RMat<T> prof = sigma2 / T(n);
  const bool mean_free = (hbar.norm() == T(0));

  return detail::run_with_restart_ladder(cfg, [&](bool interior, T damping) {
    RVec<T> gt = RVec<T>::Constant(n, interior ? -1 / x : T(1));
    RVec<T> g = RVec<T>::Constant(m, interior ? -1 / x : T(1));

    T residual = std::numeric_limits<T>::infinity();
    for (long it = 1; it <= cfg.max_iters; ++it) {
      const RVec<T> phi_t = RVec<T>::Ones(n) - prof * g;
      const RVec<T> phi = RVec<T>::Ones(m) - prof.transpose() * gt;

      RVec<T> gt_new(n), g_new(m);
      if (mean_free) {
        if (phi_t.cwiseAbs().minCoeff() < T(1e-14) ||
            phi.cwiseAbs().minCoeff() < T(1e-14))
          throw SingularIteration("variance-profile factor vanished");
        gt_new = (-x * phi_t).cwiseInverse();
        g_new = (-x * phi).cwiseInverse();
      } else {
        if (phi_t.cwiseAbs().minCoeff() < T(1e-14) ||
            phi.cwiseAbs().minCoeff() < T(1e-14))
          throw SingularIteration("variance-profile factor vanished");
        CMat<T> mt = (-x * phi_t).template cast<std::complex<T>>().asDiagonal();
        mt -= hbar * phi.cwiseInverse().template cast<std::complex<T>>()
                         .asDiagonal() * hbar.adjoint();
        gt_new = inverse_checked(mt, "receive resolvent update")
                     .diagonal().real();
        CMat<T> mm = (-x * phi).template cast<std::complex<T>>().asDiagonal();
        mm -= hbar.adjoint() * phi_t.cwiseInverse()
                                   .template cast<std::complex<T>>()
                                   .asDiagonal() * hbar;
        g_new = inverse_checked(mm, "transmit resolvent update")
                    .diagonal().real();
      }
      if (damping > T(0)) {
        gt_new = (1 - damping) * gt_new + damping * gt;
        g_new = (1 - damping) * g_new + damping * g;
      }
      residual = std::max((gt_new - gt).cwiseAbs().maxCoeff(),
                          (g_new - g).cwiseAbs().maxCoeff());
      gt = std::move(gt_new);
      g = std::move(g_new);
      if (residual <= cfg.tol)
        return VarianceProfileState<T>{x, std::move(gt), std::move(g), it,
                                       residual};
    }
    throw NoConvergence(cfg.max_iters, static_cast<double>(residual));
  });
}

// Expands a reduced common-basis state into the full representation, for
// consumers that need the explicit matrices.
template <class T>
DEState<T> expand_reduced(const ChannelModel<T>& model,
                          const InputCovarianceSet<T>& q,
                          const ReducedState<T>& s) {
  const Dimensions& d = model.dims;
  const detail::QWeights<T> qw = detail::make_qweights(model, q);
  DEState<T> out;
  out.x = s.x;
  out.iters = s.iters;
  out.residual = s.residual;
  const Index n = d.N();
  out.G_B = CMat<T>::Zero(n, n);
  out.Phi_tilde = CMat<T>::Zero(n, n);
  for (Index l = 0; l < d.L; ++l) {
    const CMat<T>& u = model.links[l][0].U;
    const RVec<T>& lam = s.lambda[l];
    out.G_B.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]) =
        herm(CMat<T>(u *
                     (lam * (-1 / s.x))
                         .template cast<std::complex<T>>()
                         .asDiagonal() *
                     u.adjoint()));
    out.Phi_tilde.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]) =
        herm(CMat<T>(u *
                     lam.cwiseInverse()
                         .template cast<std::complex<T>>()
                         .asDiagonal() *
                     u.adjoint()));
  }
  out.G_k = s.G_k;
  out.Phi_k.resize(d.K);
  for (Index k = 0; k < d.K; ++k) {
    CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
    for (Index l = 0; l < d.L; ++l) {
      const LinkStatistics<T>& s_lk = model.links[l][k];
      const CMat<T> gb_l =
          out.G_B.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
      const RVec<T> diag = detail::pi_diag(s_lk, gb_l);
      ek += s_lk.V * diag.template cast<std::complex<T>>().asDiagonal() *
            s_lk.V.adjoint();
    }
    if (!qw.identity[k]) ek = (qw.qh[k] * ek * qw.qh[k]).eval();
    out.Phi_k[k] = herm(CMat<T>(CMat<T>::Identity(d.M_k[k], d.M_k[k]) -
                                qw.w[k] * ek));
  }
  return out;
}

}  // namespace demac
