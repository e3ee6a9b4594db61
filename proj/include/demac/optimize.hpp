#pragma once

// Sum-capacity input covariance optimization.  At a fixed point of the
// deterministic equivalent, the mutual information seen by user k is (up to
// terms that do not depend on Q_k) log det(I + Gamma_k Q_k), where
//
//   Gamma    = blkdiag_k( -(P_k/M_k) eta_k(G_B) ) + x^{-1} S^H inv(Phi_tilde) S,
//   Gamma_k  = [ (I_M + Gamma Q_{\k})^{-1} Gamma ]_kk,
//
// with S the power-weighted stacked mean and Q_{\k} the block-diagonal
// covariance set with user k's block zeroed.  Each outer sweep refreshes the
// fixed point, then waterfills every user against its Gamma_k in sequence;
// the iteration stops when the objective moves by less than outer_tol (and,
// when q_tol > 0, the covariances have also stopped moving).

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "channel.hpp"
#include "core.hpp"
#include "shannon.hpp"
#include "solve.hpp"

namespace demac {

template <class T>
struct OptConfig {
  SolverConfig<T> inner;     // fixed-point solver settings per evaluation
  T outer_tol = T(1e-8);     // stop when |V_t - V_{t-1}| drops below this
  // The objective is flat near the optimum, so an objective-based stop can
  // leave the covariances short of stationarity.  A positive q_tol
  // additionally requires the largest entrywise covariance change per sweep
  // to fall below it (0 disables the extra requirement).
  T q_tol = T(0);
  long max_outer = 100;
};

template <class T>
struct WaterfillAllocation {
  CMat<T> Q;           // waterfilled covariance, tr(Q) = budget
  RVec<T> gamma_eigs;  // eigenvalues of the effective channel, descending
  RVec<T> p;           // per-mode powers in the same order
  T mu = 0;            // water level (0 when the channel is void)
};

// Classic waterfilling against a Hermitian PSD effective channel: maximizes
// log det(I + Gamma Q) subject to tr(Q) <= budget, Q PSD.  The water level is
// computed exactly from the sorted eigenvalues (no bisection).
template <class T>
WaterfillAllocation<T> waterfill_allocation(const CMat<T>& gamma, T budget) {
  if (gamma.rows() != gamma.cols())
    throw DimensionMismatch("waterfill: effective channel must be square");
  if (!(budget > T(0)))
    throw InvalidArgument("waterfill: power budget must be positive");
  const Index m = gamma.rows();
  const T scale = std::max(T(1), gamma.norm());
  if (anti_hermitian_norm(gamma) > T(1e-8) * scale)
    throw NotPSD("waterfill: effective channel is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(gamma));
  if (es.info() != Eigen::Success)
    throw FactorizationFailure("waterfill: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < -T(1e-12) * scale)
    throw NotPSD("waterfill: effective channel has a negative eigenvalue");

  WaterfillAllocation<T> out;
  out.gamma_eigs.resize(m);
  CMat<T> w(m, m);
  for (Index i = 0; i < m; ++i) {  // flip to descending order
    out.gamma_eigs(i) = std::max(es.eigenvalues()(m - 1 - i), T(0));
    w.col(i) = es.eigenvectors().col(m - 1 - i);
  }
  fix_column_phases(w);

  Index active = 0;
  while (active < m && out.gamma_eigs(active) > T(0)) ++active;
  if (active == 0) {
    // void channel: any split is optimal, return the uniform one
    out.Q = (budget / T(m)) * CMat<T>::Identity(m, m);
    out.p = RVec<T>::Constant(m, budget / T(m));
    out.mu = 0;
    return out;
  }

  // Largest mode count whose water level still covers its inverse gain.
  Index best_m = 1;
  T best_mu = budget + 1 / out.gamma_eigs(0);
  T inv_sum = 1 / out.gamma_eigs(0);
  for (Index c = 2; c <= active; ++c) {
    inv_sum += 1 / out.gamma_eigs(c - 1);
    const T mu = (budget + inv_sum) / T(c);
    if (mu > 1 / out.gamma_eigs(c - 1)) {
      best_m = c;
      best_mu = mu;
    }
  }
  out.mu = best_mu;
  out.p = RVec<T>::Zero(m);
  for (Index i = 0; i < best_m; ++i)
    out.p(i) = std::max(out.mu - 1 / out.gamma_eigs(i), T(0));
  out.Q = herm(CMat<T>(
      w * out.p.template cast<std::complex<T>>().asDiagonal() * w.adjoint()));
  return out;
}

template <class T>
CMat<T> waterfill(const CMat<T>& gamma, T budget) {
  return waterfill_allocation(gamma, budget).Q;
}

// Effective-channel matrix of the whole user population at a converged state.
template <class T>
CMat<T> gamma_matrix(const ChannelModel<T>& model,
                     const InputCovarianceSet<T>& q, const DEState<T>& s) {
  check_structure(model);
  const Dimensions& d = model.dims;
  (void)q;  // Gamma depends on Q only through the converged state
  CMat<T> out = CMat<T>::Zero(d.M(), d.M());
  for (Index k = 0; k < d.K; ++k) {
    const T w = model.P[k] / T(d.M_k[k]);
    CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
    for (Index l = 0; l < d.L; ++l) {
      const LinkStatistics<T>& lk = model.links[l][k];
      const CMat<T> gb_l =
          s.G_B.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
      const RVec<T> diag = detail::pi_diag(lk, gb_l);
      ek += lk.V * diag.template cast<std::complex<T>>().asDiagonal() *
            lk.V.adjoint();
    }
    out.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]) = -w * ek;
  }

  // power-weighted stacked mean (no covariance factor here)
  CMat<T> sbar = CMat<T>::Zero(d.N(), d.M());
  for (Index k = 0; k < d.K; ++k) {
    const T sw = std::sqrt(model.P[k] / T(d.M_k[k]));
    for (Index l = 0; l < d.L; ++l)
      sbar.block(d.rx_offset(l), d.tx_offset(k), d.N_l[l], d.M_k[k]) =
          sw * model.links[l][k].Hbar;
  }
  if (sbar.norm() > T(0)) {
    const CMat<T> phi_tilde_inv =
        inverse_checked(s.Phi_tilde, "receive correlation factor");
    out += (sbar.adjoint() * phi_tilde_inv * sbar) / s.x;
  }
  return herm(out);
}

// Per-user effective channel with everyone else's covariance in place:
// [ (I + Gamma Q_{\k})^{-1} Gamma ]_kk, Hermitian PSD.
template <class T>
CMat<T> gamma_user_matrix(const Dimensions& d, const CMat<T>& gamma,
                          const InputCovarianceSet<T>& q, Index k) {
  const Index m = d.M();
  CMat<T> q_others = CMat<T>::Zero(m, m);
  for (Index j = 0; j < d.K; ++j) {
    if (j == k) continue;
    q_others.block(d.tx_offset(j), d.tx_offset(j), d.M_k[j], d.M_k[j]) =
        q.Q[j];
  }
  const CMat<T> b = CMat<T>::Identity(m, m) + gamma * q_others;
  Eigen::PartialPivLU<CMat<T>> lu(b);
  if (!(lu.rcond() > T(1e-14)))
    throw SingularIteration("interference factor is numerically singular");
  const CMat<T> x = lu.solve(gamma);
  return herm(CMat<T>(x.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k],
                               d.M_k[k])));
}

template <class T>
struct OptResult {
  InputCovarianceSet<T> Q_star;
  T V_star = 0;                 // Shannon transform at Q_star, nats/antenna
  std::vector<T> trajectory;    // V after each outer sweep, starting at Q = I
  long outer_iters = 0;
  bool converged = false;
};

// Block-coordinate ascent on the input covariances.  Keeps the best iterate
// seen; a solver failure mid-run returns that best iterate flagged
// converged = false rather than throwing.
template <class T>
OptResult<T> optimize(const ChannelModel<T>& model, T x,
                      const OptConfig<T>& cfg = OptConfig<T>{}) {
  check_structure(model);
  const Dimensions& d = model.dims;
  OptResult<T> out;
  InputCovarianceSet<T> q = InputCovarianceSet<T>::identity(d);

  DEState<T> state = solve_fixed_point(model, q, x, cfg.inner);
  T v_prev = shannon_from_state(model, q, state).V;
  out.trajectory.push_back(v_prev);
  out.Q_star = q;
  out.V_star = v_prev;

  for (long t = 1; t <= cfg.max_outer; ++t) {
    out.outer_iters = t;
    const CMat<T> gamma = gamma_matrix(model, q, state);
    T dq = 0;
    for (Index k = 0; k < d.K; ++k) {
      const CMat<T> gamma_k = gamma_user_matrix(d, gamma, q, k);
      CMat<T> next = waterfill_allocation(gamma_k, T(d.M_k[k])).Q;
      dq = std::max(dq, (next - q.Q[k]).cwiseAbs().maxCoeff());
      q.Q[k] = std::move(next);
    }
    try {
      state = solve_fixed_point(model, q, x, cfg.inner);
    } catch (const Error&) {
      out.converged = false;
      return out;
    }
    const T v = shannon_from_state(model, q, state).V;
    out.trajectory.push_back(v);
    if (v > out.V_star) {
      out.V_star = v;
      out.Q_star = q;
    }
    if (std::abs(v - v_prev) <= cfg.outer_tol &&
        (cfg.q_tol <= T(0) || dq <= cfg.q_tol)) {
      out.converged = true;
      break;
    }
    v_prev = v;
  }
  return out;
}

}  // namespace demac
