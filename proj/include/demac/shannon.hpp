#pragma once

// Shannon-transform evaluation on top of the fixed-point solvers.  With the
// converged factors at z = -x, the ergodic mutual information in nats is
//
//   I = log det( Phi_tilde + x^{-1} A inv(Phi) A^H )
//     + sum_k log det( Phi_k )
//     - x sum_k tr( eta_Q_k(G_B) G_k )                     (receive-side form)
//
// or equivalently, swapping the roles of the two sides,
//
//   I = log det( Phi + x^{-1} A^H inv(Phi_tilde) A )
//     + log det( Phi_tilde )
//     - x sum_k tr( eta_Q_tilde_k(G_k) G_B )              (transmit-side form)
//
// where A stacks sqrt(P_k/M_k) Hbar_lk Q_k^{1/2}.  Both forms are evaluated
// with independently computed trace terms; their gap is recorded as a
// consistency diagnostic.  The per-receive-antenna Shannon transform is
// V = I / N; it satisfies dV/dx = -1/x - G(-x) with G the averaged resolvent
// trace, which derivative_check verifies by central differences.

#include <cmath>
#include <complex>
#include <limits>
#include <utility>
#include <vector>

#include "channel.hpp"
#include "core.hpp"
#include "solve.hpp"

namespace demac {

enum class FormUsed { general, reduced_common_u, reduced_l1, structured_l1 };

inline const char* form_name(FormUsed f) {
  switch (f) {
    case FormUsed::general: return "general";
    case FormUsed::reduced_common_u: return "reduced";
    case FormUsed::reduced_l1: return "l1";
    case FormUsed::structured_l1: return "structured";
  }
  return "unknown";
}

template <class T>
struct DEReport {
  T x = 0;
  T V = 0;                   // Shannon transform, nats per receive antenna
  T I = 0;                   // mutual information, nats (I = N * V)
  std::complex<T> G{0, 0};   // averaged resolvent trace at z = -x
  long iters = 0;
  T residual = 0;
  FormUsed form = FormUsed::general;
  T form_gap = 0;            // |receive-side form - transmit-side form|
};

namespace detail {

// Both closed forms evaluated from a converged state; returns the
// receive-side value and the absolute gap to the transmit-side value.
template <class T>
std::pair<T, T> shannon_forms(const ChannelModel<T>& model,
                              const InputCovarianceSet<T>& q,
                              const DEState<T>& s) {
  const Dimensions& d = model.dims;
  const T x = s.x;
  const QWeights<T> qw = make_qweights(model, q);
  const CMat<T> a = weighted_mean(model, qw);

  // receive-side form
  std::vector<CMat<T>> phi_inv(d.K);
  for (Index k = 0; k < d.K; ++k)
    phi_inv[k] = inverse_checked(s.Phi_k[k], "transmit correlation factor");
  CMat<T> bt = s.Phi_tilde;
  for (Index k = 0; k < d.K; ++k) {
    const auto ak = a.middleCols(d.tx_offset(k), d.M_k[k]);
    bt += (ak * phi_inv[k] * ak.adjoint()) / x;
  }
  T raw_rx = logdet_hermitian_pd(bt, "receive-side log-det");
  for (Index k = 0; k < d.K; ++k)
    raw_rx += logdet_hermitian_pd(s.Phi_k[k], "transmit factor log-det");
  for (Index k = 0; k < d.K; ++k) {
    CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
    for (Index l = 0; l < d.L; ++l) {
      const LinkStatistics<T>& lk = model.links[l][k];
      const CMat<T> gb_l =
          s.G_B.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
      const RVec<T> diag = pi_diag(lk, gb_l);
      ek += lk.V * diag.template cast<std::complex<T>>().asDiagonal() *
            lk.V.adjoint();
    }
    if (!qw.identity[k]) ek = (qw.qh[k] * ek * qw.qh[k]).eval();
    raw_rx -= x * qw.w[k] * std::real((ek * s.G_k[k]).trace());
  }

  // transmit-side form
  const CMat<T> phi_tilde_inv =
      inverse_checked(s.Phi_tilde, "receive correlation factor");
  CMat<T> bm = (a.adjoint() * phi_tilde_inv * a) / x;
  for (Index k = 0; k < d.K; ++k)
    bm.block(d.tx_offset(k), d.tx_offset(k), d.M_k[k], d.M_k[k]) +=
        s.Phi_k[k];
  T raw_tx = logdet_hermitian_pd(bm, "transmit-side log-det");
  raw_tx += logdet_hermitian_pd(s.Phi_tilde, "receive factor log-det");
  for (Index k = 0; k < d.K; ++k) {
    const CMat<T> tk = weighted_block(qw, k, s.G_k[k]);
    T tr = 0;
    for (Index l = 0; l < d.L; ++l) {
      const LinkStatistics<T>& lk = model.links[l][k];
      const CMat<T> gb_l =
          s.G_B.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
      tr += pi_tilde_diag(lk, tk).dot(diag_conjugation(lk.U, gb_l));
    }
    raw_tx -= x * tr;
  }

  return {raw_rx, std::abs(raw_rx - raw_tx)};
}

template <class T>
DEReport<T> report_from_state(const ChannelModel<T>& model,
                              const InputCovarianceSet<T>& q,
                              const DEState<T>& s, FormUsed form) {
  const auto [raw, gap] = shannon_forms(model, q, s);
  DEReport<T> out;
  out.x = s.x;
  out.I = raw;
  out.V = raw / T(model.dims.N());
  out.G = cauchy_transform(s);
  out.iters = s.iters;
  out.residual = s.residual;
  out.form = form;
  out.form_gap = gap;
  return out;
}

}  // namespace detail

// Solve the general fixed point and evaluate both closed forms.
template <class T>
DEReport<T> shannon_transform(const ChannelModel<T>& model,
                              const InputCovarianceSet<T>& q, T x,
                              const SolverConfig<T>& cfg = SolverConfig<T>{}) {
  const DEState<T> s = solve_fixed_point(model, q, x, cfg);
  return detail::report_from_state(model, q, s, FormUsed::general);
}

// Evaluation only, for callers that already hold a converged state.
template <class T>
DEReport<T> shannon_from_state(const ChannelModel<T>& model,
                               const InputCovarianceSet<T>& q,
                               const DEState<T>& s,
                               FormUsed form = FormUsed::general) {
  return detail::report_from_state(model, q, s, form);
}

// Reduced evaluation for common-receive-basis states: with lambda the
// basis-aligned receive diagonals (in (0,1]) the mutual information is
//
//   I = sum_k log det( I - eta_Q_k(G_B) ) - sum_li log lambda_li
//     + sum_li (lambda_li - 1),
//
// requiring no N x N factorization.
template <class T>
DEReport<T> shannon_from_reduced(const ChannelModel<T>& model,
                                 const InputCovarianceSet<T>& q,
                                 const ReducedState<T>& s,
                                 FormUsed form = FormUsed::reduced_common_u) {
  const Dimensions& d = model.dims;
  const detail::QWeights<T> qw = detail::make_qweights(model, q);
  T raw = 0;
  for (Index l = 0; l < d.L; ++l)
    raw += (s.lambda[l].array() - 1).sum() - s.lambda[l].array().log().sum();
  for (Index k = 0; k < d.K; ++k) {
    CMat<T> ek = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
    for (Index l = 0; l < d.L; ++l) {
      const LinkStatistics<T>& lk = model.links[l][k];
      const RVec<T> diag =
          lk.G.transpose() * s.lambda[l] * (-1 / s.x);  // Pi_lk(G_B) diagonal
      ek += lk.V * diag.template cast<std::complex<T>>().asDiagonal() *
            lk.V.adjoint();
    }
    if (!qw.identity[k]) ek = (qw.qh[k] * ek * qw.qh[k]).eval();
    const CMat<T> phi_k = herm(
        CMat<T>(CMat<T>::Identity(d.M_k[k], d.M_k[k]) - qw.w[k] * ek));
    raw += logdet_hermitian_pd(phi_k, "transmit factor log-det");
  }
  DEReport<T> out;
  out.x = s.x;
  out.I = raw;
  out.V = raw / T(d.N());
  out.G = cauchy_transform(s);
  out.iters = s.iters;
  out.residual = s.residual;
  out.form = form;
  out.form_gap = 0;
  return out;
}

// Solve with the common-basis reduction and evaluate the reduced form.
template <class T>
DEReport<T> shannon_transform_reduced(const ChannelModel<T>& model,
                                      const InputCovarianceSet<T>& q, T x,
                                      const SolverConfig<T>& cfg =
                                          SolverConfig<T>{}) {
  const ReducedState<T> s = solve_reduced_common_u(model, q, x, cfg);
  return shannon_from_reduced(model, q, s, FormUsed::reduced_common_u);
}

// Central-difference verification of dV/dx = -1/x - G(-x); side solves warm
// start from the center state.
template <class T>
struct DerivativeCheck {
  T lhs = 0;      // (V(x+h) - V(x-h)) / (2h)
  T rhs = 0;      // -1/x - Re G(-x)
  T rel_err = 0;
};

template <class T>
DerivativeCheck<T> derivative_check(const ChannelModel<T>& model,
                                    const InputCovarianceSet<T>& q, T x, T h,
                                    const SolverConfig<T>& cfg =
                                        SolverConfig<T>{}) {
  if (!(h > T(0)) || !(x - h > T(0)))
    throw InvalidArgument("derivative step must satisfy 0 < h < x");
  const DEState<T> center = solve_fixed_point(model, q, x, cfg);
  const DEState<T> lo =
      solve_fixed_point(model, q, x - h, cfg, center.G_B, center.G_k);
  const DEState<T> hi =
      solve_fixed_point(model, q, x + h, cfg, center.G_B, center.G_k);
  const T v_lo = detail::shannon_forms(model, q, lo).first / T(model.dims.N());
  const T v_hi = detail::shannon_forms(model, q, hi).first / T(model.dims.N());
  DerivativeCheck<T> out;
  out.lhs = (v_hi - v_lo) / (2 * h);
  out.rhs = -1 / x - std::real(cauchy_transform(center));
  out.rel_err = std::abs(out.lhs - out.rhs) /
                std::max(std::abs(out.rhs), std::numeric_limits<T>::min());
  return out;
}

}  // namespace demac
