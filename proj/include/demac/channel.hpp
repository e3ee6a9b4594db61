#pragma once

// Statistical channel description for a MIMO multiple-access channel with L
// distributed receive antenna sets and K users, under jointly correlated
// Rician fading.  Each link (l, k) is described by
//
//   H_lk = Hbar_lk + U_lk (sqrt(G_lk) .* W_lk) V_lk^H,   W_lk ~ iid CN(0,1),
//
// where U_lk, V_lk are the receive/transmit eigenbases and the real
// non-negative coupling matrix G_lk holds the variances of the independent
// entries in the eigendomain.  Kronecker-separable and variance-profile
// models are special cases produced by the factory helpers below.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace demac {

template <class T>
struct LinkStatistics {
  CMat<T> Hbar;  // N_l x M_k deterministic (line-of-sight) component
  CMat<T> U;     // N_l x N_l receive eigenbasis, unitary
  CMat<T> V;     // M_k x M_k transmit eigenbasis, unitary
  RMat<T> G;     // N_l x M_k eigendomain variance coupling, entrywise >= 0
};

template <class T>
struct ChannelModel {
  Dimensions dims;
  // links[l][k] describes the channel between receive set l and user k.
  std::vector<std::vector<LinkStatistics<T>>> links;
  // Per-user transmit power budgets; the effective input covariance of user k
  // is (P_k / M_k) Q_k with tr(Q_k) <= M_k.
  std::vector<T> P;
};

// Per-user input covariance shapes Q_k (M_k x M_k, PSD, tr(Q_k) <= M_k).
template <class T>
struct InputCovarianceSet {
  std::vector<CMat<T>> Q;

  static InputCovarianceSet identity(const Dimensions& dims) {
    InputCovarianceSet out;
    out.Q.reserve(dims.K);
    for (Index k = 0; k < dims.K; ++k)
      out.Q.push_back(CMat<T>::Identity(dims.M_k[k], dims.M_k[k]));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Structure checks

template <class T>
void check_structure(const ChannelModel<T>& model) {
  model.dims.check();
  const Dimensions& d = model.dims;
  if (static_cast<Index>(model.links.size()) != d.L)
    throw DimensionMismatch("links grid has wrong number of receive sets");
  for (Index l = 0; l < d.L; ++l) {
    if (static_cast<Index>(model.links[l].size()) != d.K)
      throw DimensionMismatch("links grid has wrong number of users");
    for (Index k = 0; k < d.K; ++k) {
      const LinkStatistics<T>& s = model.links[l][k];
      const Index n = d.N_l[l], m = d.M_k[k];
      if (s.Hbar.rows() != n || s.Hbar.cols() != m)
        throw DimensionMismatch("Hbar(" + std::to_string(l) + "," +
                                std::to_string(k) + ") has wrong shape");
      if (s.U.rows() != n || s.U.cols() != n)
        throw DimensionMismatch("U(" + std::to_string(l) + "," +
                                std::to_string(k) + ") has wrong shape");
      if (s.V.rows() != m || s.V.cols() != m)
        throw DimensionMismatch("V(" + std::to_string(l) + "," +
                                std::to_string(k) + ") has wrong shape");
      if (s.G.rows() != n || s.G.cols() != m)
        throw DimensionMismatch("G(" + std::to_string(l) + "," +
                                std::to_string(k) + ") has wrong shape");
    }
  }
  if (static_cast<Index>(model.P.size()) != d.K)
    throw DimensionMismatch("power vector has wrong number of users");
}

template <class T>
void check_covariances(const Dimensions& dims,
                       const InputCovarianceSet<T>& q) {
  if (static_cast<Index>(q.Q.size()) != dims.K)
    throw DimensionMismatch("covariance set has wrong number of users");
  for (Index k = 0; k < dims.K; ++k) {
    const Index m = dims.M_k[k];
    if (q.Q[k].rows() != m || q.Q[k].cols() != m)
      throw DimensionMismatch("Q_" + std::to_string(k) + " has wrong shape");
    const T scale = std::max(T(1), q.Q[k].norm());
    if (anti_hermitian_norm(q.Q[k]) > T(1e-8) * scale)
      throw NotPSD("Q_" + std::to_string(k) + " is not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(q.Q[k]),
                                              Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -T(1e-12) * scale)
      throw NotPSD("Q_" + std::to_string(k) + " has a negative eigenvalue");
    if (std::real(q.Q[k].trace()) > T(m) + T(1e-9))
      throw InvalidArgument("tr(Q_" + std::to_string(k) +
                            ") exceeds the antenna budget");
  }
}

// ---------------------------------------------------------------------------
// Energy accounting and normalization.  The convention is
// E tr(H_k H_k^H) = N M_k / M for every user k, where H_k stacks the L
// receive-set blocks of user k.

template <class T>
T user_energy(const ChannelModel<T>& model, Index k) {
  T e = 0;
  for (Index l = 0; l < model.dims.L; ++l) {
    const LinkStatistics<T>& s = model.links[l][k];
    e += s.Hbar.squaredNorm() + s.G.sum();
  }
  return e;
}

// Returns a copy whose per-user energies match the convention exactly; Hbar
// scales by c_k and G by c_k^2 so the line-of-sight/scatter split is kept.
template <class T>
ChannelModel<T> normalize(const ChannelModel<T>& model) {
  check_structure(model);
  ChannelModel<T> out = model;
  const Dimensions& d = model.dims;
  const T n = T(d.N()), m = T(d.M());
  for (Index k = 0; k < d.K; ++k) {
    const T target = n * T(d.M_k[k]) / m;
    const T energy = user_energy(model, k);
    if (!(energy > target * T(1e-30)))
      throw ZeroEnergyUser("user " + std::to_string(k) +
                           " has numerically zero channel energy");
    const T c = std::sqrt(target / energy);
    for (Index l = 0; l < d.L; ++l) {
      out.links[l][k].Hbar *= c;
      out.links[l][k].G *= c * c;
    }
  }
  return out;
}

// Collects human-readable violations; empty means the model is well formed.
template <class T>
std::vector<std::string> validate(const ChannelModel<T>& model) {
  std::vector<std::string> out;
  try {
    check_structure(model);
  } catch (const Error& e) {
    out.emplace_back(e.what());
    return out;  // no point checking entries with a broken layout
  }
  const Dimensions& d = model.dims;
  for (Index k = 0; k < d.K; ++k)
    if (!(model.P[k] > T(0)))
      out.push_back("P_" + std::to_string(k) + " must be positive");
  for (Index l = 0; l < d.L; ++l) {
    for (Index k = 0; k < d.K; ++k) {
      const LinkStatistics<T>& s = model.links[l][k];
      const std::string tag =
          "(" + std::to_string(l) + "," + std::to_string(k) + ")";
      const CMat<T> iu = s.U.adjoint() * s.U -
                         CMat<T>::Identity(s.U.rows(), s.U.cols());
      if (iu.cwiseAbs().maxCoeff() > T(1e-8))
        out.push_back("U" + tag + " is not unitary");
      const CMat<T> iv = s.V.adjoint() * s.V -
                         CMat<T>::Identity(s.V.rows(), s.V.cols());
      if (iv.cwiseAbs().maxCoeff() > T(1e-8))
        out.push_back("V" + tag + " is not unitary");
      if (s.G.minCoeff() < -T(1e-12))
        out.push_back("G" + tag + " has a negative entry");
    }
  }
  const T n = T(d.N()), m = T(d.M());
  for (Index k = 0; k < d.K; ++k) {
    const T target = n * T(d.M_k[k]) / m;
    const T energy = user_energy(model, k);
    if (std::abs(energy - target) > T(1e-6) * target)
      out.push_back("user " + std::to_string(k) + " energy " +
                    std::to_string(energy) + " deviates from " +
                    std::to_string(target));
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-sided correlation maps.  With C an M_k x M_k Hermitian matrix and Ct an
// N x N Hermitian matrix,
//
//   eta_tilde_k(C) = E{ Htil_k C Htil_k^H }  (N x N, block diagonal over l),
//   eta_k(Ct)      = E{ Htil_k^H Ct Htil_k } (M_k x M_k),
//
// where Htil_k stacks the scatter parts of user k.  In the eigendomain these
// are diagonal scalings by the coupling matrix, which is what the helpers
// below exploit.

namespace detail {

// Real diagonal of B^H C B for unitary-ish B and Hermitian C, computed
// column-wise without forming the full product.
template <class T>
RVec<T> diag_conjugation(const CMat<T>& b, const CMat<T>& c) {
  return (b.conjugate().cwiseProduct(c * b)).colwise().sum().real().transpose();
}

// diag of Pi_tilde_lk(C) = E{ Htil_lk C Htil_lk^H } in the U_lk basis:
// entry i is sum_j G_lk(i,j) [V^H C V]_jj.
template <class T>
RVec<T> pi_tilde_diag(const LinkStatistics<T>& s, const CMat<T>& c) {
  return s.G * diag_conjugation(s.V, c);
}

// diag of Pi_lk(Ct_l) = E{ Htil_lk^H Ct_l Htil_lk } in the V_lk basis:
// entry j is sum_i G_lk(i,j) [U^H Ct_l U]_ii.
template <class T>
RVec<T> pi_diag(const LinkStatistics<T>& s, const CMat<T>& ct_l) {
  return s.G.transpose() * diag_conjugation(s.U, ct_l);
}

}  // namespace detail

template <class T>
CMat<T> eta_tilde_k(const ChannelModel<T>& model, Index k, const CMat<T>& c) {
  const Dimensions& d = model.dims;
  if (c.rows() != d.M_k[k] || c.cols() != d.M_k[k])
    throw DimensionMismatch("eta_tilde_k: argument has wrong shape");
  CMat<T> out = CMat<T>::Zero(d.N(), d.N());
  for (Index l = 0; l < d.L; ++l) {
    const LinkStatistics<T>& s = model.links[l][k];
    const RVec<T> diag = detail::pi_tilde_diag(s, c);
    out.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]) =
        s.U * diag.template cast<std::complex<T>>().asDiagonal() *
        s.U.adjoint();
  }
  return out;
}

template <class T>
CMat<T> eta_k(const ChannelModel<T>& model, Index k, const CMat<T>& ct) {
  const Dimensions& d = model.dims;
  if (ct.rows() != d.N() || ct.cols() != d.N())
    throw DimensionMismatch("eta_k: argument has wrong shape");
  CMat<T> out = CMat<T>::Zero(d.M_k[k], d.M_k[k]);
  for (Index l = 0; l < d.L; ++l) {
    const LinkStatistics<T>& s = model.links[l][k];
    const CMat<T> ct_l =
        ct.block(d.rx_offset(l), d.rx_offset(l), d.N_l[l], d.N_l[l]);
    const RVec<T> diag = detail::pi_diag(s, ct_l);
    out += s.V * diag.template cast<std::complex<T>>().asDiagonal() *
           s.V.adjoint();
  }
  return out;
}

// Power-and-covariance weighted variants: with Qh = Q_k^{1/2},
//   eta_Q_tilde_k(C)  = (P_k/M_k) eta_tilde_k(Qh C Qh),
//   eta_Q_k(Ct)       = (P_k/M_k) Qh eta_k(Ct) Qh.

template <class T>
CMat<T> eta_Q_tilde_k(const ChannelModel<T>& model, Index k, const CMat<T>& qk,
                      const CMat<T>& c) {
  const T w = model.P[k] / T(model.dims.M_k[k]);
  const CMat<T> qh = psd_sqrt(qk, "eta_Q_tilde_k");
  return w * eta_tilde_k(model, k, CMat<T>(qh * c * qh));
}

template <class T>
CMat<T> eta_Q_k(const ChannelModel<T>& model, Index k, const CMat<T>& qk,
                const CMat<T>& ct) {
  const T w = model.P[k] / T(model.dims.M_k[k]);
  const CMat<T> qh = psd_sqrt(qk, "eta_Q_k");
  return w * (qh * eta_k(model, k, ct) * qh);
}

// Stacked N x M mean matrix (unweighted; solvers apply sqrt(P_k/M_k)).
template <class T>
CMat<T> assemble_mean(const ChannelModel<T>& model) {
  const Dimensions& d = model.dims;
  CMat<T> out(d.N(), d.M());
  for (Index l = 0; l < d.L; ++l)
    for (Index k = 0; k < d.K; ++k)
      out.block(d.rx_offset(l), d.tx_offset(k), d.N_l[l], d.M_k[k]) =
          model.links[l][k].Hbar;
  return out;
}

// True when, for every receive set, all users share one receive eigenbasis
// (entrywise, within tol); required by the reduced solvers.
template <class T>
bool has_common_receive_basis(const ChannelModel<T>& model, T tol = T(1e-10)) {
  for (Index l = 0; l < model.dims.L; ++l)
    for (Index k = 1; k < model.dims.K; ++k)
      if ((model.links[l][k].U - model.links[l][0].U).cwiseAbs().maxCoeff() >
          tol)
        return false;
  return true;
}

template <class T>
bool has_zero_mean(const ChannelModel<T>& model) {
  for (Index l = 0; l < model.dims.L; ++l)
    for (Index k = 0; k < model.dims.K; ++k)
      if (model.links[l][k].Hbar.cwiseAbs().maxCoeff() != T(0)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Factories

// Kronecker-separable scatter: E{Htil R_t Htil^H} = tr(R_t T) R and
// E{Htil^H R_r Htil} = tr(R_r R) T per link.  U/V are the eigenbases of the
// receive/transmit correlation matrices and the coupling is the outer product
// of their eigenvalues (descending order, deterministic phases).
template <class T>
ChannelModel<T> from_kronecker(const Dimensions& dims,
                               const std::vector<std::vector<CMat<T>>>& r,
                               const std::vector<std::vector<CMat<T>>>& t,
                               const std::vector<T>& p) {
  dims.check();
  if (static_cast<Index>(r.size()) != dims.L ||
      static_cast<Index>(t.size()) != dims.L)
    throw DimensionMismatch("from_kronecker: correlation grids need L rows");
  ChannelModel<T> out;
  out.dims = dims;
  out.P = p;
  out.links.resize(dims.L);
  for (Index l = 0; l < dims.L; ++l) {
    if (static_cast<Index>(r[l].size()) != dims.K ||
        static_cast<Index>(t[l].size()) != dims.K)
      throw DimensionMismatch(
          "from_kronecker: correlation grids need K columns");
    out.links[l].resize(dims.K);
    for (Index k = 0; k < dims.K; ++k) {
      const Index n = dims.N_l[l], m = dims.M_k[k];
      if (r[l][k].rows() != n || r[l][k].cols() != n ||
          t[l][k].rows() != m || t[l][k].cols() != m)
        throw DimensionMismatch("from_kronecker: correlation matrix shape");
      auto decompose = [](const CMat<T>& a, const char* what, CMat<T>& basis,
                          RVec<T>& lam) {
        const T scale = std::max(T(1), a.norm());
        if (anti_hermitian_norm(a) > T(1e-8) * scale)
          throw NotPSD(std::string(what) + ": matrix is not Hermitian");
        Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(a));
        if (es.info() != Eigen::Success)
          throw FactorizationFailure(std::string(what) +
                                     ": eigendecomposition failed");
        if (es.eigenvalues().minCoeff() < -T(1e-12) * scale)
          throw NotPSD(std::string(what) + ": negative eigenvalue");
        // flip to descending order and pin column phases
        const Index sz = es.eigenvalues().size();
        lam.resize(sz);
        basis.resize(sz, sz);
        for (Index i = 0; i < sz; ++i) {
          lam(i) = std::max(es.eigenvalues()(sz - 1 - i), T(0));
          basis.col(i) = es.eigenvectors().col(sz - 1 - i);
        }
        fix_column_phases(basis);
      };
      LinkStatistics<T>& s = out.links[l][k];
      RVec<T> lr, lt;
      decompose(r[l][k], "from_kronecker receive correlation", s.U, lr);
      decompose(t[l][k], "from_kronecker transmit correlation", s.V, lt);
      s.G = lr * lt.transpose();
      s.Hbar = CMat<T>::Zero(n, m);
    }
  }
  check_structure(out);
  return out;
}

// Independent-entry scatter with per-entry variances sigma2(i,j)/N (so an
// all-ones profile on a square channel is iid CN(0, 1/N)), plus an arbitrary
// deterministic mean.  Single receive set, single user, identity eigenbases.
template <class T>
ChannelModel<T> from_variance_profile(const RMat<T>& sigma2,
                                      const CMat<T>& hbar) {
  if (sigma2.rows() != hbar.rows() || sigma2.cols() != hbar.cols())
    throw DimensionMismatch("from_variance_profile: shape mismatch");
  if (sigma2.minCoeff() < T(0))
    throw NotPSD("from_variance_profile: negative variance");
  const Index n = sigma2.rows(), m = sigma2.cols();
  ChannelModel<T> out;
  out.dims = Dimensions{1, 1, {n}, {m}};
  out.P = {T(m)};
  out.links.resize(1);
  out.links[0].resize(1);
  LinkStatistics<T>& s = out.links[0][0];
  s.Hbar = hbar;
  s.U = CMat<T>::Identity(n, n);
  s.V = CMat<T>::Identity(m, m);
  s.G = sigma2 / T(n);
  return out;
}

// Haar-distributed unitary matrix from a QR factorization of an iid complex
// Gaussian matrix, with the R-diagonal phase fix that makes the draw exact
// and deterministic for a given substream.
template <class T>
CMat<T> random_unitary(Index n, Substream& rng) {
  CMat<T> a(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i)
      a(i, j) = std::complex<T>(rng.cnormal());
  Eigen::HouseholderQR<CMat<T>> qr(a);
  CMat<T> q = qr.householderQ() * CMat<T>::Identity(n, n);
  const CMat<T> r = qr.matrixQR();
  for (Index j = 0; j < n; ++j) {
    const std::complex<T> d = r(j, j);
    const T m = std::abs(d);
    if (m > T(0)) q.col(j) *= d / m;
  }
  return q;
}

struct RandomModelOptions {
  bool rician = false;        // add a Gaussian line-of-sight component
  double rician_factor = 1;   // LOS-to-scatter energy ratio when rician
  bool common_receive_basis = false;  // share U_lk across users per set
};

// Random well-formed model: Haar eigenbases, uniform[0,1) coupling entries,
// optional Gaussian mean, then exact energy normalization.  Deterministic in
// (dims, seed, options).
template <class T>
ChannelModel<T> random_jointly_correlated(
    const Dimensions& dims, std::uint64_t seed,
    const RandomModelOptions& opt = RandomModelOptions{}) {
  dims.check();
  Substream rng(seed, 0);
  ChannelModel<T> out;
  out.dims = dims;
  out.P.assign(dims.M_k.begin(), dims.M_k.end());
  out.links.resize(dims.L);

  std::vector<CMat<T>> shared_u;
  if (opt.common_receive_basis) {
    shared_u.reserve(dims.L);
    for (Index l = 0; l < dims.L; ++l)
      shared_u.push_back(random_unitary<T>(dims.N_l[l], rng));
  }

  for (Index l = 0; l < dims.L; ++l) {
    out.links[l].resize(dims.K);
    for (Index k = 0; k < dims.K; ++k) {
      LinkStatistics<T>& s = out.links[l][k];
      const Index n = dims.N_l[l], m = dims.M_k[k];
      s.U = opt.common_receive_basis ? shared_u[l]
                                     : random_unitary<T>(n, rng);
      s.V = random_unitary<T>(m, rng);
      s.G.resize(n, m);
      for (Index j = 0; j < m; ++j)
        for (Index i = 0; i < n; ++i) s.G(i, j) = T(rng.uniform());
      s.Hbar = CMat<T>::Zero(n, m);
      if (opt.rician)
        for (Index j = 0; j < m; ++j)
          for (Index i = 0; i < n; ++i)
            s.Hbar(i, j) = std::complex<T>(rng.cnormal());
    }
  }

  if (opt.rician) {
    // Split each user's energy target between mean and scatter according to
    // the requested ratio before the final exact normalization.
    const T kappa = T(opt.rician_factor);
    for (Index k = 0; k < dims.K; ++k) {
      T los = 0, scatter = 0;
      for (Index l = 0; l < dims.L; ++l) {
        los += out.links[l][k].Hbar.squaredNorm();
        scatter += out.links[l][k].G.sum();
      }
      const T target = T(dims.N()) * T(dims.M_k[k]) / T(dims.M());
      const T c_los = std::sqrt(target * kappa / ((1 + kappa) * los));
      const T c_sc = target / ((1 + kappa) * scatter);
      for (Index l = 0; l < dims.L; ++l) {
        out.links[l][k].Hbar *= c_los;
        out.links[l][k].G *= c_sc;
      }
    }
  }
  return normalize(out);
}

}  // namespace demac
