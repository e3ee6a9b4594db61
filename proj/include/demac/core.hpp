#pragma once

// Core scalar/matrix aliases, problem dimensions, error types, and small
// numerical helpers shared by every module of the library.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace demac {

using Index = Eigen::Index;

template <class T>
using CMat = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using CVec = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, 1>;
template <class T>
using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotPSD : public Error {
 public:
  using Error::Error;
};

class ZeroEnergyUser : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  NoConvergence(long iters_, double residual_)
      : Error("fixed-point iteration did not reach tolerance after " +
              std::to_string(iters_) +
              " sweeps (residual " + std::to_string(residual_) + ")"),
        iters(iters_),
        residual(residual_) {}
  long iters;
  double residual;
};

class SingularIteration : public Error {
 public:
  using Error::Error;
};

class PreconditionViolated : public Error {
 public:
  using Error::Error;
};

class NonHermitianLogDet : public Error {
 public:
  using Error::Error;
};

class FactorizationFailure : public Error {
 public:
  using Error::Error;
};

class DegenerateSamples : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Dimensions of a multiple-access channel with distributed receive sets:
// L receive sets of N_l antennas each (N total), K users with M_k transmit
// antennas each (M total).

struct Dimensions {
  Index L = 0;
  Index K = 0;
  std::vector<Index> N_l;
  std::vector<Index> M_k;

  Index N() const { return std::accumulate(N_l.begin(), N_l.end(), Index{0}); }
  Index M() const { return std::accumulate(M_k.begin(), M_k.end(), Index{0}); }

  // Row offset of receive set l inside the stacked N-dimensional space.
  Index rx_offset(Index l) const {
    return std::accumulate(N_l.begin(), N_l.begin() + l, Index{0});
  }
  // Column offset of user k inside the stacked M-dimensional space.
  Index tx_offset(Index k) const {
    return std::accumulate(M_k.begin(), M_k.begin() + k, Index{0});
  }

  void check() const {
    if (L < 1 || K < 1)
      throw DimensionMismatch("need at least one receive set and one user");
    if (static_cast<Index>(N_l.size()) != L)
      throw DimensionMismatch("N_l has " + std::to_string(N_l.size()) +
                              " entries, expected L = " + std::to_string(L));
    if (static_cast<Index>(M_k.size()) != K)
      throw DimensionMismatch("M_k has " + std::to_string(M_k.size()) +
                              " entries, expected K = " + std::to_string(K));
    for (Index n : N_l)
      if (n < 1) throw DimensionMismatch("every N_l must be positive");
    for (Index m : M_k)
      if (m < 1) throw DimensionMismatch("every M_k must be positive");
  }

  bool operator==(const Dimensions& o) const {
    return L == o.L && K == o.K && N_l == o.N_l && M_k == o.M_k;
  }
};

// ---------------------------------------------------------------------------
// Small numeric helpers

// Hermitian part (A + A^H)/2.
template <class Derived>
CMat<typename Derived::RealScalar> herm(const Eigen::MatrixBase<Derived>& a) {
  return (a.derived() + a.derived().adjoint()) / 2;
}

// Frobenius norm of the anti-Hermitian part, used to detect drift away from
// Hermitian structure before symmetrizing.
template <class Derived>
typename Derived::RealScalar anti_hermitian_norm(
    const Eigen::MatrixBase<Derived>& a) {
  return ((a.derived() - a.derived().adjoint()) / 2).norm();
}

// Make each column's first non-negligible entry real positive.  Removes the
// per-column phase ambiguity of eigenvector/QR factors so that factorizations
// are reproducible across runs.
template <class T>
void fix_column_phases(CMat<T>& u) {
  const T tiny = T(1e-12);
  for (Index j = 0; j < u.cols(); ++j) {
    for (Index i = 0; i < u.rows(); ++i) {
      const T m = std::abs(u(i, j));
      if (m > tiny) {
        u.col(j) *= std::conj(u(i, j)) / m;
        break;
      }
    }
  }
}

// log det of a Hermitian positive-definite matrix via eigendecomposition.
// Rejects inputs that have drifted away from Hermitian structure and inputs
// with non-positive spectrum.
template <class T>
T logdet_hermitian_pd(const CMat<T>& a, const char* what) {
  const T scale = std::max(T(1), a.norm());
  if (anti_hermitian_norm(a) > T(1e-8) * scale)
    throw NonHermitianLogDet(std::string(what) +
                             ": log-det argument is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(a),
                                            Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw FactorizationFailure(std::string(what) +
                               ": eigendecomposition failed");
  T out = 0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const T lam = es.eigenvalues()(i);
    if (lam <= T(1e-14) * scale)
      throw FactorizationFailure(std::string(what) +
                                 ": log-det argument is not positive definite");
    out += std::log(lam);
  }
  return out;
}

// log det of a Hermitian positive-definite matrix via Cholesky, falling back
// to the eigendecomposition path if the factorization reports failure.
template <class T>
T logdet_hermitian_pd_llt(const CMat<T>& a, const char* what) {
  Eigen::LLT<CMat<T>> llt(a);
  if (llt.info() != Eigen::Success) return logdet_hermitian_pd(a, what);
  T out = 0;
  for (Index i = 0; i < a.rows(); ++i)
    out += 2 * std::log(std::real(llt.matrixLLT()(i, i)));
  return out;
}

// Hermitian PSD square root.  Eigenvalues slightly negative from round-off
// (above -1e-12 relative) are clamped to zero; anything more negative is a
// genuine violation and raises NotPSD.
template <class T>
CMat<T> psd_sqrt(const CMat<T>& a, const char* what) {
  const T scale = std::max(T(1), a.norm());
  if (anti_hermitian_norm(a) > T(1e-8) * scale)
    throw NotPSD(std::string(what) + ": matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(a));
  if (es.info() != Eigen::Success)
    throw FactorizationFailure(std::string(what) +
                               ": eigendecomposition failed");
  RVec<T> lam = es.eigenvalues();
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < -T(1e-12) * scale)
      throw NotPSD(std::string(what) + ": eigenvalue " + std::to_string(lam(i)) +
                   " is negative");
    lam(i) = lam(i) < T(0) ? T(0) : std::sqrt(lam(i));
  }
  CMat<T> u = es.eigenvectors();
  return herm(u * lam.asDiagonal() * u.adjoint());
}

// Inverse through partial-pivot LU with a reciprocal-condition guard; a
// 1-norm condition estimate above 1e14 is treated as a singular iterate.
template <class T>
CMat<T> inverse_checked(const CMat<T>& a, const char* what) {
  Eigen::PartialPivLU<CMat<T>> lu(a);
  if (!(lu.rcond() > T(1e-14)))
    throw SingularIteration(std::string(what) +
                            ": matrix is numerically singular");
  return lu.inverse();
}

// Largest absolute entry of (a - b); the sweep-to-sweep residual metric.
template <class T>
T max_abs_diff(const CMat<T>& a, const CMat<T>& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace demac
