#pragma once

// Fits the jointly correlated model to a set of channel realizations:
// sample mean, joint per-user energy normalization, one-sided correlation
// eigenbases per link, and the eigendomain coupling estimated from the
// centered samples.  The coupling estimator (1/S) sum_s |U^H Htil(s) V|^2 is
// entrywise real non-negative by construction and conserves each link's
// scatter energy exactly (unitary invariance of the Frobenius norm), which
// the tests assert.

#include <cmath>
#include <string>
#include <vector>

#include "channel.hpp"
#include "core.hpp"

namespace demac {

template <class T>
struct SampleSet {
  Dimensions dims;
  std::vector<CMat<T>> H;  // S realizations, each N x M
};

template <class T>
ChannelModel<T> extract(const SampleSet<T>& set) {
  set.dims.check();
  const Dimensions& d = set.dims;
  const Index s_count = static_cast<Index>(set.H.size());
  if (s_count < 1) throw DegenerateSamples("empty sample set");
  for (const CMat<T>& h : set.H)
    if (h.rows() != d.N() || h.cols() != d.M())
      throw DimensionMismatch("sample has wrong shape");

  // Sample mean and centered copies.
  CMat<T> mean = CMat<T>::Zero(d.N(), d.M());
  for (const CMat<T>& h : set.H) mean += h;
  mean /= T(s_count);
  std::vector<CMat<T>> centered(set.H.begin(), set.H.end());
  for (CMat<T>& h : centered) h -= mean;

  // Joint per-user normalization: one scalar per user rescales the mean and
  // the centered samples together so that the fitted model satisfies the
  // energy convention exactly.
  const T n = T(d.N()), m = T(d.M());
  std::vector<T> c(d.K);
  for (Index k = 0; k < d.K; ++k) {
    const Index off = d.tx_offset(k), mk = d.M_k[k];
    T energy = mean.middleCols(off, mk).squaredNorm();
    T scatter = 0;
    for (const CMat<T>& h : centered)
      scatter += h.middleCols(off, mk).squaredNorm();
    energy += scatter / T(s_count);
    const T target = n * T(d.M_k[k]) / m;
    if (!(energy > target * T(1e-30)))
      throw DegenerateSamples("user " + std::to_string(k) +
                              " has numerically zero sample energy");
    c[k] = std::sqrt(target / energy);
    mean.middleCols(off, mk) *= c[k];
    for (CMat<T>& h : centered) h.middleCols(off, mk) *= c[k];
  }

  ChannelModel<T> out;
  out.dims = d;
  out.P.assign(d.M_k.begin(), d.M_k.end());
  out.links.resize(d.L);
  for (Index l = 0; l < d.L; ++l) out.links[l].resize(d.K);

  for (Index l = 0; l < d.L; ++l) {
    const Index roff = d.rx_offset(l), nl = d.N_l[l];
    for (Index k = 0; k < d.K; ++k) {
      const Index toff = d.tx_offset(k), mk = d.M_k[k];
      LinkStatistics<T>& link = out.links[l][k];
      link.Hbar = mean.block(roff, toff, nl, mk);

      CMat<T> r_rx = CMat<T>::Zero(nl, nl);
      CMat<T> r_tx = CMat<T>::Zero(mk, mk);
      for (const CMat<T>& h : centered) {
        const auto blk = h.block(roff, toff, nl, mk);
        r_rx += blk * blk.adjoint();
        r_tx += blk.adjoint() * blk;
      }
      r_rx /= T(s_count);
      r_tx /= T(s_count);

      // Eigenbases in descending eigenvalue order with pinned phases; a link
      // with no scatter at all keeps identity bases (its coupling is zero).
      auto basis_of = [](const CMat<T>& corr) {
        const Index sz = corr.rows();
        if (corr.norm() == T(0)) return CMat<T>(CMat<T>::Identity(sz, sz));
        Eigen::SelfAdjointEigenSolver<CMat<T>> es(herm(corr));
        if (es.info() != Eigen::Success)
          throw FactorizationFailure(
              "extract: correlation eigendecomposition failed");
        CMat<T> b(sz, sz);
        for (Index i = 0; i < sz; ++i)
          b.col(i) = es.eigenvectors().col(sz - 1 - i);
        fix_column_phases(b);
        return b;
      };
      link.U = basis_of(r_rx);
      link.V = basis_of(r_tx);

      RMat<T> g = RMat<T>::Zero(nl, mk);
      for (const CMat<T>& h : centered) {
        const CMat<T> proj =
            link.U.adjoint() * h.block(roff, toff, nl, mk) * link.V;
        g += proj.cwiseAbs2();
      }
      link.G = g / T(s_count);
    }
  }
  return out;
}

}  // namespace demac
