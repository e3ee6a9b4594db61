// Shannon transform: closed-form limits, quadrature oracles for iid and
// Kronecker couplings, the two-sided form gap, the derivative identity, and
// invariance properties.

#include <doctest.h>

#include <demac/demac.hpp>

#include "support.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace demac;

TEST_CASE("no channel carries no information") {
  ChannelModel<double> model;
  model.dims = Dimensions{1, 1, {3}, {2}};
  model.P = {2.0};
  model.links = {{LinkStatistics<double>{
      CMat<double>::Zero(3, 2), CMat<double>::Identity(3, 3),
      CMat<double>::Identity(2, 2), RMat<double>::Zero(3, 2)}}};
  const auto q = InputCovarianceSet<double>::identity(model.dims);
  const auto rep = shannon_transform(model, q, 1.3);
  CHECK(std::abs(rep.V) < 1e-13);
  CHECK(std::abs(rep.I) < 1e-13);
  CHECK(rep.form_gap < 1e-13);
}

TEST_CASE("deterministic channel recovers the log-determinant formula") {
  const Dimensions d{2, 2, {3, 2}, {2, 2}};
  ChannelModel<double> model;
  model.dims = d;
  model.P.assign(d.M_k.begin(), d.M_k.end());
  model.links.resize(d.L);
  Substream rng(71, 0);
  for (Index l = 0; l < d.L; ++l) {
    model.links[l].resize(d.K);
    for (Index k = 0; k < d.K; ++k) {
      auto& s = model.links[l][k];
      s.U = CMat<double>::Identity(d.N_l[l], d.N_l[l]);
      s.V = CMat<double>::Identity(d.M_k[k], d.M_k[k]);
      s.G = RMat<double>::Zero(d.N_l[l], d.M_k[k]);
      s.Hbar = testsupport::random_gaussian(d.N_l[l], d.M_k[k], rng) * 0.5;
    }
  }
  const auto q = InputCovarianceSet<double>::identity(d);
  const double x = 0.8;
  const auto rep = shannon_transform(model, q, x);
  const CMat<double> a = assemble_mean(model);
  const double want = std::real(
      logdet_hermitian_pd(CMat<double>(CMat<double>::Identity(d.N(), d.N()) +
                                       a * a.adjoint() / x),
                          "test"));
  CHECK(std::abs(rep.I - want) < 1e-8);
  CHECK(rep.I == doctest::Approx(double(d.N()) * rep.V).epsilon(1e-14));
  CHECK(rep.iters <= 2);
}

TEST_CASE("receive-side and transmit-side forms agree on random models") {
  Substream seeds(501, 0);
  for (int trial = 0; trial < 6; ++trial) {
    RandomModelOptions opt;
    opt.rician = (trial % 2 == 1);
    const Dimensions d =
        (trial % 3 == 0) ? Dimensions{1, 2, {4}, {2, 3}}
                         : Dimensions{2, 2, {3, 4}, {2, 2}};
    const auto model =
        random_jointly_correlated<double>(d, 1000 + trial, opt);
    const auto q = (trial % 2 == 0)
                       ? InputCovarianceSet<double>::identity(d)
                       : testsupport::random_covariances(d, 2000 + trial);
    const auto rep = shannon_transform(model, q, 0.3 + 0.2 * trial);
    CHECK(rep.form_gap < 1e-8);
    CHECK(rep.V >= 0.0);
    CHECK(std::abs(std::imag(rep.G)) < 1e-10);
  }
}

TEST_CASE("square iid coupling matches the closed-form shannon transform") {
  // The scalar fixed point is size-independent for the all-ones square
  // profile, so the asymptotic closed form is exact at any N.
  const auto model = testsupport::iid_square_model(16);
  const auto q = InputCovarianceSet<double>::identity(model.dims);
  for (double x : {0.5, 1.0, 2.0}) {
    const auto rep = shannon_transform(model, q, x);
    CHECK(std::abs(rep.V - testsupport::mp_square_shannon(x)) < 1e-8);
    CHECK(std::abs(std::real(rep.G) -
                   testsupport::mp_square_cauchy_at_minus_x(x)) < 1e-8);
  }
  // The reduced path gives the same values.
  const auto red = shannon_transform_reduced(model, q, 1.0);
  CHECK(std::abs(red.V - testsupport::mp_square_shannon(1.0)) < 1e-8);
}

TEST_CASE("kronecker coupling matches the scalar-system closed form") {
  const Dimensions d{1, 2, {4}, {2, 3}};
  const auto fx = testsupport::random_kronecker(d, 509);
  const auto q = InputCovarianceSet<double>::identity(d);
  const double x = 0.4;
  const auto rep = shannon_transform(fx.model, q, x);
  const auto scal = testsupport::kronecker_scalar_fixed_point(d, fx.r, fx.t, x);
  const double want = testsupport::kronecker_l1_mi(d, fx.r, fx.t, x, scal);
  CHECK(std::abs(rep.I - want) < 1e-8);
}

TEST_CASE("shannon transform decreases in the noise level") {
  const Dimensions d{2, 2, {3, 3}, {2, 2}};
  const auto model = random_jointly_correlated<double>(d, 521);
  const auto q = InputCovarianceSet<double>::identity(d);
  double prev = std::numeric_limits<double>::infinity();
  for (double x : {0.1, 0.3, 1.0, 3.0, 10.0}) {
    const double v = shannon_transform(model, q, x).V;
    CHECK(v < prev);
    CHECK(v >= 0.0);
    prev = v;
  }
}

TEST_CASE("derivative of the shannon transform is the resolvent identity") {
  const Dimensions d{2, 2, {3, 4}, {2, 3}};
  for (int trial = 0; trial < 3; ++trial) {
    RandomModelOptions opt;
    opt.rician = (trial == 2);
    const auto model =
        random_jointly_correlated<double>(d, 601 + trial, opt);
    const auto q = InputCovarianceSet<double>::identity(d);
    const double x = 0.5 + 0.3 * trial;
    const auto chk = derivative_check(model, q, x, 1e-4 * x);
    CHECK(chk.rel_err < 1e-5);
  }

  // Deterministic channel: the identity holds to the quadrature limit.
  ChannelModel<double> det;
  det.dims = Dimensions{1, 1, {3}, {3}};
  det.P = {3.0};
  Substream rng(77, 1);
  det.links = {{LinkStatistics<double>{
      testsupport::random_gaussian(3, 3, rng), CMat<double>::Identity(3, 3),
      CMat<double>::Identity(3, 3), RMat<double>::Zero(3, 3)}}};
  const auto qd = InputCovarianceSet<double>::identity(det.dims);
  const auto chk = derivative_check(det, qd, 1.0, 1e-4);
  CHECK(chk.rel_err < 1e-6);

  CHECK_THROWS_AS(derivative_check(det, qd, 1.0, 2.0), InvalidArgument);
}

TEST_CASE("reduced-form evaluation matches the general forms") {
  RandomModelOptions cu;
  cu.common_receive_basis = true;
  const Dimensions d{2, 2, {4, 3}, {3, 2}};
  const auto model = random_jointly_correlated<double>(d, 541, cu);
  const double x = 0.5;
  for (const auto& q : {InputCovarianceSet<double>::identity(d),
                        testsupport::random_covariances(d, 542)}) {
    const auto general = shannon_transform(model, q, x);
    const auto reduced = shannon_transform_reduced(model, q, x);
    CHECK(std::abs(general.V - reduced.V) < 1e-8);
    CHECK(std::abs(std::real(general.G) - std::real(reduced.G)) < 1e-9);
  }

  // Single-set scalar solver, identity covariances only.
  const Dimensions d1{1, 2, {5}, {2, 3}};
  const auto m1 = random_jointly_correlated<double>(d1, 547, cu);
  const auto q1 = InputCovarianceSet<double>::identity(d1);
  const auto g1 = shannon_transform(m1, q1, x);
  const auto l1 = solve_l1_inversion_free(m1, x);
  const auto r1 = shannon_from_reduced(m1, q1, l1, FormUsed::reduced_l1);
  CHECK(std::abs(g1.V - r1.V) < 1e-8);

  // Structured line-of-sight solver.
  const auto sm = testsupport::structured_rician_model(6, {2, 3}, 557);
  const auto qs = InputCovarianceSet<double>::identity(sm.dims);
  const auto gs = shannon_transform(sm, qs, x);
  const auto fast = solve_structured_rician_l1(sm, x);
  const auto rs = shannon_from_state(sm, qs, fast, FormUsed::structured_l1);
  CHECK(std::abs(gs.V - rs.V) < 1e-8);
}

TEST_CASE("mutual information is invariant under eigenbasis rotations") {
  // For a single receive set with no line of sight and identity input
  // covariances, the value depends on the coupling only; fresh unitary
  // bases must not change it.
  RandomModelOptions cu;
  cu.common_receive_basis = true;
  const Dimensions d{1, 2, {4}, {2, 3}};
  const auto model = random_jointly_correlated<double>(d, 563, cu);
  const auto q = InputCovarianceSet<double>::identity(d);
  const double x = 0.6;
  const double base = shannon_transform(model, q, x).V;

  Substream rng(569, 4);
  ChannelModel<double> rotated = model;
  const CMat<double> fresh_u = random_unitary<double>(4, rng);
  for (Index k = 0; k < d.K; ++k) {
    rotated.links[0][k].U = fresh_u;
    rotated.links[0][k].V = random_unitary<double>(d.M_k[k], rng);
  }
  const double rot = shannon_transform(rotated, q, x).V;
  CHECK(std::abs(base - rot) < 1e-8);
}

TEST_CASE("log-determinant helper rejects bad inputs") {
  CMat<double> nh(2, 2);
  nh << std::complex<double>(1, 0), std::complex<double>(0.5, 0.2),
      std::complex<double>(0.1, 0.1), std::complex<double>(1, 0);
  CHECK_THROWS_AS(logdet_hermitian_pd(nh, "test"), NonHermitianLogDet);

  CMat<double> indef(2, 2);
  indef << std::complex<double>(1, 0), std::complex<double>(0, 0),
      std::complex<double>(0, 0), std::complex<double>(-1, 0);
  CHECK_THROWS_AS(logdet_hermitian_pd(indef, "test"), FactorizationFailure);

  // The Cholesky fast path agrees with the eigenvalue path.
  Substream rng(571, 5);
  const CMat<double> a =
      testsupport::random_psd(5, rng, 0.3) +
      CMat<double>(CMat<double>::Identity(5, 5));
  CHECK(std::abs(std::real(logdet_hermitian_pd_llt(a, "test")) -
                 std::real(logdet_hermitian_pd(a, "test"))) < 1e-12);
}
