#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "homlab/correctors.hpp"
#include "homlab/ensemble.hpp"
#include "support/oracles.hpp"

using namespace homlab;

namespace {
MatrixField sample_a(int dim, int side, std::uint64_t sample,
                     MapKind kind = MapKind::ScalarLogistic) {
  TorusGrid g(dim, side);
  SpectralCovariance cov;
  CoefficientMap map;
  map.kind = kind;
  return apply_map(map, sample_gaussian_field(g, cov, 311, sample));
}

SolveOptions tight() {
  SolveOptions opt;
  opt.tol = 1e-13;
  opt.max_iter = 4000;
  return opt;
}
}  // namespace

TEST_CASE("constant coefficients have identically zero correctors", "[correctors]") {
  TorusGrid g(2, 16);
  // Dyadic entries: cell averages of the constant field are then exact in
  // floating point, so abar^1 == m bitwise, not only up to rounding.
  Mat m(2);
  m(0, 0) = 0.75;
  m(0, 1) = 0.25;
  m(1, 0) = -0.25;
  m(1, 1) = 0.75;
  MatrixField a = MatrixField::constant(g, m);
  CorrectorHierarchy h = build_hierarchy(a, 2, tight());
  for (const CorrectorLevel& lv : h.levels) {
    for (const ScalarField& phi : lv.phi) REQUIRE(phi.max_abs() == 0.0);
    for (const MatrixField& sg : lv.sigma) {
      double worst = 0;
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
          for (Index i = 0; i < g.cells(); ++i)
            worst = std::max(worst, std::abs(sg.at(r, c, i)));
      REQUIRE(worst == 0.0);
    }
  }
  // abar^1 equals the constant matrix exactly.
  REQUIRE((h.level(1).abar[0] - m).max_abs() == 0.0);
  // The corrector relation is exact here.
  REQUIRE(corrector_relation_residual(a, h, 1) == 0.0);
}

TEST_CASE("layered coefficient reproduces the one-dimensional recurrence", "[correctors][oracle]") {
  const int M = 64;
  TorusGrid g(2, M);
  // s(x0) in [0.3, 1.3], deterministic profile with several harmonics.
  std::vector<double> s(static_cast<size_t>(M));
  for (int t = 0; t < M; ++t)
    s[size_t(t)] = 0.8 + 0.5 * std::sin(2 * M_PI * t / double(M)) * std::cos(6 * M_PI * t / double(M));
  ScalarField sf(g);
  for (Index i = 0; i < g.cells(); ++i) sf[i] = s[size_t(g.coords(i)[0])];
  MatrixField a = MatrixField::isotropic(sf);

  CorrectorHierarchy h = build_hierarchy(a, 1, tight());
  const Mat& abar = h.level(1).abar[0];
  REQUIRE(abar(0, 0) == Catch::Approx(oracles::harmonic_mean(s)).margin(1e-8));
  REQUIRE(abar(1, 1) == Catch::Approx(oracles::arithmetic_mean(s)).margin(1e-8));
  REQUIRE(std::abs(abar(0, 1)) < 1e-10);
  REQUIRE(std::abs(abar(1, 0)) < 1e-10);

  // phi^1_0 follows the layer recurrence; phi^1_1 vanishes.
  std::vector<double> want = oracles::layered_corrector_profile(s);
  const ScalarField& phi0 = h.level(1).phi[0];
  double worst = 0;
  for (Index i = 0; i < g.cells(); ++i)
    worst = std::max(worst, std::abs(phi0[i] - want[size_t(g.coords(i)[0])]));
  REQUIRE(worst < 1e-8);
  REQUIRE(h.level(1).phi[1].max_abs() < 1e-9);
}

TEST_CASE("level-2 solve agrees with dense LU on a small grid", "[correctors][oracle]") {
  MatrixField a = sample_a(2, 8, 0);
  CorrectorHierarchy h = build_hierarchy(a, 2, tight());
  std::vector<double> A = oracles::dense_operator_matrix(a);
  const TorusGrid& g = a.grid();
  for (const MultiIndex& mi : all_multi_indices(2, 2)) {
    VectorField F = corrector_rhs_flux(a, &h.level(1), mi);
    // b(x) = div F computed with independent arithmetic.
    std::vector<double> b(size_t(g.cells()), 0.0);
    for (Index r = 0; r < g.cells(); ++r) {
      const std::array<int, 3> x = oracles::unflat(2, 8, r);
      for (int k = 0; k < 2; ++k) {
        std::array<int, 3> xk = x;
        xk[size_t(k)] -= 1;
        b[size_t(r)] += F.at(k, r) - F.at(k, oracles::flat(2, 8, xk));
      }
    }
    std::vector<double> want = oracles::dense_solve_mean_zero(A, b);
    const ScalarField& phi = h.level(2).phi[size_t(multi_index_rank(mi, 2))];
    double worst = 0;
    for (Index i = 0; i < g.cells(); ++i)
      worst = std::max(worst, std::abs(phi[i] - want[size_t(i)]));
    REQUIRE(worst < 1e-9);
  }
}

TEST_CASE("flux correctors are exactly skew with exact flux means", "[correctors]") {
  for (MapKind kind : {MapKind::ScalarLogistic, MapKind::LogisticSkew}) {
    MatrixField a = sample_a(2, 32, 1, kind);
    CorrectorHierarchy h = build_hierarchy(a, 2, tight());
    for (const CorrectorLevel& lv : h.levels) {
      REQUIRE(sigma_skew_residual(lv) == 0.0);
      REQUIRE(flux_mean_residual(lv) < 1e-13);
      REQUIRE(sigma_divergence_residual(lv) < 1e-10);
      for (const SolveReport& rep : lv.reports) REQUIRE(rep.converged);
    }
  }
}

TEST_CASE("sigma reconstructs the divergence-free part of the flux", "[correctors][oracle]") {
  MatrixField a = sample_a(2, 32, 2);
  CorrectorHierarchy h = build_hierarchy(a, 1, tight());
  const VectorField& q = h.level(1).flux[0];
  const MatrixField& sg = h.level(1).sigma[0];
  // Helmholtz: q = D chi + (div-free), with -lap chi = -div q; the identity
  // div sigma = q - D chi holds exactly for the spectral construction.
  ScalarField divq = adjoint_div(q);
  for (Index i = 0; i < divq.size(); ++i) divq[i] = -divq[i];
  ScalarField chi = poisson_solve(divq);
  VectorField dchi = gradient(chi);
  VectorField lhs = row_div(sg);
  double scale = q.max_abs();
  double worst = 0;
  for (int k = 0; k < 2; ++k)
    for (Index i = 0; i < a.grid().cells(); ++i)
      worst = std::max(worst, std::abs(lhs.at(k, i) - (q.at(k, i) - dchi.at(k, i))));
  REQUIRE(worst < 1e-11 * std::max(scale, 1.0) * a.grid().side());
}

TEST_CASE("effective tensors equal the average corrected flux", "[correctors]") {
  MatrixField a = sample_a(2, 16, 3, MapKind::LogisticSkew);
  CorrectorHierarchy h = build_hierarchy(a, 1, tight());
  for (int r = 0; r < 2; ++r) {
    VectorField corrected = h.level(1).grad_phi[size_t(r)];
    double* cr = corrected.comp(r);
    for (Index i = 0; i < a.grid().cells(); ++i) cr[i] += 1.0;
    auto avg = vector_average(matvec(a, corrected));
    for (int j = 0; j < 2; ++j)
      REQUIRE(h.level(1).abar[0](j, r) == Catch::Approx(avg[size_t(j)]).margin(1e-12));
  }
}

TEST_CASE("corrector relation holds at both levels in both dimensions", "[correctors]") {
  for (int d : {2, 3}) {
    MatrixField a = sample_a(d, d == 2 ? 32 : 12, 4, MapKind::LogisticSkew);
    CorrectorHierarchy h = build_hierarchy(a, 2, tight());
    const double r1 = corrector_relation_residual(a, h, 1);
    const double r2 = corrector_relation_residual(a, h, 2);
    INFO("dim " << d << " level-1 residual " << r1 << " level-2 residual " << r2);
    REQUIRE(r1 < 1e-8);
    REQUIRE(r2 < 1e-8);
  }
}

TEST_CASE("first-order duality links the transposed ensemble per sample", "[correctors]") {
  MatrixField a = sample_a(2, 24, 5, MapKind::LogisticSkew);
  CorrectorHierarchy primal = build_hierarchy(a, 1, tight());
  CorrectorHierarchy dual = build_hierarchy(transpose_field(a), 1, tight());
  REQUIRE(first_order_duality_residual(primal, dual) < 1e-8);
  REQUIRE(primal.level(1).reports[0].nonsymmetric_path);
}

TEST_CASE("second-order duality pair has matched layout", "[correctors]") {
  MatrixField a = sample_a(2, 12, 6);
  CorrectorHierarchy primal = build_hierarchy(a, 2, tight());
  SecondOrderDualityPair pair = second_order_duality_pair(primal, primal);
  REQUIRE(pair.lhs.size() == 2 * 3);  // d * (d(d+1)/2)
  REQUIRE(pair.lhs.size() == pair.rhs.size());
  for (double v : pair.lhs) REQUIRE(std::isfinite(v));
  for (double v : pair.rhs) REQUIRE(std::isfinite(v));
}

TEST_CASE("accessors map multi-indices to stored fields", "[correctors]") {
  MatrixField a = sample_a(2, 8, 7);
  CorrectorHierarchy h = build_hierarchy(a, 2, tight());
  REQUIRE(&h.level(2).phi_at({1, 0}, 2) == &h.level(2).phi[2]);
  REQUIRE(&h.level(2).abar_at({1}, 2) == &h.level(2).abar[1]);
  REQUIRE(&effective_tensor(h, 1, {}) == &h.level(1).abar[0]);
  REQUIRE_THROWS_AS(build_hierarchy(a, 0, tight()), std::invalid_argument);
}

TEST_CASE("moment statistics match a direct evaluation", "[correctors]") {
  MatrixField a = sample_a(2, 16, 8);
  CorrectorHierarchy h = build_hierarchy(a, 1, tight());
  MomentStats st = measure_moments(h.level(1));
  const TorusGrid& g = a.grid();
  double p2 = 0;
  for (int r = 0; r < 2; ++r) {
    const ScalarField& phi = h.level(1).phi[size_t(r)];
    for (Index i = 0; i < g.cells(); ++i) p2 += phi[i] * phi[i];
  }
  p2 /= double(g.cells()) * 2.0;
  REQUIRE(st.phi_p2 == Catch::Approx(p2).epsilon(1e-12));
  REQUIRE(st.phi_p4 >= 0.0);
  REQUIRE(st.grad_p2 > 0.0);
  REQUIRE(st.sigma_p2 > 0.0);
  // Cauchy-Schwarz between the reported moments.
  REQUIRE(st.phi_p4 >= st.phi_p2 * st.phi_p2 * (1.0 - 1e-12));
  REQUIRE(st.grad_p4 >= st.grad_p2 * st.grad_p2 * (1.0 - 1e-12));
}
