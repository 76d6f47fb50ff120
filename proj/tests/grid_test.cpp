#include <catch2/catch_amalgamated.hpp>

#include "homlab/grid.hpp"
#include "support/oracles.hpp"

using namespace homlab;

TEST_CASE("torus indexing round-trips and wraps", "[grid]") {
  TorusGrid g(2, 6);
  REQUIRE(g.cells() == 36);
  for (Index i = 0; i < g.cells(); ++i) REQUIRE(g.index(g.coords(i)) == i);
  REQUIRE(g.index({6, 0, 0}) == g.index({0, 0, 0}));
  REQUIRE(g.index({-1, 2, 0}) == g.index({5, 2, 0}));
  REQUIRE(g.min_image(5) == -1);
  REQUIRE(g.min_image(3) == 3);  // half period maps to +M/2
  REQUIRE(g.min_image(-2) == -2);

  TorusGrid g3(3, 4);
  for (Index i = 0; i < g3.cells(); ++i) REQUIRE(g3.index(g3.coords(i)) == i);
  REQUIRE_THROWS_AS(TorusGrid(4, 8), std::invalid_argument);
  REQUIRE_THROWS_AS(TorusGrid(2, 1), std::invalid_argument);
}

TEST_CASE("neighbor matches coordinate arithmetic", "[grid]") {
  TorusGrid g(3, 5);
  for (Index i = 0; i < g.cells(); ++i)
    for (int ax = 0; ax < 3; ++ax)
      for (int by : {+1, -1}) {
        std::array<int, 3> x = g.coords(i);
        x[size_t(ax)] += by;
        REQUIRE(g.neighbor(i, ax, by) == g.index(x));
      }
}

TEST_CASE("forward difference of a 1-d profile", "[grid]") {
  // u(x) = v[x0] with v = (0, 1, 0, -1) has D_0 u = (1, -1, -1, 1).
  TorusGrid g(2, 4);
  const double v[4] = {0, 1, 0, -1};
  const double dv[4] = {1, -1, -1, 1};
  ScalarField u(g);
  for (Index i = 0; i < g.cells(); ++i) u[i] = v[g.coords(i)[0]];
  ScalarField du = forward_diff(u, 0);
  for (Index i = 0; i < g.cells(); ++i) REQUIRE(du[i] == dv[g.coords(i)[0]]);
  ScalarField d1 = forward_diff(u, 1);  // constant along axis 1
  REQUIRE(d1.max_abs() == 0.0);
}

TEST_CASE("forward and backward differences are shifts of each other", "[grid]") {
  TorusGrid g(3, 4);
  ScalarField u(g);
  oracles::fill_random(u, 7);
  for (int ax = 0; ax < 3; ++ax) {
    ScalarField f = forward_diff(u, ax);
    ScalarField b = backward_diff(u, ax);
    ScalarField fs = shift_field(f, ax, -1);  // D_k u shifted back = D-_k u
    for (Index i = 0; i < g.cells(); ++i) REQUIRE(b[i] == Catch::Approx(fs[i]).margin(1e-15));
  }
}

TEST_CASE("summation by parts is exact", "[grid]") {
  TorusGrid g(2, 8);
  ScalarField u(g);
  VectorField F(g);
  oracles::fill_random(u, 11);
  oracles::fill_random(F, 13);
  const double lhs = inner(u, adjoint_div(F));
  const double rhs = -inner(gradient(u), F);
  REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12 * g.cells()));

  TorusGrid g3(3, 5);
  ScalarField u3(g3);
  VectorField F3(g3);
  oracles::fill_random(u3, 17);
  oracles::fill_random(F3, 19);
  REQUIRE(inner(u3, adjoint_div(F3)) ==
          Catch::Approx(-inner(gradient(u3), F3)).margin(1e-12 * g3.cells()));
}

TEST_CASE("discrete product rule", "[grid]") {
  // D_k(u v)(x) = u(x) D_k v(x) + D_k u(x) v(x + e_k).
  TorusGrid g(2, 6);
  ScalarField u(g), v(g);
  oracles::fill_random(u, 23);
  oracles::fill_random(v, 29);
  for (int ax = 0; ax < 2; ++ax) {
    ScalarField uv(g);
    for (Index i = 0; i < g.cells(); ++i) uv[i] = u[i] * v[i];
    ScalarField lhs = forward_diff(uv, ax);
    ScalarField dv = forward_diff(v, ax);
    ScalarField du = forward_diff(u, ax);
    ScalarField vs = shift_field(v, ax, +1);
    for (Index i = 0; i < g.cells(); ++i)
      REQUIRE(lhs[i] == Catch::Approx(u[i] * dv[i] + du[i] * vs[i]).margin(1e-14));
  }
}

TEST_CASE("shift_field composes and inverts", "[grid]") {
  TorusGrid g(2, 5);
  ScalarField u(g);
  oracles::fill_random(u, 31);
  ScalarField fwd = shift_field(u, 0, 3);
  ScalarField back = shift_field(fwd, 0, -3);
  for (Index i = 0; i < g.cells(); ++i) REQUIRE(back[i] == u[i]);
  // out(x) = u(x + by e): check one cell explicitly.
  std::array<int, 3> x{1, 2, 0};
  std::array<int, 3> xs{4, 2, 0};
  REQUIRE(fwd[g.index(x)] == u[g.index(xs)]);
}

TEST_CASE("iterated partials commute exactly", "[grid]") {
  TorusGrid g(3, 4);
  ScalarField u(g);
  oracles::fill_random(u, 37);
  ScalarField d01 = iterated_partial(u, {0, 1});
  ScalarField d10 = iterated_partial(u, {1, 0});
  for (Index i = 0; i < g.cells(); ++i) REQUIRE(d01[i] == Catch::Approx(d10[i]).margin(1e-15));
  ScalarField d012 = iterated_partial(u, {0, 1, 2});
  ScalarField d210 = iterated_partial(u, {2, 1, 0});
  for (Index i = 0; i < g.cells(); ++i) REQUIRE(d012[i] == Catch::Approx(d210[i]).margin(1e-14));
}

TEST_CASE("row divergence of a constant skew matrix vanishes", "[grid]") {
  TorusGrid g(2, 6);
  Mat s(2);
  s(0, 1) = 1.5;
  s(1, 0) = -1.5;
  VectorField dv = row_div(MatrixField::constant(g, s));
  REQUIRE(dv.max_abs() == 0.0);
}

TEST_CASE("multi-index enumeration and rank", "[grid]") {
  auto mis = all_multi_indices(2, 2);
  REQUIRE(mis.size() == 4);
  REQUIRE(mis[0] == MultiIndex{0, 0});
  REQUIRE(mis[1] == MultiIndex{0, 1});
  REQUIRE(mis[2] == MultiIndex{1, 0});
  REQUIRE(mis[3] == MultiIndex{1, 1});
  for (size_t k = 0; k < mis.size(); ++k) REQUIRE(multi_index_rank(mis[k], 2) == int(k));
  REQUIRE(all_multi_indices(3, 2).size() == 9);
  REQUIRE(all_multi_indices(3, 0).size() == 1);
}

TEST_CASE("pointwise algebra helpers", "[grid]") {
  TorusGrid g(2, 4);
  MatrixField a(g);
  VectorField v(g);
  oracles::fill_random(v, 41);
  // a = [[2, 1], [0, 3]] everywhere.
  Mat m(2);
  m(0, 0) = 2;
  m(0, 1) = 1;
  m(1, 1) = 3;
  a = MatrixField::constant(g, m);
  VectorField av = matvec(a, v);
  VectorField atv = matvec_transposed(a, v);
  for (Index i = 0; i < g.cells(); ++i) {
    REQUIRE(av.at(0, i) == Catch::Approx(2 * v.at(0, i) + v.at(1, i)));
    REQUIRE(av.at(1, i) == Catch::Approx(3 * v.at(1, i)));
    REQUIRE(atv.at(0, i) == Catch::Approx(2 * v.at(0, i)));
    REQUIRE(atv.at(1, i) == Catch::Approx(v.at(0, i) + 3 * v.at(1, i)));
  }
  auto col = column_average(a, 1);
  REQUIRE(col[0] == Catch::Approx(1.0));
  REQUIRE(col[1] == Catch::Approx(3.0));
}

TEST_CASE("symmetric eigenvalues of known matrices", "[grid]") {
  Mat m(2);
  m(0, 0) = 2;
  m(0, 1) = 1;
  m(1, 0) = 1;
  m(1, 1) = 2;
  auto ev = symmetric_eigenvalues(m);
  REQUIRE(ev[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(ev[1] == Catch::Approx(3.0).margin(1e-12));

  Mat id3(3);
  for (int k = 0; k < 3; ++k) id3(k, k) = 4.0;
  auto e3 = symmetric_eigenvalues(id3);
  for (int k = 0; k < 3; ++k) REQUIRE(e3[size_t(k)] == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("independent flat index agrees with the grid", "[grid][oracle]") {
  TorusGrid g(3, 6);
  for (Index i = 0; i < g.cells(); ++i) {
    auto x = g.coords(i);
    REQUIRE(oracles::flat(3, 6, x) == i);
    auto back = oracles::unflat(3, 6, i);
    REQUIRE(back == x);
  }
}
