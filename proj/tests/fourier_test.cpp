#include <catch2/catch_amalgamated.hpp>
#include <complex>

#include "homlab/fourier.hpp"
#include "support/oracles.hpp"

using namespace homlab;

TEST_CASE("transform of a delta is flat and round-trips", "[fourier]") {
  TorusGrid g(2, 8);
  ScalarField u(g, 0.0);
  u[0] = 1.0;
  SpectralField s = fourier_transform(u);
  for (const Complex& c : s) {
    REQUIRE(c.real() == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(c.imag() == Catch::Approx(0.0).margin(1e-12));
  }
  ScalarField back = inverse_fourier(g, std::move(s));
  for (Index i = 0; i < g.cells(); ++i)
    REQUIRE(back[i] == Catch::Approx(u[i]).margin(1e-13));
}

TEST_CASE("round-trip on random data in both dimensions", "[fourier]") {
  for (int d : {2, 3}) {
    TorusGrid g(d, d == 2 ? 16 : 8);
    ScalarField u(g);
    oracles::fill_random(u, 101 + std::uint64_t(d));
    ScalarField back = inverse_fourier(g, fourier_transform(u));
    double worst = 0;
    for (Index i = 0; i < g.cells(); ++i) worst = std::max(worst, std::abs(back[i] - u[i]));
    REQUIRE(worst < 1e-12);
  }
}

TEST_CASE("Parseval with the unnormalized-forward convention", "[fourier]") {
  TorusGrid g(2, 12);
  ScalarField u(g);
  oracles::fill_random(u, 103);
  double direct = 0;
  for (Index i = 0; i < g.cells(); ++i) direct += u[i] * u[i];
  SpectralField s = fourier_transform(u);
  REQUIRE(spectral_energy(s) / double(g.cells()) ==
          Catch::Approx(direct).epsilon(1e-12));
}

TEST_CASE("forward difference acts as the forward symbol", "[fourier]") {
  TorusGrid g(2, 10);
  ScalarField u(g);
  oracles::fill_random(u, 107);
  for (int ax = 0; ax < 2; ++ax) {
    SpectralField lhs = fourier_transform(forward_diff(u, ax));
    SpectralField uh = fourier_transform(u);
    double worst = 0;
    for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
      Complex want = forward_symbol(xi[size_t(ax)], g.side()) * uh[size_t(idx)];
      worst = std::max(worst, std::abs(lhs[size_t(idx)] - want));
    });
    REQUIRE(worst < 1e-10);
  }
}

TEST_CASE("div grad acts as minus the Laplace symbol", "[fourier]") {
  TorusGrid g(3, 6);
  ScalarField u(g);
  oracles::fill_random(u, 109);
  ScalarField lap = adjoint_div(gradient(u));
  SpectralField lhs = fourier_transform(lap);
  SpectralField uh = fourier_transform(u);
  double worst = 0;
  for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
    Complex want = -laplace_symbol(xi, 3, g.side()) * uh[size_t(idx)];
    worst = std::max(worst, std::abs(lhs[size_t(idx)] - want));
  });
  REQUIRE(worst < 1e-10);
}

TEST_CASE("Laplace symbol equals the squared modulus of the forward symbols", "[fourier]") {
  TorusGrid g(2, 14);
  for_modes(g, [&](Index, const std::array<int, 3>& xi) {
    double sum = 0;
    for (int k = 0; k < 2; ++k) sum += std::norm(forward_symbol(xi[size_t(k)], g.side()));
    REQUIRE(laplace_symbol(xi, 2, g.side()) == Catch::Approx(sum).margin(1e-12));
  });
}

TEST_CASE("negate_mode pairs conjugate frequencies of a real field", "[fourier]") {
  TorusGrid g(2, 8);
  ScalarField u(g);
  oracles::fill_random(u, 113);
  SpectralField s = fourier_transform(u);
  for_modes(g, [&](Index idx, const std::array<int, 3>&) {
    Index m = negate_mode(g, idx);
    REQUIRE(std::abs(s[size_t(idx)] - std::conj(s[size_t(m)])) < 1e-10);
    REQUIRE(negate_mode(g, m) == idx);  // involution
  });
}

TEST_CASE("for_modes covers every cell exactly once", "[fourier]") {
  TorusGrid g(3, 4);
  std::vector<int> seen(size_t(g.cells()), 0);
  for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
    REQUIRE(g.index(xi) == idx);
    ++seen[size_t(idx)];
  });
  for (int c : seen) REQUIRE(c == 1);
}
