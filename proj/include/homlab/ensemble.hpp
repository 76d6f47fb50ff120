#pragma once

// =============================================================================
// Stationary Gaussian ensembles on the torus and coefficient maps.
//
// A sample is drawn spectrally: each lattice frequency xi receives an
// independent complex Gaussian weight W(xi) (counter-based, so sample k is a
// pure function of (seed, k)), the Hermitian combination
//
//   G_hat(xi) = sqrt(S(k(xi)) M^d) * (W(xi) + conj(W(-xi))) / sqrt(2)
//
// is formed, and G = inverse DFT of G_hat. This yields an exactly stationary,
// exactly centered (in the ensemble) real Gaussian field whose covariance is
//   Cov(G(x), G(0)) = M^{-d} sum_xi S(k(xi)) exp(2 pi i xi.x / M),
// i.e. the inverse transform of the spectral density sampled at the lattice
// wavenumbers k(xi) = 2 pi wrap(xi) / M in [-pi, pi)^d.
//
// Coefficient fields are pointwise pushforwards a(x) = A(G(x)) with A a
// Lipschitz map into lambda-elliptic matrices (uniform bounds
// xi.a xi >= lambda |xi|^2 and xi.a^{-1} xi >= |xi|^2).
// =============================================================================

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "homlab/fourier.hpp"
#include "homlab/grid.hpp"
#include "homlab/rng.hpp"

namespace homlab {

// =============================================================================
// Spectral covariance families
// =============================================================================

enum class SpectralFamily {
  StableExp,   // S(k) = sigma2 * exp(-(ell |k|)^alpha0); kernel tail ~ r^{-(d+alpha0)}
  MaternLike,  // S(k) = sigma2 * (1 + (ell |k|)^2)^{-(d/2+alpha0)}; kernel tail super-polynomial
};

struct SpectralCovariance {
  SpectralFamily family = SpectralFamily::StableExp;
  double alpha0 = 1.0;  // decay index, in (0, d/2]
  double ell = 2.0;     // correlation length in cells
  double sigma2 = 25.0; // spectral amplitude

  void validate(int dim) const {
    if (!(alpha0 > 0.0)) throw std::invalid_argument("SpectralCovariance: alpha0 must be > 0");
    if (alpha0 > 0.5 * dim + 1e-12)
      throw std::invalid_argument("SpectralCovariance: alpha0 must be <= d/2");
    if (!(ell > 0.0)) throw std::invalid_argument("SpectralCovariance: ell must be > 0");
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("SpectralCovariance: sigma2 must be >= 0");
  }
};

/// Spectral density S at physical wavenumber magnitude |k| (nonnegative).
inline double spectral_density(const SpectralCovariance& cov, double kmag, int dim) {
  switch (cov.family) {
    case SpectralFamily::StableExp:
      return cov.sigma2 * std::exp(-std::pow(cov.ell * kmag, cov.alpha0));
    case SpectralFamily::MaternLike: {
      double t = cov.ell * kmag;
      return cov.sigma2 * std::pow(1.0 + t * t, -(0.5 * dim + cov.alpha0));
    }
  }
  return 0.0;
}

/// Physical wavenumber magnitude of lattice frequency xi: |2 pi wrap(xi) / M|.
inline double mode_wavenumber(const TorusGrid& g, const std::array<int, 3>& xi) {
  double s = 0;
  for (int k = 0; k < g.dim(); ++k) {
    double t = 2.0 * 3.14159265358979323846 * double(g.min_image(xi[size_t(k)])) / double(g.side());
    s += t * t;
  }
  return std::sqrt(s);
}

/// The exact covariance kernel c(x) = Cov(G(x), G(0)) realized on the grid:
/// inverse transform of the sampled spectral density. Deterministic.
inline ScalarField covariance_kernel(const TorusGrid& g, const SpectralCovariance& cov) {
  cov.validate(g.dim());
  SpectralField s(size_t(g.cells()));
  for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
    s[size_t(idx)] = Complex(spectral_density(cov, mode_wavenumber(g, xi), g.dim()), 0.0);
  });
  return inverse_fourier(g, std::move(s));
}

// =============================================================================
// Gaussian sampling
// =============================================================================

/// Draw sample `sample` of the Gaussian field. Pure function of
/// (grid, cov, seed, sample); bitwise reproducible regardless of threading.
inline ScalarField sample_gaussian_field(const TorusGrid& g, const SpectralCovariance& cov,
                                         std::uint64_t seed, std::uint64_t sample) {
  cov.validate(g.dim());
  const size_t n = size_t(g.cells());
  // Independent complex weights W(xi) = (z1 + i z2)/sqrt(2), E|W|^2 = 1.
  std::vector<Complex> w(n);
  for (size_t i = 0; i < n; ++i) {
    auto [z1, z2] = rng::normal_pair(seed, sample, std::uint64_t(i));
    w[i] = Complex(z1, z2) * 0.7071067811865475244;
  }
  const double volume = double(g.cells());
  SpectralField gh(n);
  for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
    const double s = spectral_density(cov, mode_wavenumber(g, xi), g.dim());
    const Index neg = negate_mode(g, idx);
    const Complex pair = (w[size_t(idx)] + std::conj(w[size_t(neg)])) * 0.7071067811865475244;
    gh[size_t(idx)] = std::sqrt(s * volume) * pair;
  });
  return inverse_fourier(g, std::move(gh));
}

// =============================================================================
// Coefficient maps
// =============================================================================

enum class MapKind {
  ScalarLogistic,  // a = s(g) Id,   s = lambda + (1-lambda) sigmoid(g)
  LogisticSkew,    // a = s(g) Id + kappa(g) J,  kappa = theta sqrt(s(1-s)), J skew in the (0,1) plane
};

struct CoefficientMap {
  MapKind kind = MapKind::ScalarLogistic;
  double lambda = 0.25;  // lower ellipticity bound, in (0,1)
  double theta = 0.5;    // skew strength in [0,1), used by LogisticSkew only

  void validate() const {
    if (!(lambda > 0.0 && lambda < 1.0))
      throw std::invalid_argument("CoefficientMap: lambda must be in (0,1)");
    if (!(theta >= 0.0 && theta < 1.0))
      throw std::invalid_argument("CoefficientMap: theta must be in [0,1)");
  }
};

inline double logistic_scalar(const CoefficientMap& m, double g) {
  return m.lambda + (1.0 - m.lambda) / (1.0 + std::exp(-g));
}

/// Pointwise pushforward a(x) = A(G(x)).
/// ScalarLogistic: isotropic with eigenvalues s(G) in (lambda, 1).
/// LogisticSkew: adds the skew part kappa J with kappa^2 = theta^2 s(1-s),
/// which keeps xi . a^{-1} xi >= |xi|^2 for theta < 1 (on the 2x2 block,
/// xi . a^{-1} xi = s |xi|^2 / (s^2 + kappa^2) and kappa^2 <= s(1-s)).
inline MatrixField apply_map(const CoefficientMap& m, const ScalarField& G) {
  m.validate();
  const TorusGrid& g = G.grid();
  MatrixField a(g);
  for (int k = 0; k < g.dim(); ++k) {
    double* d = a.comp(k, k);
    for (Index i = 0; i < g.cells(); ++i) d[i] = logistic_scalar(m, G[i]);
  }
  if (m.kind == MapKind::LogisticSkew) {
    double* a01 = a.comp(0, 1);
    double* a10 = a.comp(1, 0);
    for (Index i = 0; i < g.cells(); ++i) {
      double s = logistic_scalar(m, G[i]);
      double kap = m.theta * std::sqrt(s * (1.0 - s));
      a01[i] = kap;
      a10[i] = -kap;
    }
  }
  return a;
}

/// Lipschitz constant of the map A (operator norm of dA/dg, maximized over g).
inline double map_lipschitz_constant(const CoefficientMap& m) {
  if (m.kind == MapKind::ScalarLogistic) return 0.25 * (1.0 - m.lambda);
  // Numeric maximization for the skew variant (smooth, unimodal tails).
  double best = 0;
  for (int i = 0; i <= 4000; ++i) {
    double g = -40.0 + 80.0 * double(i) / 4000.0;
    double sig = 1.0 / (1.0 + std::exp(-g));
    double ds = (1.0 - m.lambda) * sig * (1.0 - sig);
    double s = m.lambda + (1.0 - m.lambda) * sig;
    double dk = m.theta * std::abs(1.0 - 2.0 * s) / (2.0 * std::sqrt(s * (1.0 - s))) * ds;
    // dA/dg = ds Id + dk J; J orthogonal on its block: |dA|_op <= sqrt(ds^2 + dk^2)
    best = std::max(best, std::sqrt(ds * ds + dk * dk));
  }
  return best;
}

/// Pointwise transpose a^T(x); dual objects are built from this field.
inline MatrixField transpose_field(const MatrixField& a) { return a.transposed(); }

/// Extremes of the symmetric-part eigenvalues over all cells: the realized
/// ellipticity interval. For valid maps this lies inside [lambda, 1].
inline std::pair<double, double> ellipticity_range(const MatrixField& a) {
  const TorusGrid& g = a.grid();
  double lo = 1e300, hi = -1e300;
  Mat m(g.dim());
  for (Index i = 0; i < g.cells(); ++i) {
    for (int r = 0; r < g.dim(); ++r)
      for (int c = 0; c < g.dim(); ++c) m(r, c) = a.at(r, c, i);
    auto ev = symmetric_eigenvalues(m);
    lo = std::min(lo, ev[0]);
    hi = std::max(hi, ev[size_t(g.dim() - 1)]);
  }
  return {lo, hi};
}

// =============================================================================
// Ensemble spec and covariance tail check
// =============================================================================

struct EnsembleSpec {
  TorusGrid grid;
  SpectralCovariance cov;
  CoefficientMap map;
  std::uint64_t seed = 1;

  void validate() const {
    cov.validate(grid.dim());
    map.validate();
  }

  /// Draw the coefficient field for one sample.
  MatrixField sample_coefficient(std::uint64_t sample) const {
    return apply_map(map, sample_gaussian_field(grid, cov, seed, sample));
  }
};

struct TailCheckReport {
  bool ok = false;
  double c0 = 0;                 // kernel value at the origin (field variance)
  double slope = 0;              // fitted log-log tail slope of max_shell |c|
  double envelope_constant = 0;  // max_r |c|(1+r)^{d+alpha0} / c0 over the fit window
  std::vector<std::pair<double, double>> shells;  // (radius, max |c| in shell)
  std::string message;
};

/// Empirical check that the realized kernel decays like (1+r)^{-(d+alpha0)}:
/// bins |c| by integer radius (minimum image), fits the log-log slope of the
/// shell maxima over [rmin, rmax], and reports the envelope constant.
inline TailCheckReport covariance_tail_check(const TorusGrid& g, const SpectralCovariance& cov,
                                             double rmin, double rmax) {
  TailCheckReport rep;
  if (cov.sigma2 <= 0.0) {
    rep.message = "degenerate covariance: sigma2 <= 0";
    return rep;
  }
  ScalarField c = covariance_kernel(g, cov);
  rep.c0 = c[0];
  if (!(rep.c0 > 0.0)) {
    rep.message = "degenerate covariance: c(0) <= 0";
    return rep;
  }
  const int maxbin = g.side() / 2 + 1;
  std::vector<double> shell_max(size_t(maxbin) + 1, 0.0);
  for_modes(g, [&](Index idx, const std::array<int, 3>& x) {
    double r2 = 0;
    for (int k = 0; k < g.dim(); ++k) {
      double t = double(g.min_image(x[size_t(k)]));
      r2 += t * t;
    }
    int bin = int(std::floor(std::sqrt(r2) + 0.5));
    if (bin <= maxbin) shell_max[size_t(bin)] = std::max(shell_max[size_t(bin)], std::abs(c[idx]));
  });
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int npts = 0;
  for (int r = 1; r <= maxbin; ++r) {
    if (r < rmin || r > rmax) continue;
    double m = shell_max[size_t(r)];
    rep.shells.emplace_back(double(r), m);
    if (m <= 0.0) continue;
    rep.envelope_constant =
        std::max(rep.envelope_constant, m * std::pow(1.0 + r, g.dim() + cov.alpha0) / rep.c0);
    double lx = std::log(double(r)), ly = std::log(m);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++npts;
  }
  if (npts < 3) {
    rep.message = "tail window too small for a fit";
    return rep;
  }
  double denom = double(npts) * sxx - sx * sx;
  rep.slope = (double(npts) * sxy - sx * sy) / denom;
  rep.ok = true;
  rep.message = "ok";
  return rep;
}

}  // namespace homlab
