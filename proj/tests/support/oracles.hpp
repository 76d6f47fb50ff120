#pragma once

// =============================================================================
// Independent reference implementations used only by the tests.
//
// Everything here is written from the plain definitions with its own index
// arithmetic, so that agreement with the library is a genuine cross-check
// rather than a tautology: dense assembly + LU for the elliptic operator,
// the one-dimensional layered recurrence, finite differences for the bump
// profile, and brute-force lattice sums for the estimator.
// =============================================================================

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "homlab/homlab.hpp"

namespace oracles {

using homlab::Index;
using homlab::MatrixField;
using homlab::ScalarField;
using homlab::TorusGrid;
using homlab::VectorField;

/// Flat index with x[0] fastest, recomputed from scratch (wraps negatives).
inline Index flat(int dim, int side, std::array<int, 3> x) {
  Index idx = 0, stride = 1;
  for (int k = 0; k < dim; ++k) {
    int c = ((x[size_t(k)] % side) + side) % side;
    idx += Index(c) * stride;
    stride *= side;
  }
  return idx;
}

inline std::array<int, 3> unflat(int dim, int side, Index idx) {
  std::array<int, 3> x{0, 0, 0};
  for (int k = 0; k < dim; ++k) {
    x[size_t(k)] = int(idx % side);
    idx /= side;
  }
  return x;
}

/// Dense matrix of u -> -div(a D u), assembled cell by cell from the stencil
///   F_k(x) = sum_p a_{kp}(x) (u(x+e_p) - u(x)),
///   (L u)(x) = -sum_k [F_k(x) - F_k(x-e_k)].
inline std::vector<double> dense_operator_matrix(const MatrixField& a) {
  const TorusGrid& g = a.grid();
  const int d = g.dim(), M = g.side();
  const Index N = g.cells();
  std::vector<double> A(size_t(N) * size_t(N), 0.0);
  auto at = [&](Index r, Index c) -> double& { return A[size_t(r) * size_t(N) + size_t(c)]; };
  for (Index r = 0; r < N; ++r) {
    const std::array<int, 3> x = unflat(d, M, r);
    for (int k = 0; k < d; ++k) {
      std::array<int, 3> xk = x;
      xk[size_t(k)] -= 1;  // x - e_k
      const Index rk = flat(d, M, xk);
      for (int p = 0; p < d; ++p) {
        std::array<int, 3> xp = x;
        xp[size_t(p)] += 1;
        const double c1 = a.at(k, p, r);  // -F_k(x) contribution
        at(r, flat(d, M, xp)) -= c1;
        at(r, r) += c1;
        std::array<int, 3> xkp = xk;
        xkp[size_t(p)] += 1;
        const double c2 = a.at(k, p, rk);  // +F_k(x-e_k) contribution
        at(r, flat(d, M, xkp)) += c2;
        at(r, rk) -= c2;
      }
    }
  }
  return A;
}

/// RHS of the level-1 corrector equation, div(a e_dir), assembled directly.
inline std::vector<double> dense_corrector_rhs(const MatrixField& a, int dir) {
  const TorusGrid& g = a.grid();
  const int d = g.dim(), M = g.side();
  std::vector<double> b(size_t(g.cells()), 0.0);
  for (Index r = 0; r < g.cells(); ++r) {
    const std::array<int, 3> x = unflat(d, M, r);
    for (int k = 0; k < d; ++k) {
      std::array<int, 3> xk = x;
      xk[size_t(k)] -= 1;
      b[size_t(r)] += a.at(k, dir, r) - a.at(k, dir, flat(d, M, xk));
    }
  }
  return b;
}

/// Apply a dense matrix to a vector.
inline std::vector<double> dense_apply(const std::vector<double>& A, const std::vector<double>& u) {
  const size_t N = u.size();
  std::vector<double> out(N, 0.0);
  for (size_t r = 0; r < N; ++r) {
    double s = 0;
    for (size_t c = 0; c < N; ++c) s += A[r * N + c] * u[c];
    out[r] = s;
  }
  return out;
}

/// Gaussian elimination with partial pivoting. The operator annihilates
/// constants and its rows sum to zero, so for compatible data the last
/// equation is implied by the others; it is replaced by the mean-zero
/// constraint to pin the solution.
inline std::vector<double> dense_solve_mean_zero(std::vector<double> A, std::vector<double> b) {
  const size_t N = b.size();
  if (A.size() != N * N) throw std::invalid_argument("dense_solve_mean_zero: shape mismatch");
  for (size_t c = 0; c < N; ++c) A[(N - 1) * N + c] = 1.0;
  b[N - 1] = 0.0;
  for (size_t col = 0; col < N; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < N; ++r)
      if (std::abs(A[r * N + col]) > std::abs(A[piv * N + col])) piv = r;
    if (piv != col) {
      for (size_t c = 0; c < N; ++c) std::swap(A[piv * N + c], A[col * N + c]);
      std::swap(b[piv], b[col]);
    }
    const double diag = A[col * N + col];
    if (std::abs(diag) < 1e-300) throw std::runtime_error("dense_solve_mean_zero: singular pivot");
    for (size_t r = col + 1; r < N; ++r) {
      const double f = A[r * N + col] / diag;
      if (f == 0.0) continue;
      for (size_t c = col; c < N; ++c) A[r * N + c] -= f * A[col * N + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(N, 0.0);
  for (size_t ri = N; ri-- > 0;) {
    double s = b[ri];
    for (size_t c = ri + 1; c < N; ++c) s -= A[ri * N + c] * x[c];
    x[ri] = s / A[ri * N + ri];
  }
  return x;
}

inline double harmonic_mean(const std::vector<double>& s) {
  double inv = 0;
  for (double v : s) inv += 1.0 / v;
  return double(s.size()) / inv;
}

inline double arithmetic_mean(const std::vector<double>& s) {
  double t = 0;
  for (double v : s) t += v;
  return t / double(s.size());
}

/// First-order corrector profile of a layered scalar coefficient a = s(x_ax) Id
/// in the layered direction, from the one-dimensional recurrence: the flux
/// s (D phi + 1) is constant across layers, equal to the harmonic mean of s.
inline std::vector<double> layered_corrector_profile(const std::vector<double>& s) {
  const size_t M = s.size();
  const double hmean = harmonic_mean(s);
  std::vector<double> phi(M, 0.0);
  for (size_t t = 0; t + 1 < M; ++t) phi[t + 1] = phi[t] + hmean / s[t] - 1.0;
  double mean = 0;
  for (double v : phi) mean += v;
  mean /= double(M);
  for (double& v : phi) v -= mean;
  return phi;
}

/// Central finite difference of one more partial on top of `rest`, used to
/// cross-check the closed-form bump partials order by order.
inline double eta_partial_fd(const std::array<double, 3>& y, int dim, int axis,
                             const homlab::MultiIndex& rest, double h = 1e-6) {
  std::array<double, 3> yp = y, ym = y;
  yp[size_t(axis)] += h;
  ym[size_t(axis)] -= h;
  return (homlab::bump::eta_partial(yp, dim, rest) - homlab::bump::eta_partial(ym, dim, rest)) /
         (2.0 * h);
}

/// Brute-force windowed observable F_z = sum_x g(x - z) xi(x).
inline double windowed_observable(const ScalarField& gwin, const ScalarField& xi,
                                  std::array<int, 3> z) {
  const TorusGrid& g = xi.grid();
  double s = 0;
  for (Index idx = 0; idx < g.cells(); ++idx) {
    std::array<int, 3> x = g.coords(idx);
    std::array<int, 3> rel{0, 0, 0};
    for (int k = 0; k < g.dim(); ++k) rel[size_t(k)] = x[size_t(k)] - z[size_t(k)];
    s += gwin[g.index(rel)] * xi[idx];
  }
  return s;
}

/// Brute-force translation-averaged product
///   (1/M^d) sum_z F_z F'_{z + lag},
/// the quantity the spectral path of the decay scan computes in O(M^d log M).
inline double translation_product(const ScalarField& gwin, const ScalarField& xi1,
                                  const ScalarField& xi2, std::array<int, 3> lag) {
  const TorusGrid& g = xi1.grid();
  double s = 0;
  for (Index z = 0; z < g.cells(); ++z) {
    std::array<int, 3> zc = g.coords(z);
    std::array<int, 3> zs = zc;
    for (int k = 0; k < g.dim(); ++k) zs[size_t(k)] += lag[size_t(k)];
    s += windowed_observable(gwin, xi1, zc) * windowed_observable(gwin, xi2, zs);
  }
  return s / double(g.cells());
}

/// Deterministic field fillers for pure-calculus identities.
inline void fill_random(ScalarField& u, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (Index i = 0; i < u.size(); ++i) u[i] = dist(eng);
}

inline void fill_random(VectorField& F, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int k = 0; k < F.grid().dim(); ++k) {
    double* c = F.comp(k);
    for (Index i = 0; i < F.grid().cells(); ++i) c[i] = dist(eng);
  }
}

}  // namespace oracles
