#pragma once

// =============================================================================
// Discrete Fourier transforms on the torus grid and associated multipliers.
//
// Conventions:
//   forward :  u_hat(xi) = sum_x u(x) exp(-2 pi i xi . x / M)
//   inverse :  u(x) = M^{-d} sum_xi u_hat(xi) exp(+2 pi i xi . x / M)
//
// so inverse(forward(u)) == u exactly (up to rounding). Frequencies xi live
// on the same row-major lattice as cells (xi[0] fastest).
//
// The forward-difference operator D_k diagonalizes with symbol
//   m_k(xi) = exp(2 pi i xi_k / M) - 1,
// the backward difference with conj(m_k), and the five/seven-point
// Laplacian sum_k D-_k D_k with the real symbol
//   lap(xi) = sum_k |m_k(xi)|^2 = sum_k 4 sin^2(pi xi_k / M).
//
// Backend: FFTW3 with FFTW_ESTIMATE planning only, which keeps plan creation
// deterministic. Plans are cached per (dim, side, direction) and creation is
// serialized behind a mutex; execution uses the new-array interface and is
// safe to call concurrently from worker threads.
// =============================================================================

#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

#include "homlab/grid.hpp"

namespace homlab {

using Complex = std::complex<double>;
using SpectralField = std::vector<Complex>;

namespace detail {

struct PlanKey {
  int dim;
  int side;
  int sign;  // FFTW_FORWARD or FFTW_BACKWARD
  bool operator<(const PlanKey& o) const {
    if (dim != o.dim) return dim < o.dim;
    if (side != o.side) return side < o.side;
    return sign < o.sign;
  }
};

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache c;
    return c;
  }

  /// Execute an in-place complex DFT over `data` for the grid shape.
  void execute(const TorusGrid& g, int sign, Complex* data) {
    fftw_plan plan = nullptr;
    {
      std::lock_guard<std::mutex> lock(mu_);
      PlanKey key{g.dim(), g.side(), sign};
      auto it = plans_.find(key);
      if (it == plans_.end()) {
        // Plan on a scratch buffer with FFTW_UNALIGNED so the plan can later
        // be executed on any array of the same shape.
        std::vector<Complex> scratch(size_t(g.cells()));
        int n[3] = {g.side(), g.side(), g.side()};
        plan = fftw_plan_dft(g.dim(), n, reinterpret_cast<fftw_complex*>(scratch.data()),
                             reinterpret_cast<fftw_complex*>(scratch.data()), sign,
                             FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!plan) throw std::runtime_error("fftw_plan_dft failed");
        plans_.emplace(key, plan);
      } else {
        plan = it->second;
      }
    }
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data),
                     reinterpret_cast<fftw_complex*>(data));
  }

 private:
  PlanCache() = default;
  std::mutex mu_;
  std::map<PlanKey, fftw_plan> plans_;
};

}  // namespace detail

/// In-place forward DFT of a complex array laid out like grid cells.
inline void fft_forward_inplace(const TorusGrid& g, SpectralField& data) {
  if (Index(data.size()) != g.cells()) throw std::invalid_argument("fft: size mismatch");
  detail::PlanCache::instance().execute(g, FFTW_FORWARD, data.data());
}

/// In-place inverse DFT including the 1/M^d normalization.
inline void fft_inverse_inplace(const TorusGrid& g, SpectralField& data) {
  if (Index(data.size()) != g.cells()) throw std::invalid_argument("fft: size mismatch");
  detail::PlanCache::instance().execute(g, FFTW_BACKWARD, data.data());
  const double scale = 1.0 / double(g.cells());
  for (Complex& z : data) z *= scale;
}

/// Forward transform of a real scalar field.
inline SpectralField fourier_transform(const ScalarField& u) {
  SpectralField out(size_t(u.size()));
  const double* src = u.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = Complex(src[i], 0.0);
  fft_forward_inplace(u.grid(), out);
  return out;
}

/// Inverse transform, returning the real part (imaginary part must be noise;
/// callers with genuinely complex data use fft_inverse_inplace directly).
inline ScalarField inverse_fourier(const TorusGrid& g, SpectralField spectrum) {
  fft_inverse_inplace(g, spectrum);
  ScalarField out(g);
  double* dst = out.data();
  for (size_t i = 0; i < spectrum.size(); ++i) dst[i] = spectrum[i].real();
  return out;
}

/// Symbol of the forward difference D_k at frequency component xi_k.
inline Complex forward_symbol(int xi_k, int side) {
  const double t = 2.0 * 3.14159265358979323846 * double(xi_k) / double(side);
  return Complex(std::cos(t) - 1.0, std::sin(t));
}

/// Symbol of the discrete Laplacian sum_k D-_k D_k (non-negative, zero only
/// at the zero mode): lap(xi) = sum_k 4 sin^2(pi xi_k / M).
inline double laplace_symbol(const std::array<int, 3>& xi, int dim, int side) {
  double s = 0;
  for (int k = 0; k < dim; ++k) {
    double t = std::sin(3.14159265358979323846 * double(xi[size_t(k)]) / double(side));
    s += 4.0 * t * t;
  }
  return s;
}

/// Visit every frequency as (linear index, coordinate array).
template <class F>
inline void for_modes(const TorusGrid& g, F&& f) {
  std::array<int, 3> xi{0, 0, 0};
  const int M = g.side();
  const int d = g.dim();
  for (Index idx = 0; idx < g.cells(); ++idx) {
    f(idx, xi);
    for (int k = 0; k < d; ++k) {
      if (++xi[size_t(k)] < M) break;
      xi[size_t(k)] = 0;
    }
  }
}

/// Linear index of the negated frequency -xi (mod M).
inline Index negate_mode(const TorusGrid& g, Index idx) {
  std::array<int, 3> xi = g.coords(idx);
  std::array<int, 3> neg{0, 0, 0};
  for (int k = 0; k < g.dim(); ++k) neg[size_t(k)] = g.wrap(-xi[size_t(k)]);
  return g.index(neg);
}

/// Parseval sum: sum_xi |u_hat(xi)|^2 == M^d sum_x |u(x)|^2.
inline double spectral_energy(const SpectralField& s) {
  double e = 0;
  for (const Complex& z : s) e += std::norm(z);
  return e;
}

}  // namespace homlab
