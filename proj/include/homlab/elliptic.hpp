#pragma once

// =============================================================================
// Discrete divergence-form elliptic operators and Krylov solvers.
//
// The operator is (L u)(x) = -div(a grad u)(x) built from the exact-adjoint
// calculus in grid.hpp, so L is symmetric iff a(x) is pointwise symmetric,
// and L u always sums to zero. Right-hand sides arise as div(flux), hence
// are exactly zero-sum; solutions are pinned by zero mean.
//
// Preconditioner: the exact inverse of the constant-coefficient operator
// s_bar * (-Laplacian) in Fourier space (zero mode annihilated). This is a
// spectrally equivalent preconditioner for lambda-elliptic a, giving
// condition-number-independent-of-M iteration counts.
//
// Symmetric a -> preconditioned CG; nonsymmetric a -> preconditioned
// BiCGStab. Both monitor the true relative residual ||b - L u|| / ||b||.
// =============================================================================

#include <cmath>
#include <stdexcept>
#include <vector>

#include "homlab/fourier.hpp"
#include "homlab/grid.hpp"

namespace homlab {

struct SolveOptions {
  double tol = 1e-11;        // relative residual target
  int max_iter = 2000;       // iteration cap
  bool force_nonsymmetric = false;  // use BiCGStab even for symmetric a
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double rel_residual = 0.0;
  bool nonsymmetric_path = false;
};

/// Whether the coefficient field is pointwise symmetric (exact comparison).
inline bool is_pointwise_symmetric(const MatrixField& a) {
  const TorusGrid& g = a.grid();
  for (int r = 0; r < g.dim(); ++r)
    for (int c = r + 1; c < g.dim(); ++c) {
      const double* u = a.comp(r, c);
      const double* v = a.comp(c, r);
      for (Index i = 0; i < g.cells(); ++i)
        if (u[i] != v[i]) return false;
    }
  return true;
}

/// out = -div(a grad u). Fresh-allocation convenience wrapper.
inline ScalarField apply_operator(const MatrixField& a, const ScalarField& u) {
  ScalarField out = adjoint_div(matvec(a, gradient(u)));
  double* o = out.data();
  for (Index i = 0; i < out.size(); ++i) o[i] = -o[i];
  return out;
}

/// Spectral solve of -div(grad u) = rhs with mean-zero u.
/// rhs must be (numerically) zero-sum; the zero mode of the solution is 0.
/// The guard has an absolute floor so that rhs fields that are themselves
/// round-off noise (e.g. the divergence of a converged flux) stay solvable.
inline ScalarField poisson_solve(const ScalarField& rhs) {
  const TorusGrid& g = rhs.grid();
  const double mean = rhs.sum() / double(g.cells());
  const double scale = rhs.max_abs();
  if (std::abs(mean) > 1e-12 + 1e-8 * scale)
    throw std::invalid_argument("poisson_solve: rhs is not zero-sum");
  SpectralField s = fourier_transform(rhs);
  for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
    double lap = laplace_symbol(xi, g.dim(), g.side());
    s[size_t(idx)] = (lap > 0.0) ? s[size_t(idx)] / lap : Complex(0.0, 0.0);
  });
  return inverse_fourier(g, std::move(s));
}

/// Reusable solver for one coefficient field (owns scratch storage and the
/// preconditioner symbol; cheap to call repeatedly, e.g. along a corrector
/// hierarchy).
class DivFormSolver {
 public:
  explicit DivFormSolver(const MatrixField& a, SolveOptions opt = {})
      : a_(&a), opt_(opt), grid_(a.grid()) {
    symmetric_ = !opt.force_nonsymmetric && is_pointwise_symmetric(a);
    // Mean diagonal entry sets the preconditioner scale.
    double s = 0;
    for (int k = 0; k < grid_.dim(); ++k) {
      const double* d = a.comp(k, k);
      for (Index i = 0; i < grid_.cells(); ++i) s += d[i];
    }
    scale_ = s / (double(grid_.cells()) * grid_.dim());
    if (!(scale_ > 0.0)) throw std::invalid_argument("DivFormSolver: nonpositive mean diagonal");
    inv_symbol_.assign(size_t(grid_.cells()), 0.0);
    for_modes(grid_, [&](Index idx, const std::array<int, 3>& xi) {
      double lap = laplace_symbol(xi, grid_.dim(), grid_.side());
      inv_symbol_[size_t(idx)] = (lap > 0.0) ? 1.0 / (scale_ * lap) : 0.0;
    });
    grad_ = VectorField(grid_);
    flux_ = VectorField(grid_);
    spec_.resize(size_t(grid_.cells()));
  }

  const TorusGrid& grid() const { return grid_; }
  bool symmetric_path() const { return symmetric_; }

  /// out = -div(a grad u) without fresh allocations.
  void apply(const ScalarField& u, ScalarField& out) {
    ScalarField tmp(grid_);
    for (int k = 0; k < grid_.dim(); ++k) {
      forward_diff_into(u, k, tmp);
      std::copy(tmp.data(), tmp.data() + grid_.cells(), grad_.comp(k));
    }
    for (int r = 0; r < grid_.dim(); ++r) {
      double* f = flux_.comp(r);
      std::fill(f, f + grid_.cells(), 0.0);
      for (int c = 0; c < grid_.dim(); ++c) {
        const double* ac = a_->comp(r, c);
        const double* gcomp = grad_.comp(c);
        for (Index i = 0; i < grid_.cells(); ++i) f[i] += ac[i] * gcomp[i];
      }
    }
    ScalarField div = adjoint_div(flux_);
    double* o = out.data();
    const double* dsrc = div.data();
    for (Index i = 0; i < grid_.cells(); ++i) o[i] = -dsrc[i];
  }

  /// Solve -div(a grad u) = div(flux) for mean-zero u.
  SolveReport solve_rhs_div(const VectorField& flux, ScalarField& u) {
    ScalarField b = adjoint_div(flux);
    return solve(b, u);
  }

  /// Solve L u = b for zero-sum b, mean-zero u (initial guess: zero).
  SolveReport solve(const ScalarField& b, ScalarField& u) {
    SolveReport rep;
    rep.nonsymmetric_path = !symmetric_;
    const double bnorm = b.l2();
    u = ScalarField(grid_, 0.0);
    if (bnorm == 0.0) {
      rep.converged = true;
      return rep;
    }
    if (symmetric_)
      pcg(b, u, bnorm, rep);
    else
      bicgstab(b, u, bnorm, rep);
    u.shift_mean_to_zero();
    return rep;
  }

 private:
  /// z = K^{-1} r: exact inverse of s_bar * (-Laplacian), zero mode pinned.
  void precondition(const ScalarField& r, ScalarField& z) {
    const double* src = r.data();
    for (size_t i = 0; i < spec_.size(); ++i) spec_[i] = Complex(src[i], 0.0);
    fft_forward_inplace(grid_, spec_);
    for (size_t i = 0; i < spec_.size(); ++i) spec_[i] *= inv_symbol_[i];
    fft_inverse_inplace(grid_, spec_);
    double* dst = z.data();
    for (size_t i = 0; i < spec_.size(); ++i) dst[i] = spec_[i].real();
  }

  void pcg(const ScalarField& b, ScalarField& u, double bnorm, SolveReport& rep) {
    ScalarField r = b, z(grid_), p(grid_), Ap(grid_);
    precondition(r, z);
    p = z;
    double rz = inner(r, z);
    for (int it = 0; it < opt_.max_iter; ++it) {
      apply(p, Ap);
      const double pAp = inner(p, Ap);
      if (!(pAp > 0)) break;  // loss of positivity: bail out, report residual
      const double alpha = rz / pAp;
      add_scaled(u, alpha, p);
      add_scaled(r, -alpha, Ap);
      rep.iterations = it + 1;
      rep.rel_residual = r.l2() / bnorm;
      if (rep.rel_residual <= opt_.tol) {
        rep.converged = true;
        return;
      }
      precondition(r, z);
      const double rz_new = inner(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      double* pd = p.data();
      const double* zd = z.data();
      for (Index i = 0; i < grid_.cells(); ++i) pd[i] = zd[i] + beta * pd[i];
    }
    rep.rel_residual = r.l2() / bnorm;
    rep.converged = rep.rel_residual <= opt_.tol;
  }

  void bicgstab(const ScalarField& b, ScalarField& u, double bnorm, SolveReport& rep) {
    ScalarField r = b, rhat = b;
    ScalarField p(grid_), v(grid_), s(grid_), t(grid_), phat(grid_), shat(grid_);
    double rho_prev = 1.0, alpha = 1.0, omega = 1.0;
    for (int it = 0; it < opt_.max_iter; ++it) {
      const double rho = inner(rhat, r);
      if (std::abs(rho) < 1e-300) break;
      if (it == 0) {
        p = r;
      } else {
        const double beta = (rho / rho_prev) * (alpha / omega);
        double* pd = p.data();
        const double* rd = r.data();
        const double* vd = v.data();
        for (Index i = 0; i < grid_.cells(); ++i)
          pd[i] = rd[i] + beta * (pd[i] - omega * vd[i]);
      }
      precondition(p, phat);
      apply(phat, v);
      const double rv = inner(rhat, v);
      if (std::abs(rv) < 1e-300) break;
      alpha = rho / rv;
      s = r;
      add_scaled(s, -alpha, v);
      rep.iterations = it + 1;
      if (s.l2() / bnorm <= opt_.tol) {
        add_scaled(u, alpha, phat);
        rep.rel_residual = s.l2() / bnorm;
        rep.converged = true;
        return;
      }
      precondition(s, shat);
      apply(shat, t);
      const double tt = inner(t, t);
      if (tt < 1e-300) break;
      omega = inner(t, s) / tt;
      add_scaled(u, alpha, phat);
      add_scaled(u, omega, shat);
      r = s;
      add_scaled(r, -omega, t);
      rep.rel_residual = r.l2() / bnorm;
      if (rep.rel_residual <= opt_.tol) {
        rep.converged = true;
        return;
      }
      if (std::abs(omega) < 1e-300) break;
      rho_prev = rho;
    }
    // Recompute the true residual before reporting.
    ScalarField Au(grid_);
    apply(u, Au);
    ScalarField res = b;
    add_scaled(res, -1.0, Au);
    rep.rel_residual = res.l2() / bnorm;
    rep.converged = rep.rel_residual <= opt_.tol;
  }

  const MatrixField* a_;
  SolveOptions opt_;
  TorusGrid grid_;
  bool symmetric_ = true;
  double scale_ = 1.0;
  std::vector<double> inv_symbol_;
  VectorField grad_, flux_;
  SpectralField spec_;
};

/// One-shot convenience: solve -div(a grad u) = div(flux).
inline std::pair<ScalarField, SolveReport> solve_div_form(const MatrixField& a,
                                                          const VectorField& flux,
                                                          SolveOptions opt = {}) {
  DivFormSolver solver(a, opt);
  ScalarField u(a.grid());
  SolveReport rep = solver.solve_rhs_div(flux, u);
  return {std::move(u), rep};
}

}  // namespace homlab
