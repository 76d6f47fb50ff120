#pragma once

// =============================================================================
// The higher-order corrector hierarchy on the periodic lattice.
//
// Level 1, direction i1:          -div(a D phi_{i1}) = div(a e_{i1})
// Level n >= 2, multi-index (i1..in), built on level n-1:
//   -div(a D phi_{i1..in}) = div( (a phi_{i1..i_{n-1}} - sigma_{i1..i_{n-1}}) e_{in} )
//
// Effective tensors (one d x d matrix per prefix of length n-1):
//   abar^n_{i1..i_{n-1}} e_{in} = < a D phi^n + F >,  F the level RHS flux
// (the sigma part of F has exact zero mean, so this equals
//  < a (D phi^n + phi^{n-1} e_{in}) > ).
//
// Fluxes q^n = a D phi^n + F - abar^n e_{in} have exactly zero mean by
// construction. Flux correctors sigma^n are built spectrally:
//   sigma_hat_{jk}(xi) = ( m_j(xi) q_hat_k(xi) - m_k(xi) q_hat_j(xi) ) / lap(xi)
// which is exactly skew, has zero mean, and satisfies
//   (div sigma)_j = sum_k D-_k sigma_{jk} = divergence-free part of q_j.
// When the corrector equation is solved exactly, div q = 0 and div sigma = q.
//
// These exact identities chain into the key relation (phi^0 == 1, sigma^0 == 0)
//   (a phi^{k-1} - sigma^{k-1}) e_{ik}
//       = -a D phi^k + div sigma^k + abar^k_{i1..i_{k-1}} e_{ik},
// which is what makes the commutator representations below telescope.
//
// Dual objects (phi^*, sigma^*, abar^*) are the same construction applied to
// the pointwise transpose field a^T. On the torus, abar^{*,1} = (abar^1)^T
// holds per sample (up to solver tolerance), and the higher-order tensors
// satisfy the alternating-sign symmetrized relation
//   Sym_{i1..in} (e_j . abar^n_{i1..i_{n-1}} e_{in})
//     = (-1)^{n+1} Sym_{i1..in} (e_{in} . abar^{*,n}_{j i1..i_{n-2}} e_{i_{n-1}})
// in the ensemble mean.
// =============================================================================

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "homlab/elliptic.hpp"
#include "homlab/fourier.hpp"
#include "homlab/grid.hpp"

namespace homlab {

struct CorrectorLevel {
  int level = 0;                      // n
  std::vector<ScalarField> phi;       // d^n fields, multi-indices in lexicographic order
  std::vector<VectorField> grad_phi;  // forward gradients of phi
  std::vector<VectorField> flux;      // q^n, exactly mean-zero
  std::vector<MatrixField> sigma;     // flux correctors, exactly skew and mean-zero
  std::vector<Mat> abar;              // d^{n-1} effective matrices, prefix-indexed
  std::vector<SolveReport> reports;

  const ScalarField& phi_at(const MultiIndex& mi, int dim) const {
    return phi[size_t(multi_index_rank(mi, dim))];
  }
  const Mat& abar_at(const MultiIndex& prefix, int dim) const {
    return abar[size_t(multi_index_rank(prefix, dim))];
  }
};

struct CorrectorHierarchy {
  std::vector<CorrectorLevel> levels;  // levels[k] holds level k+1

  int depth() const { return int(levels.size()); }
  const CorrectorLevel& level(int n) const { return levels.at(size_t(n - 1)); }
  CorrectorLevel& level(int n) { return levels.at(size_t(n - 1)); }

  /// Worst relative residual across all solves in the hierarchy.
  double worst_residual() const {
    double w = 0;
    for (const auto& lv : levels)
      for (const auto& r : lv.reports) w = std::max(w, r.rel_residual);
    return w;
  }
};

/// Spectral flux-corrector construction (see header comment). The input flux
/// should be mean-zero; the zero mode is annihilated regardless.
inline MatrixField sigma_from_flux(const VectorField& q) {
  const TorusGrid& g = q.grid();
  const int d = g.dim();
  std::vector<SpectralField> qh(static_cast<size_t>(d));
  for (int k = 0; k < d; ++k) {
    ScalarField comp(g);
    std::copy(q.comp(k), q.comp(k) + g.cells(), comp.data());
    qh[size_t(k)] = fourier_transform(comp);
  }
  MatrixField sigma(g, 0.0);
  SpectralField s(size_t(g.cells()));
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      for_modes(g, [&](Index idx, const std::array<int, 3>& xi) {
        const double lap = laplace_symbol(xi, d, g.side());
        if (lap <= 0.0) {
          s[size_t(idx)] = Complex(0, 0);
          return;
        }
        const Complex mj = forward_symbol(xi[size_t(j)], g.side());
        const Complex mk = forward_symbol(xi[size_t(k)], g.side());
        s[size_t(idx)] = (mj * qh[size_t(k)][size_t(idx)] - mk * qh[size_t(j)][size_t(idx)]) / lap;
      });
      SpectralField cpy = s;
      fft_inverse_inplace(g, cpy);
      double* sjk = sigma.comp(j, k);
      double* skj = sigma.comp(k, j);
      for (Index i = 0; i < g.cells(); ++i) {
        sjk[i] = cpy[size_t(i)].real();
        skj[i] = -sjk[i];
      }
    }
  return sigma;
}

/// RHS flux of the level-n corrector equation for multi-index mi
/// (prev = level n-1, ignored when n == 1):
///   n == 1 : F_p = a_{p,i1}
///   n >= 2 : F_p = a_{p,in} phi^{n-1}_{prefix} - sigma^{n-1}_{prefix, p in}
inline VectorField corrector_rhs_flux(const MatrixField& a, const CorrectorLevel* prev,
                                      const MultiIndex& mi) {
  const TorusGrid& g = a.grid();
  const int d = g.dim();
  const int last = mi.back();
  VectorField F(g);
  if (mi.size() == 1) {
    for (int p = 0; p < d; ++p) {
      const double* ac = a.comp(p, last);
      std::copy(ac, ac + g.cells(), F.comp(p));
    }
    return F;
  }
  MultiIndex prefix(mi.begin(), mi.end() - 1);
  const int pr = multi_index_rank(prefix, d);
  const ScalarField& ph = prev->phi[size_t(pr)];
  const MatrixField& sg = prev->sigma[size_t(pr)];
  for (int p = 0; p < d; ++p) {
    const double* ac = a.comp(p, last);
    const double* sc = sg.comp(p, last);
    double* f = F.comp(p);
    for (Index i = 0; i < g.cells(); ++i) f[i] = ac[i] * ph[i] - sc[i];
  }
  return F;
}

/// Build the corrector hierarchy to the given depth (1 or 2 supported by the
/// representation formulas downstream; the recursion itself is generic).
inline CorrectorHierarchy build_hierarchy(const MatrixField& a, int depth, SolveOptions opt = {}) {
  if (depth < 1) throw std::invalid_argument("build_hierarchy: depth must be >= 1");
  const TorusGrid& g = a.grid();
  const int d = g.dim();
  DivFormSolver solver(a, opt);
  CorrectorHierarchy h;
  for (int n = 1; n <= depth; ++n) {
    CorrectorLevel lv;
    lv.level = n;
    const CorrectorLevel* prev = (n == 1) ? nullptr : &h.levels.back();
    const auto mis = all_multi_indices(d, n);
    const auto prefixes = all_multi_indices(d, n - 1);
    lv.abar.assign(prefixes.size(), Mat(d));
    for (const auto& mi : mis) {
      VectorField F = corrector_rhs_flux(a, prev, mi);
      ScalarField phi(g);
      SolveReport rep = solver.solve_rhs_div(F, phi);
      VectorField grad = gradient(phi);
      // q = a D phi + F, then split off its mean as the abar column.
      VectorField q = matvec(a, grad);
      for (int p = 0; p < d; ++p) {
        double* qp = q.comp(p);
        const double* fp = F.comp(p);
        for (Index i = 0; i < g.cells(); ++i) qp[i] += fp[i];
      }
      const auto mean = vector_average(q);
      MultiIndex prefix(mi.begin(), mi.end() - 1);
      Mat& ab = lv.abar[size_t(multi_index_rank(prefix, d))];
      for (int p = 0; p < d; ++p) {
        ab(p, mi.back()) = mean[size_t(p)];
        double* qp = q.comp(p);
        const double m = mean[size_t(p)];
        for (Index i = 0; i < g.cells(); ++i) qp[i] -= m;
      }
      lv.phi.push_back(std::move(phi));
      lv.grad_phi.push_back(std::move(grad));
      lv.sigma.push_back(sigma_from_flux(q));
      lv.flux.push_back(std::move(q));
      lv.reports.push_back(rep);
    }
    h.levels.push_back(std::move(lv));
  }
  return h;
}

// =============================================================================
// Exact-identity residuals (diagnostics; all should sit at solver tolerance)
// =============================================================================

/// Max |sigma_{jk} + sigma_{kj}| over a level (skewness; exact by construction).
inline double sigma_skew_residual(const CorrectorLevel& lv) {
  double w = 0;
  for (const auto& sg : lv.sigma) {
    const TorusGrid& g = sg.grid();
    for (int j = 0; j < g.dim(); ++j)
      for (int k = j; k < g.dim(); ++k) {
        const double* sjk = sg.comp(j, k);
        const double* skj = sg.comp(k, j);
        for (Index i = 0; i < g.cells(); ++i)
          w = std::max(w, std::abs(sjk[i] + skj[i]));
      }
  }
  return w;
}

/// Max |(div sigma) - q| over a level; zero when the corrector equation is
/// solved exactly (div sigma is the divergence-free projection of q).
inline double sigma_divergence_residual(const CorrectorLevel& lv) {
  double w = 0;
  for (size_t m = 0; m < lv.sigma.size(); ++m) {
    VectorField ds = row_div(lv.sigma[m]);
    add_scaled(ds, -1.0, lv.flux[m]);
    w = std::max(w, ds.max_abs());
  }
  return w;
}

/// Max |mean q| over a level (exactly zero by construction, up to rounding).
inline double flux_mean_residual(const CorrectorLevel& lv) {
  double w = 0;
  for (const auto& q : lv.flux) {
    auto m = vector_average(q);
    for (int k = 0; k < q.grid().dim(); ++k) w = std::max(w, std::abs(m[size_t(k)]));
  }
  return w;
}

/// Max-abs residual of the chained relation at level k (phi^0 == 1, sigma^0 == 0):
///   (a phi^{k-1} - sigma^{k-1}) e_{ik} + a D phi^k - div sigma^k - abar^k e_{ik}.
inline double corrector_relation_residual(const MatrixField& a, const CorrectorHierarchy& h,
                                          int k) {
  const TorusGrid& g = a.grid();
  const int d = g.dim();
  const CorrectorLevel& lv = h.level(k);
  const CorrectorLevel* prev = (k >= 2) ? &h.level(k - 1) : nullptr;
  double w = 0;
  const auto mis = all_multi_indices(d, k);
  for (const auto& mi : mis) {
    const int rank = multi_index_rank(mi, d);
    VectorField lhs = corrector_rhs_flux(a, prev, mi);  // (a phi^{k-1} - sigma^{k-1}) e_{ik}
    VectorField adphi = matvec(a, lv.grad_phi[size_t(rank)]);
    VectorField divs = row_div(lv.sigma[size_t(rank)]);
    MultiIndex prefix(mi.begin(), mi.end() - 1);
    const Mat& ab = lv.abar[size_t(multi_index_rank(prefix, d))];
    for (int p = 0; p < d; ++p) {
      const double* l = lhs.comp(p);
      const double* adp = adphi.comp(p);
      const double* dv = divs.comp(p);
      const double abcol = ab(p, mi.back());
      for (Index i = 0; i < g.cells(); ++i)
        w = std::max(w, std::abs(l[i] + adp[i] - dv[i] - abcol));
    }
  }
  return w;
}

// =============================================================================
// Effective tensors and duality
// =============================================================================

/// abar^n matrix for a prefix multi-index of length n-1.
inline const Mat& effective_tensor(const CorrectorHierarchy& h, int n, const MultiIndex& prefix) {
  const CorrectorLevel& lv = h.level(n);
  const int d = lv.phi.at(0).grid().dim();
  return lv.abar_at(prefix, d);
}

/// Residual of abar^{*,1} == (abar^1)^T between a hierarchy and its dual.
inline double first_order_duality_residual(const CorrectorHierarchy& primal,
                                           const CorrectorHierarchy& dual) {
  const Mat a1 = primal.level(1).abar[0];
  const Mat a1s = dual.level(1).abar[0];
  return (a1s - a1.transposed()).max_abs();
}

/// The two sides of the symmetrized second-order duality relation
///   Sym_{i1 i2} (abar^2_{i1})_{j i2}  vs  - Sym_{i1 i2} (abar^{*,2}_j)_{i2 i1},
/// reported as a pair of d x d x d tensors flattened over (j, i1, i2) with
/// i1 <= i2 (the symmetrization makes other entries redundant).
struct SecondOrderDualityPair {
  std::vector<double> lhs;  // Sym(abar^2) entries
  std::vector<double> rhs;  // -Sym(abar^{*,2}) entries
};

inline SecondOrderDualityPair second_order_duality_pair(const CorrectorHierarchy& primal,
                                                        const CorrectorHierarchy& dual) {
  const CorrectorLevel& l2 = primal.level(2);
  const CorrectorLevel& l2s = dual.level(2);
  const int d = l2.phi[0].grid().dim();
  SecondOrderDualityPair out;
  for (int j = 0; j < d; ++j)
    for (int i1 = 0; i1 < d; ++i1)
      for (int i2 = i1; i2 < d; ++i2) {
        const double lhs = 0.5 * (l2.abar[size_t(i1)](j, i2) + l2.abar[size_t(i2)](j, i1));
        const double rhs = -0.5 * (l2s.abar[size_t(j)](i2, i1) + l2s.abar[size_t(j)](i1, i2));
        out.lhs.push_back(lhs);
        out.rhs.push_back(rhs);
      }
  return out;
}

// =============================================================================
// Moment statistics (spatial averages per sample; scans aggregate over samples)
// =============================================================================

struct MomentStats {
  double phi_p2 = 0, phi_p4 = 0;      // <|phi|^2>, <|phi|^4>
  double grad_p2 = 0, grad_p4 = 0;    // <|D phi|^2>, <|D phi|^4>
  double sigma_p2 = 0, sigma_p4 = 0;  // <|sigma|_F^2>, <|sigma|_F^4>
};

inline MomentStats measure_moments(const CorrectorLevel& lv) {
  MomentStats st;
  const TorusGrid& g = lv.phi[0].grid();
  const double norm = 1.0 / (double(g.cells()) * double(lv.phi.size()));
  for (size_t m = 0; m < lv.phi.size(); ++m) {
    const ScalarField& ph = lv.phi[m];
    for (Index i = 0; i < g.cells(); ++i) {
      const double v2 = ph[i] * ph[i];
      st.phi_p2 += v2 * norm;
      st.phi_p4 += v2 * v2 * norm;
    }
    const VectorField& gp = lv.grad_phi[m];
    for (Index i = 0; i < g.cells(); ++i) {
      double v2 = 0;
      for (int k = 0; k < g.dim(); ++k) v2 += gp.at(k, i) * gp.at(k, i);
      st.grad_p2 += v2 * norm;
      st.grad_p4 += v2 * v2 * norm;
    }
    const MatrixField& sg = lv.sigma[m];
    for (Index i = 0; i < g.cells(); ++i) {
      double v2 = 0;
      for (int r = 0; r < g.dim(); ++r)
        for (int c = 0; c < g.dim(); ++c) v2 += sg.at(r, c, i) * sg.at(r, c, i);
      st.sigma_p2 += v2 * norm;
      st.sigma_p4 += v2 * v2 * norm;
    }
  }
  return st;
}

}  // namespace homlab
