#pragma once

// =============================================================================
// Higher-order homogenization commutators.
//
// Direct form (effective tensors abar^k from the primal hierarchy):
//   Xi^n[grad w] = (a - abar^1) grad w
//                  - sum_{k=2}^n abar^k_{i1..i_{k-1}} partial^{k-1}_{i1..i_{k-1}} grad w
// (Einstein summation over i1..i_{k-1}; each abar^k is a matrix acting on the
// iterated-difference vector field.)
//
// Transposed form (dual tensors abar^{*,k} built from a^T):
//   e_j . Xi^n[grad w] = a^T e_j . grad w
//       - sum_{k=1}^n (-1)^{k-1} abar^{*,k}_{j i1..i_{k-2}} e_{i_{k-1}}
//                                   . partial^{k-1}_{i1..i_{k-1}} grad w
// with the k=1 term read as abar^{*,1} e_j . grad w.
//
// Standard commutator field (the observable of interest):
//   Xi^{o,n}_{ij} = e_j . (a - abar^1)(D phi^1_i + e_i)
//       - sum_{k=2}^n (-1)^{k-1} abar^{*,k}_{j i1..i_{k-2}} e_{i_{k-1}}
//                                   . partial^{k-1}_{i1..i_{k-1}} D phi^1_i.
//
// Per sample, the torus average of every Xi^{o,n}_{ij} vanishes exactly: the
// first term is centered by the definition of abar^1 and every higher term is
// an iterated difference. All iterated partials are forward differences, the
// same stencil as the solver, so the sensitivity module's discrete
// integration by parts is exact against these fields.
//
// For n >= 2 the direct and transposed forms agree pointwise only up to the
// symmetrization relation between abar^k and abar^{*,k}, which holds in the
// ensemble mean; both forms are exposed and the equivalence is asserted
// cellwise only at n = 1.
// =============================================================================

#include <stdexcept>
#include <vector>

#include "homlab/correctors.hpp"
#include "homlab/grid.hpp"

namespace homlab {

/// The standard commutator entries for one sample, all (i, j) pairs.
struct CommutatorField {
  int order = 0;
  int dim = 0;
  std::vector<ScalarField> entries;  // entry (i, j) at position i*dim + j

  const ScalarField& at(int i, int j) const { return entries[size_t(i * dim + j)]; }
  Mat average() const {
    Mat m(dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = at(i, j).average();
    return m;
  }
};

namespace detail {

/// Accumulate out += c * sum over the order-k transposed term for row j:
///   sum_{i1..i_{k-1}} abar^{*,k}_{j i1..i_{k-2}} e_{i_{k-1}}
///                       . partial^{k-1}_{i1..i_{k-1}} (component fields).
/// `comps` are the d scalar components of the vector field being
/// differentiated (e.g. D_p phi or grad w components).
inline void add_trans_higher_term(ScalarField& out, double c, const CorrectorHierarchy& dual,
                                  int j, int k, const std::vector<ScalarField>& comps) {
  const TorusGrid& g = out.grid();
  const int d = g.dim();
  const CorrectorLevel& lv = dual.level(k);
  for (const MultiIndex& mi : all_multi_indices(d, k - 1)) {
    MultiIndex prefix;
    prefix.push_back(j);
    prefix.insert(prefix.end(), mi.begin(), mi.end() - 1);
    const Mat& ab = lv.abar[size_t(multi_index_rank(prefix, d))];
    const int col = mi.back();
    for (int p = 0; p < d; ++p) {
      const double coeff = c * ab(p, col);
      if (coeff == 0.0) continue;
      ScalarField dmi = iterated_partial(comps[size_t(p)], mi);
      add_scaled(out, coeff, dmi);
    }
  }
}

/// Scalar components of a vector field (copies).
inline std::vector<ScalarField> split_components(const VectorField& v) {
  const TorusGrid& g = v.grid();
  std::vector<ScalarField> out;
  out.reserve(size_t(g.dim()));
  for (int p = 0; p < g.dim(); ++p) {
    ScalarField c(g);
    std::copy(v.comp(p), v.comp(p) + g.cells(), c.data());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Xi^{o,n}_{ij} assembled from explicitly supplied ingredients: the
/// coefficient field used in the leading term, a fixed abar^1 matrix, the
/// corrector gradient, and a hierarchy supplying the dual tensors abar^{*,k}.
/// This form lets sensitivity checks evaluate the commutator at a perturbed
/// coefficient while holding every effective tensor frozen at base values.
inline ScalarField standard_commutator_entry_with(const MatrixField& a_used, const Mat& abar1,
                                                  const VectorField& gphi_i,
                                                  const CorrectorHierarchy& dual_tensors, int i,
                                                  int j, int n) {
  const TorusGrid& g = a_used.grid();
  const int d = g.dim();
  if (n < 1) throw std::invalid_argument("standard_commutator: order must be >= 1");
  if (n >= 2 && dual_tensors.depth() < n)
    throw std::invalid_argument("standard_commutator: dual hierarchy too shallow");
  ScalarField out(g, 0.0);
  // e_j . (a - abar^1)(D phi_i + e_i)
  for (int p = 0; p < d; ++p) {
    const double* ajp = a_used.comp(j, p);
    const double* gp = gphi_i.comp(p);
    const double abjp = abar1(j, p);
    const double unit = (p == i) ? 1.0 : 0.0;
    double* o = out.data();
    for (Index c = 0; c < g.cells(); ++c) o[c] += (ajp[c] - abjp) * (gp[c] + unit);
  }
  if (n >= 2) {
    auto comps = detail::split_components(gphi_i);
    for (int k = 2; k <= n; ++k) {
      // minus (-1)^{k-1}: +1 for even k, -1 for odd k
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      detail::add_trans_higher_term(out, sign, dual_tensors, j, k, comps);
    }
  }
  return out;
}

/// One entry Xi^{o,n}_{ij} of the standard commutator.
inline ScalarField standard_commutator_entry(const MatrixField& a,
                                             const CorrectorHierarchy& primal,
                                             const CorrectorHierarchy& dual, int i, int j,
                                             int n) {
  const CorrectorLevel& l1 = primal.level(1);
  return standard_commutator_entry_with(a, l1.abar[0], l1.grad_phi[size_t(i)], dual, i, j, n);
}

/// All entries of Xi^{o,n} for one sample.
inline CommutatorField standard_commutator(const MatrixField& a, const CorrectorHierarchy& primal,
                                           const CorrectorHierarchy& dual, int n) {
  const int d = a.grid().dim();
  CommutatorField f;
  f.order = n;
  f.dim = d;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      f.entries.push_back(standard_commutator_entry(a, primal, dual, i, j, n));
  return f;
}

/// Direct form Xi^n[grad w] with primal effective tensors.
inline VectorField commutator_apply(const MatrixField& a, const CorrectorHierarchy& primal, int n,
                                    const VectorField& gradw) {
  const TorusGrid& g = a.grid();
  const int d = g.dim();
  if (n < 1 || primal.depth() < n)
    throw std::invalid_argument("commutator_apply: order out of range for hierarchy");
  const Mat& ab1 = primal.level(1).abar[0];
  VectorField out(g, 0.0);
  for (int j = 0; j < d; ++j) {
    double* o = out.comp(j);
    for (int p = 0; p < d; ++p) {
      const double* ajp = a.comp(j, p);
      const double* wp = gradw.comp(p);
      const double abjp = ab1(j, p);
      for (Index c = 0; c < g.cells(); ++c) o[c] += (ajp[c] - abjp) * wp[c];
    }
  }
  auto comps = detail::split_components(gradw);
  for (int k = 2; k <= n; ++k) {
    const CorrectorLevel& lv = primal.level(k);
    for (const MultiIndex& mi : all_multi_indices(d, k - 1)) {
      const Mat& ab = lv.abar[size_t(multi_index_rank(mi, d))];
      std::vector<ScalarField> dcomp;
      dcomp.reserve(size_t(d));
      for (int p = 0; p < d; ++p) dcomp.push_back(iterated_partial(comps[size_t(p)], mi));
      for (int j = 0; j < d; ++j) {
        ScalarField acc(g, 0.0);
        for (int p = 0; p < d; ++p) add_scaled(acc, ab(j, p), dcomp[size_t(p)]);
        double* o = out.comp(j);
        const double* s = acc.data();
        for (Index c = 0; c < g.cells(); ++c) o[c] -= s[c];
      }
    }
  }
  return out;
}

/// Transposed form e_j . Xi^n[grad w] with dual effective tensors.
inline ScalarField trans_commutator_entry(const MatrixField& a, const CorrectorHierarchy& dual,
                                          int j, int n, const VectorField& gradw) {
  const TorusGrid& g = a.grid();
  const int d = g.dim();
  if (n < 1 || (n >= 2 && dual.depth() < n))
    throw std::invalid_argument("trans_commutator: order out of range for dual hierarchy");
  ScalarField out(g, 0.0);
  const Mat& ab1s = dual.level(1).abar[0];  // abar^{*,1}
  for (int p = 0; p < d; ++p) {
    const double* ajp = a.comp(j, p);  // (a^T e_j)_p = a_{jp}
    const double* wp = gradw.comp(p);
    const double k1 = ab1s(p, j);  // (abar^{*,1} e_j)_p
    double* o = out.data();
    for (Index c = 0; c < g.cells(); ++c) o[c] += (ajp[c] - k1) * wp[c];
  }
  auto comps = detail::split_components(gradw);
  for (int k = 2; k <= n; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;  // -(-1)^{k-1}
    detail::add_trans_higher_term(out, sign, dual, j, k, comps);
  }
  return out;
}

}  // namespace homlab
