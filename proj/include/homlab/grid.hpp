#pragma once

// =============================================================================
// Periodic lattice grids, cell fields, and exact discrete calculus.
//
// All difference operators below are defined so that the discrete
// integration-by-parts identities hold *exactly* (up to floating point
// rounding), not merely to discretization order:
//
//   sum_x u(x) (div F)(x) = -sum_x (grad u)(x) . F(x)
//
// with forward differences (D_k u)(x) = u(x+e_k) - u(x) and the adjoint
// divergence (div F)(x) = sum_k [F_k(x) - F_k(x-e_k)], both periodic.
// Every higher-level identity in this library (flux-corrector identities,
// commutator representations, functional derivatives) relies on this pairing.
// =============================================================================

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace homlab {

using Index = std::int64_t;

/// Small dense matrix for effective coefficients (dim x dim, dim <= 3).
struct Mat {
  int dim = 0;
  std::array<double, 9> v{};  // row-major

  Mat() = default;
  explicit Mat(int d) : dim(d) { v.fill(0.0); }
  static Mat identity(int d, double scale = 1.0) {
    Mat m(d);
    for (int p = 0; p < d; ++p) m(p, p) = scale;
    return m;
  }
  double& operator()(int r, int c) { return v[r * 3 + c]; }
  double operator()(int r, int c) const { return v[r * 3 + c]; }
  Mat transposed() const {
    Mat m(dim);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) m(r, c) = (*this)(c, r);
    return m;
  }
  Mat operator-(const Mat& o) const {
    Mat m(dim);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) m(r, c) = (*this)(r, c) - o(r, c);
    return m;
  }
  double max_abs() const {
    double mx = 0;
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) mx = std::max(mx, std::abs((*this)(r, c)));
    return mx;
  }
};

/// A d-dimensional periodic lattice with equal side length M and unit spacing.
/// Cells are indexed row-major with coordinate x[0] fastest (stride 1).
class TorusGrid {
 public:
  TorusGrid() = default;
  TorusGrid(int dim, int side) : dim_(dim), side_(side) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("TorusGrid: dim must be 2 or 3");
    if (side < 2) throw std::invalid_argument("TorusGrid: side must be >= 2");
    cells_ = 1;
    for (int k = 0; k < dim; ++k) {
      stride_[k] = cells_;
      cells_ *= side;
    }
  }

  int dim() const { return dim_; }
  int side() const { return side_; }
  Index cells() const { return cells_; }
  Index stride(int axis) const { return stride_[axis]; }

  bool operator==(const TorusGrid& o) const { return dim_ == o.dim_ && side_ == o.side_; }
  bool operator!=(const TorusGrid& o) const { return !(*this == o); }

  Index index(const std::array<int, 3>& x) const {
    Index idx = 0;
    for (int k = 0; k < dim_; ++k) idx += Index(wrap(x[k])) * stride_[k];
    return idx;
  }

  std::array<int, 3> coords(Index idx) const {
    std::array<int, 3> x{0, 0, 0};
    for (int k = 0; k < dim_; ++k) {
      x[k] = int((idx / stride_[k]) % side_);
    }
    return x;
  }

  int wrap(int c) const {
    int m = c % side_;
    return m < 0 ? m + side_ : m;
  }

  /// Signed distance component with minimum image convention, in (-M/2, M/2].
  int min_image(int delta) const {
    int m = wrap(delta);
    return m > side_ / 2 ? m - side_ : m;
  }

  /// Periodic neighbor of cell idx along axis (by = +1 or -1).
  Index neighbor(Index idx, int axis, int by) const {
    int c = int((idx / stride_[axis]) % side_);
    int n = wrap(c + by);
    return idx + Index(n - c) * stride_[axis];
  }

 private:
  int dim_ = 0;
  int side_ = 0;
  Index cells_ = 0;
  std::array<Index, 3> stride_{1, 1, 1};
};

// =============================================================================
// Fields
// =============================================================================

/// One real value per cell.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(const TorusGrid& g, double fill = 0.0) : grid_(g), v_(g.cells(), fill) {}

  const TorusGrid& grid() const { return grid_; }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  Index size() const { return Index(v_.size()); }
  double& operator[](Index i) { return v_[size_t(i)]; }
  double operator[](Index i) const { return v_[size_t(i)]; }

  double average() const {
    double s = 0;
    for (double x : v_) s += x;
    return s / double(v_.size());
  }
  double sum() const {
    double s = 0;
    for (double x : v_) s += x;
    return s;
  }
  double max_abs() const {
    double m = 0;
    for (double x : v_) m = std::max(m, std::abs(x));
    return m;
  }
  double l2() const {
    double s = 0;
    for (double x : v_) s += x * x;
    return std::sqrt(s);
  }
  void fill(double c) { std::fill(v_.begin(), v_.end(), c); }
  void shift_mean_to_zero() {
    double m = average();
    for (double& x : v_) x -= m;
  }

 private:
  TorusGrid grid_;
  std::vector<double> v_;
};

/// dim real components per cell, stored component-major:
/// component k occupies the contiguous block [k*cells, (k+1)*cells).
class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(const TorusGrid& g, double fill = 0.0)
      : grid_(g), v_(size_t(g.cells()) * g.dim(), fill) {}

  const TorusGrid& grid() const { return grid_; }
  double& at(int comp, Index i) { return v_[size_t(comp) * grid_.cells() + size_t(i)]; }
  double at(int comp, Index i) const { return v_[size_t(comp) * grid_.cells() + size_t(i)]; }
  double* comp(int k) { return v_.data() + size_t(k) * grid_.cells(); }
  const double* comp(int k) const { return v_.data() + size_t(k) * grid_.cells(); }
  const std::vector<double>& raw() const { return v_; }

  double max_abs() const {
    double m = 0;
    for (double x : v_) m = std::max(m, std::abs(x));
    return m;
  }
  void fill(double c) { std::fill(v_.begin(), v_.end(), c); }

  /// Euclidean norm |F(x)| as a scalar field.
  ScalarField pointwise_norm() const {
    ScalarField out(grid_);
    for (Index i = 0; i < grid_.cells(); ++i) {
      double s = 0;
      for (int k = 0; k < grid_.dim(); ++k) s += at(k, i) * at(k, i);
      out[i] = std::sqrt(s);
    }
    return out;
  }

 private:
  TorusGrid grid_;
  std::vector<double> v_;
};

/// dim x dim real components per cell, stored component-major; component
/// (r, c) occupies block (r*dim + c). Used for coefficient fields a(x) and
/// flux correctors sigma(x).
class MatrixField {
 public:
  MatrixField() = default;
  explicit MatrixField(const TorusGrid& g, double fill = 0.0)
      : grid_(g), v_(size_t(g.cells()) * g.dim() * g.dim(), fill) {}

  const TorusGrid& grid() const { return grid_; }
  double& at(int r, int c, Index i) { return v_[block(r, c) + size_t(i)]; }
  double at(int r, int c, Index i) const { return v_[block(r, c) + size_t(i)]; }
  double* comp(int r, int c) { return v_.data() + block(r, c); }
  const double* comp(int r, int c) const { return v_.data() + block(r, c); }

  double max_abs() const {
    double m = 0;
    for (double x : v_) m = std::max(m, std::abs(x));
    return m;
  }

  static MatrixField isotropic(const ScalarField& s) {
    MatrixField a(s.grid());
    for (int k = 0; k < s.grid().dim(); ++k) {
      double* d = a.comp(k, k);
      for (Index i = 0; i < s.size(); ++i) d[i] = s[i];
    }
    return a;
  }

  MatrixField transposed() const {
    MatrixField t(grid_);
    for (int r = 0; r < grid_.dim(); ++r)
      for (int c = 0; c < grid_.dim(); ++c) {
        const double* src = comp(r, c);
        double* dst = t.comp(c, r);
        for (Index i = 0; i < grid_.cells(); ++i) dst[i] = src[i];
      }
    return t;
  }

  bool equals(const MatrixField& o, double tol = 0.0) const {
    if (grid_ != o.grid_) return false;
    for (size_t i = 0; i < v_.size(); ++i)
      if (std::abs(v_[i] - o.v_[i]) > tol) return false;
    return true;
  }

  /// Constant matrix field from a small matrix.
  static MatrixField constant(const TorusGrid& g, const Mat& m) {
    MatrixField a(g);
    for (int r = 0; r < g.dim(); ++r)
      for (int c = 0; c < g.dim(); ++c) {
        double* d = a.comp(r, c);
        for (Index i = 0; i < g.cells(); ++i) d[i] = m(r, c);
      }
    return a;
  }

  /// Cell average of each component.
  Mat average() const {
    Mat m(grid_.dim());
    for (int r = 0; r < grid_.dim(); ++r)
      for (int c = 0; c < grid_.dim(); ++c) {
        const double* d = comp(r, c);
        double s = 0;
        for (Index i = 0; i < grid_.cells(); ++i) s += d[i];
        m(r, c) = s / double(grid_.cells());
      }
    return m;
  }

 private:
  size_t block(int r, int c) const { return (size_t(r) * grid_.dim() + c) * size_t(grid_.cells()); }
  TorusGrid grid_;
  std::vector<double> v_;
};

/// Multi-index (i_1, ..., i_m) of lattice directions, each in [0, dim).
using MultiIndex = std::vector<int>;

/// All multi-indices of given length over [0, dim), in lexicographic order.
inline std::vector<MultiIndex> all_multi_indices(int dim, int len) {
  std::vector<MultiIndex> out;
  if (len == 0) {
    out.push_back({});
    return out;
  }
  auto prev = all_multi_indices(dim, len - 1);
  for (const auto& p : prev)
    for (int k = 0; k < dim; ++k) {
      MultiIndex q = p;
      q.push_back(k);
      out.push_back(q);
    }
  return out;
}

/// Flatten a multi-index to a linear position in the lexicographic ordering.
inline int multi_index_rank(const MultiIndex& mi, int dim) {
  int r = 0;
  for (int c : mi) r = r * dim + c;
  return r;
}

// =============================================================================
// Exact discrete calculus
// =============================================================================

/// Forward difference (D_k u)(x) = u(x+e_k) - u(x), periodic.
inline void forward_diff_into(const ScalarField& u, int axis, ScalarField& out) {
  const TorusGrid& g = u.grid();
  assert(axis >= 0 && axis < g.dim());
  const Index s = g.stride(axis);
  const int M = g.side();
  const Index block = s * M;
  const double* in = u.data();
  double* o = out.data();
  for (Index base = 0; base < g.cells(); base += block)
    for (int x = 0; x < M; ++x) {
      const Index row = base + Index(x) * s;
      const Index nrow = (x + 1 < M) ? row + s : base;
      for (Index i = 0; i < s; ++i) o[row + i] = in[nrow + i] - in[row + i];
    }
}

inline ScalarField forward_diff(const ScalarField& u, int axis) {
  ScalarField out(u.grid());
  forward_diff_into(u, axis, out);
  return out;
}

/// Backward difference (D-_k u)(x) = u(x) - u(x-e_k), periodic.
inline void backward_diff_into(const ScalarField& u, int axis, ScalarField& out) {
  const TorusGrid& g = u.grid();
  const Index s = g.stride(axis);
  const int M = g.side();
  const Index block = s * M;
  const double* in = u.data();
  double* o = out.data();
  for (Index base = 0; base < g.cells(); base += block)
    for (int x = 0; x < M; ++x) {
      const Index row = base + Index(x) * s;
      const Index prow = (x > 0) ? row - s : base + Index(M - 1) * s;
      for (Index i = 0; i < s; ++i) o[row + i] = in[row + i] - in[prow + i];
    }
}

inline ScalarField backward_diff(const ScalarField& u, int axis) {
  ScalarField out(u.grid());
  backward_diff_into(u, axis, out);
  return out;
}

/// Periodic shift: out(x) = u(x + by * e_axis).
inline ScalarField shift_field(const ScalarField& u, int axis, int by) {
  const TorusGrid& g = u.grid();
  ScalarField out(g);
  const Index s = g.stride(axis);
  const int M = g.side();
  const Index block = s * M;
  const double* in = u.data();
  double* o = out.data();
  int b = ((by % M) + M) % M;
  for (Index base = 0; base < g.cells(); base += block)
    for (int x = 0; x < M; ++x) {
      const Index row = base + Index(x) * s;
      const Index srow = base + Index((x + b) % M) * s;
      for (Index i = 0; i < s; ++i) o[row + i] = in[srow + i];
    }
  return out;
}

/// Full forward gradient (all axes).
inline VectorField gradient(const ScalarField& u) {
  VectorField out(u.grid());
  ScalarField tmp(u.grid());
  for (int k = 0; k < u.grid().dim(); ++k) {
    forward_diff_into(u, k, tmp);
    double* dst = out.comp(k);
    const double* src = tmp.data();
    std::copy(src, src + u.grid().cells(), dst);
  }
  return out;
}

/// Adjoint divergence (div F)(x) = sum_k [F_k(x) - F_k(x-e_k)].
/// This is the exact negative adjoint of the forward gradient:
///   sum_x u (div F) = -sum_x grad u . F.
inline ScalarField adjoint_div(const VectorField& F) {
  const TorusGrid& g = F.grid();
  ScalarField out(g, 0.0);
  ScalarField comp(g), tmp(g);
  for (int k = 0; k < g.dim(); ++k) {
    const double* src = F.comp(k);
    std::copy(src, src + g.cells(), comp.data());
    backward_diff_into(comp, k, tmp);
    double* o = out.data();
    const double* t = tmp.data();
    for (Index i = 0; i < g.cells(); ++i) o[i] += t[i];
  }
  return out;
}

/// Row-wise divergence of a matrix field: (div S)_j(x) = sum_k D-_k S_{jk}(x).
inline VectorField row_div(const MatrixField& S) {
  const TorusGrid& g = S.grid();
  VectorField out(g, 0.0);
  ScalarField comp(g), tmp(g);
  for (int j = 0; j < g.dim(); ++j)
    for (int k = 0; k < g.dim(); ++k) {
      const double* src = S.comp(j, k);
      std::copy(src, src + g.cells(), comp.data());
      backward_diff_into(comp, k, tmp);
      double* o = out.comp(j);
      const double* t = tmp.data();
      for (Index i = 0; i < g.cells(); ++i) o[i] += t[i];
    }
  return out;
}

/// Iterated forward partial D_{i_1} ... D_{i_m} u. Partials commute exactly.
inline ScalarField iterated_partial(const ScalarField& u, const MultiIndex& mi) {
  ScalarField cur = u;
  ScalarField tmp(u.grid());
  for (int axis : mi) {
    forward_diff_into(cur, axis, tmp);
    std::swap(cur, tmp);
  }
  return cur;
}

/// Iterated backward partial D-_{i_1} ... D-_{i_m} u.
inline ScalarField iterated_backward_partial(const ScalarField& u, const MultiIndex& mi) {
  ScalarField cur = u;
  ScalarField tmp(u.grid());
  for (int axis : mi) {
    backward_diff_into(cur, axis, tmp);
    std::swap(cur, tmp);
  }
  return cur;
}

// =============================================================================
// Pointwise algebra helpers
// =============================================================================

/// out = A v (pointwise matrix-vector product).
inline VectorField matvec(const MatrixField& A, const VectorField& v) {
  const TorusGrid& g = A.grid();
  VectorField out(g, 0.0);
  for (int r = 0; r < g.dim(); ++r) {
    double* o = out.comp(r);
    for (int c = 0; c < g.dim(); ++c) {
      const double* a = A.comp(r, c);
      const double* x = v.comp(c);
      for (Index i = 0; i < g.cells(); ++i) o[i] += a[i] * x[i];
    }
  }
  return out;
}

/// out_r = sum_c A_{cr} v_c  (transposed product A^T v, no copy of A).
inline VectorField matvec_transposed(const MatrixField& A, const VectorField& v) {
  const TorusGrid& g = A.grid();
  VectorField out(g, 0.0);
  for (int r = 0; r < g.dim(); ++r) {
    double* o = out.comp(r);
    for (int c = 0; c < g.dim(); ++c) {
      const double* a = A.comp(c, r);
      const double* x = v.comp(c);
      for (Index i = 0; i < g.cells(); ++i) o[i] += a[i] * x[i];
    }
  }
  return out;
}

/// Pointwise dot product of two vector fields.
inline ScalarField dot(const VectorField& u, const VectorField& v) {
  const TorusGrid& g = u.grid();
  ScalarField out(g, 0.0);
  for (int k = 0; k < g.dim(); ++k) {
    const double* a = u.comp(k);
    const double* b = v.comp(k);
    double* o = out.data();
    for (Index i = 0; i < g.cells(); ++i) o[i] += a[i] * b[i];
  }
  return out;
}

/// Global inner product sum_x u(x) v(x).
inline double inner(const ScalarField& u, const ScalarField& v) {
  double s = 0;
  const double* a = u.data();
  const double* b = v.data();
  for (Index i = 0; i < u.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double inner(const VectorField& u, const VectorField& v) {
  double s = 0;
  const auto& a = u.raw();
  const auto& b = v.raw();
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// axpy-style helpers.
inline void add_scaled(ScalarField& y, double c, const ScalarField& x) {
  double* a = y.data();
  const double* b = x.data();
  for (Index i = 0; i < y.size(); ++i) a[i] += c * b[i];
}
inline void add_scaled(VectorField& y, double c, const VectorField& x) {
  for (int k = 0; k < y.grid().dim(); ++k) {
    double* a = y.comp(k);
    const double* b = x.comp(k);
    for (Index i = 0; i < y.grid().cells(); ++i) a[i] += c * b[i];
  }
}

/// Column average of a matrix field applied to basis vector e_c, i.e. the
/// average of column c; used for effective coefficients.
inline std::array<double, 3> column_average(const MatrixField& A, int c) {
  std::array<double, 3> out{0, 0, 0};
  const TorusGrid& g = A.grid();
  for (int r = 0; r < g.dim(); ++r) {
    const double* a = A.comp(r, c);
    double s = 0;
    for (Index i = 0; i < g.cells(); ++i) s += a[i];
    out[size_t(r)] = s / double(g.cells());
  }
  return out;
}

/// Average of a vector field.
inline std::array<double, 3> vector_average(const VectorField& v) {
  std::array<double, 3> out{0, 0, 0};
  const TorusGrid& g = v.grid();
  for (int k = 0; k < g.dim(); ++k) {
    const double* a = v.comp(k);
    double s = 0;
    for (Index i = 0; i < g.cells(); ++i) s += a[i];
    out[size_t(k)] = s / double(g.cells());
  }
  return out;
}

// =============================================================================
// Small symmetric eigenvalue helper (Jacobi sweeps), for ellipticity checks.
// =============================================================================

inline std::array<double, 3> symmetric_eigenvalues(const Mat& m) {
  int d = m.dim;
  std::array<std::array<double, 3>, 3> a{};
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) a[r][c] = 0.5 * (m(r, c) + m(c, r));
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = 0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        double theta = 0.5 * std::atan2(2 * a[p][q], a[q][q] - a[p][p]);
        double c = std::cos(theta), s = std::sin(theta);
        for (int r = 0; r < d; ++r) {
          double arp = a[r][p], arq = a[r][q];
          a[r][p] = c * arp - s * arq;
          a[r][q] = s * arp + c * arq;
        }
        for (int r = 0; r < d; ++r) {
          double apr = a[p][r], aqr = a[q][r];
          a[p][r] = c * apr - s * aqr;
          a[q][r] = s * apr + c * aqr;
        }
      }
  }
  std::array<double, 3> ev{a[0][0], a[1][1], d == 3 ? a[2][2] : a[1][1]};
  std::sort(ev.begin(), ev.begin() + d);
  return ev;
}

}  // namespace homlab
