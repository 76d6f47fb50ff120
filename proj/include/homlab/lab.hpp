#pragma once

// =============================================================================
// Experiment orchestration: Monte Carlo scans of commutator decorrelation
// over (R, L) grids, corrector moment scans, duality symmetry checks,
// auxiliary-field decay profiles, Gateaux verification runs, configuration,
// deterministic parallel execution, power-law fitting, CSV/manifest output.
//
// Determinism contract: a run is a pure function of (config, seed). Samples
// are produced by a counter-based generator keyed on the sample index, so any
// worker can compute any sample; results are merged strictly in sample-index
// order by a single merger thread. All floating-point accumulation that can
// reach an output file therefore happens in one fixed order, making CSV
// output bitwise identical for every worker count.
// =============================================================================

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "homlab/commutator.hpp"
#include "homlab/correctors.hpp"
#include "homlab/elliptic.hpp"
#include "homlab/ensemble.hpp"
#include "homlab/fourier.hpp"
#include "homlab/grid.hpp"
#include "homlab/sensitivity.hpp"

namespace homlab {

inline constexpr const char* kVersionTag = "homlab 0.1.0";

namespace labdet {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

inline std::string fmt(long v) { return std::to_string(v); }

}  // namespace labdet

// =============================================================================
// Fitting helpers
// =============================================================================

struct FitPoint {
  double x = 0, y = 0;
  double sigma = 0;  // 1-sigma uncertainty of y; 0 means "exact" (unit weight)
};

struct PowerLawFit {
  double slope = 0;
  double intercept = 0;  // in log space: ln y = intercept + slope ln x
  double rss = 0;        // weighted residual sum of squares in log space
  long used = 0;
  std::vector<std::string> warnings;

  double evaluate(double x) const { return std::exp(intercept + slope * std::log(x)); }
};

/// Weighted least squares of ln y on ln x. Weight (y/sigma)^2 follows from
/// propagating sigma through the logarithm; sigma = 0 points get unit weight.
/// Nonpositive coordinates are dropped with a warning; fewer than 3 surviving
/// points is an error.
inline PowerLawFit fit_power_law(const std::vector<FitPoint>& pts) {
  PowerLawFit fit;
  std::vector<double> lx, ly, w;
  for (const FitPoint& p : pts) {
    if (!(p.x > 0) || !(p.y > 0)) {
      fit.warnings.push_back("dropped nonpositive point (" + labdet::fmt(p.x) + ", " +
                             labdet::fmt(p.y) + ")");
      continue;
    }
    lx.push_back(std::log(p.x));
    ly.push_back(std::log(p.y));
    w.push_back(p.sigma > 0 ? (p.y / p.sigma) * (p.y / p.sigma) : 1.0);
  }
  if (lx.size() < 3) throw std::invalid_argument("fit_power_law: fewer than 3 usable points");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t k = 0; k < lx.size(); ++k) {
    sw += w[k];
    sx += w[k] * lx[k];
    sy += w[k] * ly[k];
    sxx += w[k] * lx[k] * lx[k];
    sxy += w[k] * lx[k] * ly[k];
  }
  const double det = sw * sxx - sx * sx;
  if (!(std::abs(det) > 0)) throw std::invalid_argument("fit_power_law: degenerate abscissae");
  fit.slope = (sw * sxy - sx * sy) / det;
  fit.intercept = (sy - fit.slope * sx) / sw;
  for (size_t k = 0; k < lx.size(); ++k) {
    const double r = ly[k] - fit.intercept - fit.slope * lx[k];
    fit.rss += w[k] * r * r;
  }
  fit.used = long(lx.size());
  return fit;
}

struct ShiftedPowerFit {
  double exponent = 0;  // p in y = a + b x^p
  double se = 0;        // 1-sigma on p, propagated from the point sigmas
  double shift = 0;     // a
  double scale = 0;     // b
  bool valid = false;
  std::string note;
};

/// Exact solve of y = a + b x^p on a geometric triple x1, rho x1, rho^2 x1:
/// the additive constant cancels from consecutive differences, leaving
/// rho^p = (y3 - y2) / (y2 - y1). Use for quantities whose envelope is a
/// bounded part plus a growing power — there a plain log-log slope mixes the
/// two and reads high (low) when the effective constant is negative
/// (positive), so it measures the crossover, not the growth. The reported se
/// propagates the point sigmas through the difference ratio.
inline ShiftedPowerFit shifted_power_fit(std::vector<FitPoint> pts) {
  ShiftedPowerFit fit;
  if (pts.size() != 3) {
    fit.note = "need exactly 3 points, got " + std::to_string(pts.size());
    return fit;
  }
  std::sort(pts.begin(), pts.end(), [](const FitPoint& u, const FitPoint& v) { return u.x < v.x; });
  if (!(pts[0].x > 0)) {
    fit.note = "nonpositive abscissa";
    return fit;
  }
  const double rho = pts[1].x / pts[0].x;
  if (!(rho > 1) || std::abs(pts[2].x / pts[1].x - rho) > 1e-9 * rho) {
    fit.note = "abscissae are not a geometric triple";
    return fit;
  }
  const double d1 = pts[1].y - pts[0].y;
  const double d2 = pts[2].y - pts[1].y;
  if (!(d1 > 0) || !(d2 > 0)) {
    fit.note = "consecutive differences are not positive";
    return fit;
  }
  const double lr = std::log(rho);
  fit.exponent = std::log(d2 / d1) / lr;
  fit.scale = d1 / (std::pow(pts[0].x, fit.exponent) * (std::pow(rho, fit.exponent) - 1.0));
  fit.shift = pts[0].y - fit.scale * std::pow(pts[0].x, fit.exponent);
  const double g1 = 1.0 / (lr * d1);              // |dp/dy1|
  const double g2 = (1.0 / d1 + 1.0 / d2) / lr;   // |dp/dy2|
  const double g3 = 1.0 / (lr * d2);              // |dp/dy3|
  fit.se = std::sqrt(g1 * g1 * pts[0].sigma * pts[0].sigma +
                     g2 * g2 * pts[1].sigma * pts[1].sigma +
                     g3 * g3 * pts[2].sigma * pts[2].sigma);
  fit.valid = true;
  return fit;
}

struct LogVsPowerFit {
  double log_rss = 0;          // residuals of y = a + b ln x
  double power_rss = 0;        // residuals of y = exp(c) x^beta, beta >= min_exponent
  double power_exponent = 0;   // the (possibly clamped) beta
  double log_coefficient = 0;  // b
  bool log_beats_power = false;
};

/// Decide whether y(x) grows logarithmically or like a genuine power:
/// fit y = a + b ln x and y = C x^beta (beta clamped below by min_exponent),
/// compare residual sums of squares in y space.
inline LogVsPowerFit log_vs_power_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                                      double min_exponent = 0.2) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw std::invalid_argument("log_vs_power_fit: need >= 3 points");
  const size_t n = xs.size();
  LogVsPowerFit out;
  // Log model: least squares of y on (1, ln x).
  double sw = double(n), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t k = 0; k < n; ++k) {
    if (!(xs[k] > 0)) throw std::invalid_argument("log_vs_power_fit: nonpositive x");
    const double l = std::log(xs[k]);
    sx += l;
    sy += ys[k];
    sxx += l * l;
    sxy += l * ys[k];
  }
  const double det = sw * sxx - sx * sx;
  const double b = (sw * sxy - sx * sy) / det;
  const double a = (sy - b * sx) / sw;
  out.log_coefficient = b;
  for (size_t k = 0; k < n; ++k) {
    const double r = ys[k] - (a + b * std::log(xs[k]));
    out.log_rss += r * r;
  }
  // Power model on (ln x, ln y), exponent clamped from below.
  double py = 0, pxy = 0;
  for (size_t k = 0; k < n; ++k) {
    if (!(ys[k] > 0)) throw std::invalid_argument("log_vs_power_fit: nonpositive y");
    py += std::log(ys[k]);
    pxy += std::log(xs[k]) * std::log(ys[k]);
  }
  double beta = (sw * pxy - sx * py) / det;
  if (beta < min_exponent) beta = min_exponent;
  const double c = (py - beta * sx) / sw;  // refit intercept at the clamped slope
  out.power_exponent = beta;
  for (size_t k = 0; k < n; ++k) {
    const double r = ys[k] - std::exp(c + beta * std::log(xs[k]));
    out.power_rss += r * r;
  }
  out.log_beats_power = out.log_rss < out.power_rss;
  return out;
}

// =============================================================================
// Batch-means statistics
// =============================================================================

struct BatchStats {
  double mean = 0;
  double se = 0;  // standard error of the mean, from batch means
  int batches = 0;
  bool sign_stable = false;  // all batch means share one strict sign
  std::vector<double> batch_means;
};

/// Mean and batch-means standard error over contiguous batches (default 8).
/// Fewer values than batches degrades gracefully to one value per batch.
inline BatchStats batch_stats(const std::vector<double>& values, int batches = 8) {
  BatchStats st;
  const long n = long(values.size());
  if (n == 0) return st;
  st.batches = int(std::min<long>(batches, n));
  double total = 0;
  for (double v : values) total += v;
  st.mean = total / double(n);
  for (int b = 0; b < st.batches; ++b) {
    const long lo = n * b / st.batches, hi = n * (b + 1) / st.batches;
    double s = 0;
    for (long k = lo; k < hi; ++k) s += values[size_t(k)];
    st.batch_means.push_back(s / double(hi - lo));
  }
  if (st.batches >= 2) {
    double bm = 0;
    for (double v : st.batch_means) bm += v;
    bm /= double(st.batches);
    double var = 0;
    for (double v : st.batch_means) var += (v - bm) * (v - bm);
    st.se = std::sqrt(var / double(st.batches) / double(st.batches - 1));
  }
  bool pos = true, neg = true;
  for (double v : st.batch_means) {
    pos = pos && v > 0;
    neg = neg && v < 0;
  }
  st.sign_stable = pos || neg;
  return st;
}

/// Plain sample covariance (used by the estimator sanity tests).
inline double covariance_over_samples(const std::vector<double>& xs,
                                      const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("covariance_over_samples: need >= 2 paired values");
  double mx = 0, my = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= double(xs.size());
  my /= double(xs.size());
  double c = 0;
  for (size_t k = 0; k < xs.size(); ++k) c += (xs[k] - mx) * (ys[k] - my);
  return c / double(xs.size() - 1);
}

// =============================================================================
// Configuration
// =============================================================================

inline const char* family_name(SpectralFamily f) {
  return f == SpectralFamily::StableExp ? "stable-exp" : "matern-like";
}
inline const char* map_name(MapKind m) {
  return m == MapKind::ScalarLogistic ? "scalar-logistic" : "logistic-skew";
}
inline SpectralFamily parse_family(const std::string& s) {
  if (s == "stable-exp") return SpectralFamily::StableExp;
  if (s == "matern-like") return SpectralFamily::MaternLike;
  throw std::invalid_argument("unknown spectral family: " + s);
}
inline MapKind parse_map(const std::string& s) {
  if (s == "scalar-logistic") return MapKind::ScalarLogistic;
  if (s == "logistic-skew") return MapKind::LogisticSkew;
  throw std::invalid_argument("unknown coefficient map: " + s);
}

struct ExperimentConfig {
  // grid
  int dim = 2;
  Index side = 256;
  // ensemble
  SpectralFamily family = SpectralFamily::StableExp;
  double alpha0 = 1.0;
  double ell = 2.0;
  double sigma2 = 25.0;
  MapKind map_kind = MapKind::ScalarLogistic;
  double lambda = 0.25;
  double theta = 0.5;
  std::uint64_t seed = 1;
  // scan geometry
  int order = 0;  // 0 = automatic (d/2 rounded up)
  std::vector<double> r_list{8};
  std::vector<double> l_list{64, 128, 256};
  int direction = 0;
  int idx_i = 0, idx_j = 0, idx_m = 0, idx_l = 0;
  long samples = 64;
  bool with_sensitivity = true;
  // moment scan
  std::vector<Index> size_list{64, 128, 256};
  // solver
  double solver_tol = 1e-11;
  long solver_max_iter = 2000;
  // run
  std::string output_dir = ".";
  int workers = 0;  // 0 = environment variable / hardware

  int effective_order() const { return order > 0 ? order : (dim + 1) / 2; }

  TorusGrid make_grid() const { return TorusGrid(dim, side); }
  TorusGrid make_grid(Index s) const { return TorusGrid(dim, s); }

  SpectralCovariance make_covariance() const {
    SpectralCovariance cov;
    cov.family = family;
    cov.alpha0 = alpha0;
    cov.ell = ell;
    cov.sigma2 = sigma2;
    return cov;
  }

  CoefficientMap make_map() const {
    CoefficientMap map;
    map.kind = map_kind;
    map.lambda = lambda;
    map.theta = theta;
    return map;
  }

  EnsembleSpec make_ensemble(const TorusGrid& g) const {
    return EnsembleSpec{g, make_covariance(), make_map(), seed};
  }

  SolveOptions solve_options() const {
    SolveOptions opt;
    opt.tol = solver_tol;
    opt.max_iter = solver_max_iter;
    return opt;
  }

  /// Throws std::invalid_argument with a message on the first violated
  /// invariant. Scan geometry: both supports plus separation must fit in a
  /// half period, and all pairs must respect the scale separation L >= 4R.
  void validate() const {
    if (dim != 2 && dim != 3) throw std::invalid_argument("config: dim must be 2 or 3");
    if (side < 4) throw std::invalid_argument("config: side must be >= 4");
    make_covariance().validate(dim);
    make_map().validate();
    const int n = effective_order();
    if (n < 1 || n > 2) throw std::invalid_argument("config: order must be 1 or 2");
    if (r_list.empty() || l_list.empty())
      throw std::invalid_argument("config: R and L lists must be nonempty");
    double rmax = 0, lmax = 0, lmin = 1e300;
    for (double r : r_list) {
      if (!(r >= 2)) throw std::invalid_argument("config: every R must be >= 2");
      rmax = std::max(rmax, r);
    }
    for (double l : l_list) {
      if (!(l > 0)) throw std::invalid_argument("config: every L must be positive");
      if (std::abs(l - std::round(l)) > 1e-9)
        throw std::invalid_argument("config: every L must be an integer lattice shift");
      lmax = std::max(lmax, l);
      lmin = std::min(lmin, l);
    }
    if (lmax + 2 * rmax > double(side) / 2)
      throw std::invalid_argument("config: max(L) + 2 max(R) must be <= side/2");
    if (lmin < 4 * rmax) throw std::invalid_argument("config: need L >= 4R for every pair");
    if (direction < 0 || direction >= dim)
      throw std::invalid_argument("config: direction out of range");
    for (int ix : {idx_i, idx_j, idx_m, idx_l})
      if (ix < 0 || ix >= dim) throw std::invalid_argument("config: component index out of range");
    if (samples < 1) throw std::invalid_argument("config: samples must be >= 1");
    if (size_list.empty()) throw std::invalid_argument("config: size list must be nonempty");
    for (Index s : size_list)
      if (s < 4) throw std::invalid_argument("config: every scan size must be >= 4");
    if (!(solver_tol > 0)) throw std::invalid_argument("config: solver tol must be positive");
    if (solver_max_iter < 1) throw std::invalid_argument("config: solver max_iter must be >= 1");
    if (output_dir.empty()) throw std::invalid_argument("config: output dir must be nonempty");
    if (workers < 0) throw std::invalid_argument("config: workers must be >= 0");
  }

  /// Canonical key-value rendering of every result-affecting field, used for
  /// the config digest. Worker count and output paths are excluded: they must
  /// not change results.
  std::string canonical_text() const {
    std::ostringstream os;
    os << "dim " << dim << "\n";
    os << "side " << side << "\n";
    os << "family " << family_name(family) << "\n";
    os << "alpha0 " << labdet::fmt(alpha0) << "\n";
    os << "ell " << labdet::fmt(ell) << "\n";
    os << "sigma2 " << labdet::fmt(sigma2) << "\n";
    os << "map " << map_name(map_kind) << "\n";
    os << "lambda " << labdet::fmt(lambda) << "\n";
    os << "theta " << labdet::fmt(theta) << "\n";
    os << "seed " << seed << "\n";
    os << "order " << order << "\n";
    os << "r_list";
    for (double r : r_list) os << " " << labdet::fmt(r);
    os << "\n";
    os << "l_list";
    for (double l : l_list) os << " " << labdet::fmt(l);
    os << "\n";
    os << "direction " << direction << "\n";
    os << "indices " << idx_i << " " << idx_j << " " << idx_m << " " << idx_l << "\n";
    os << "samples " << samples << "\n";
    os << "with_sensitivity " << (with_sensitivity ? 1 : 0) << "\n";
    os << "size_list";
    for (Index s : size_list) os << " " << s;
    os << "\n";
    os << "solver_tol " << labdet::fmt(solver_tol) << "\n";
    os << "solver_max_iter " << solver_max_iter << "\n";
    return os.str();
  }
};

/// Worker-count resolution: explicit config > HOMLAB_WORKERS > hardware.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("HOMLAB_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0 && v < 1024) return int(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

// =============================================================================
// Deterministic parallel sample loop
// =============================================================================

/// Runs produce(s) for s in [0, n) across `workers` threads and feeds the
/// results to merge(s, result) strictly in increasing s, regardless of thread
/// scheduling. Workers are throttled so at most O(workers) results are
/// buffered. produce must be thread-safe; merge runs on the calling thread.
template <typename Result, typename Produce, typename Merge>
void run_ordered_samples(long n, int workers, Produce&& produce, Merge&& merge) {
  if (n <= 0) return;
  workers = int(std::min<long>(std::max(workers, 1), n));
  if (workers == 1) {
    for (long s = 0; s < n; ++s) {
      Result r = produce(s);
      merge(s, r);
    }
    return;
  }
  std::map<long, Result> ready;
  std::mutex mu;
  std::condition_variable cv_ready, cv_space;
  long next = 0;
  bool failed = false;
  std::exception_ptr err;
  const long max_ahead = 2L * workers + 2;

  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (long s = w; s < n; s += workers) {
          {
            std::unique_lock<std::mutex> lk(mu);
            cv_space.wait(lk, [&] { return failed || s < next + max_ahead; });
            if (failed) return;
          }
          Result r = produce(s);
          {
            std::lock_guard<std::mutex> lk(mu);
            ready.emplace(s, std::move(r));
          }
          cv_ready.notify_all();
        }
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
        failed = true;
        cv_ready.notify_all();
        cv_space.notify_all();
      }
    });
  }
  {
    std::unique_lock<std::mutex> lk(mu);
    while (next < n) {
      cv_ready.wait(lk, [&] { return failed || ready.count(next) > 0; });
      if (ready.count(next) == 0) break;  // failure upstream
      auto node = ready.extract(next);
      lk.unlock();
      merge(next, node.mapped());
      lk.lock();
      ++next;
      cv_space.notify_all();
    }
    failed = true;  // release any throttled workers on early exit
    cv_space.notify_all();
  }
  for (std::thread& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// =============================================================================
// Decay scan
// =============================================================================

/// Envelope shape of the decorrelation bound: R^{-d/2} L^{-d/2-alpha0}
/// ln(L/R), with an extra (ln R)^{1/2} in even dimension.
inline double theorem_envelope(int dim, double alpha0, double r, double l) {
  double v = std::pow(r, -0.5 * dim) * std::pow(l, -0.5 * dim - alpha0) * std::log(l / r);
  if (dim % 2 == 0) v *= std::sqrt(std::log(r));
  return v;
}

struct DecayPoint {
  double r = 0, l = 0;
  double p = 0;          // estimated covariance of the two observables
  double se = 0;         // batch-means standard error
  double envelope = 0;   // theorem envelope shape (no constant)
  double cov_bound = 0;  // sensitivity-profile convolution bound (no constant)
  long n = 0;            // successful samples
  bool sign_stable = false;

  bool significant() const { return sign_stable && std::abs(p) >= 2 * se; }
};

struct DominationSummary {
  double constant = 0;     // fitted on significant points: max |P| / bound
  bool dominated = false;  // every point obeys |P| - 2 se <= constant * bound
  long significant = 0;
  double worst_excess = 0;  // max over points of (|P| - 2 se) - C * bound
};

struct DecayScanResult {
  std::vector<DecayPoint> points;               // R-major, L within
  std::vector<std::vector<double>> per_sample;  // per point: successful samples in order
  std::vector<ScalarField> kernel_rms;          // per R: <|dF/da|^2>^{1/2} profile
  long requested = 0, used = 0, skipped = 0;
  bool invalid = false;
  std::vector<std::string> log;

  const DecayPoint* find(double r, double l) const {
    for (const DecayPoint& pt : points)
      if (pt.r == r && pt.l == l) return &pt;
    return nullptr;
  }

  /// Weighted log-log fit of |P| against L at fixed R over significant points.
  std::optional<PowerLawFit> fit_l_exponent(double at_r) const {
    std::vector<FitPoint> pts;
    for (const DecayPoint& pt : points)
      if (pt.r == at_r && pt.significant()) pts.push_back({pt.l, std::abs(pt.p), pt.se});
    if (pts.size() < 3) return std::nullopt;
    return fit_power_law(pts);
  }

  /// Weighted log-log fit of |P| against R at fixed ratio L/R.
  std::optional<PowerLawFit> fit_r_exponent(double at_ratio) const {
    std::vector<FitPoint> pts;
    for (const DecayPoint& pt : points)
      if (std::abs(pt.l / pt.r - at_ratio) < 1e-9 && pt.significant())
        pts.push_back({pt.r, std::abs(pt.p), pt.se});
    if (pts.size() < 3) return std::nullopt;
    return fit_power_law(pts);
  }
};

/// One constant against the whole grid: C is fitted as the largest ratio
/// |P|/bound over statistically significant points, then every point must
/// satisfy |P| - 2 se <= C * bound (the certain part of |P| is dominated).
inline DominationSummary domination_summary(const std::vector<DecayPoint>& points,
                                            bool against_cov_bound = false) {
  DominationSummary s;
  for (const DecayPoint& pt : points) {
    const double bound = against_cov_bound ? pt.cov_bound : pt.envelope;
    if (pt.significant() && bound > 0) {
      s.constant = std::max(s.constant, std::abs(pt.p) / bound);
      ++s.significant;
    }
  }
  s.dominated = s.significant > 0;
  for (const DecayPoint& pt : points) {
    const double bound = against_cov_bound ? pt.cov_bound : pt.envelope;
    const double certain = std::max(std::abs(pt.p) - 2 * pt.se, 0.0);
    const double excess = certain - s.constant * bound;
    s.worst_excess = std::max(s.worst_excess, excess);
    if (bound <= 0 ? certain > 0 : excess > 0) s.dominated = false;
  }
  return s;
}

namespace labdet {

struct DecaySampleOut {
  bool ok = true;
  std::string message;
  std::vector<double> p;          // per (R, L) pair, R-major
  std::vector<ScalarField> msq;   // per R: |dF/da|^2 field
  std::vector<ScalarField> msq2;  // per R: second observable, when distinct
};

inline bool hierarchy_converged(const CorrectorHierarchy& h, std::string* why) {
  for (const CorrectorLevel& lv : h.levels)
    for (const SolveReport& r : lv.reports)
      if (!r.converged) {
        if (why) *why = "corrector solve did not converge (level " + std::to_string(lv.level) +
                        ", residual " + fmt(r.rel_residual) + ")";
        return false;
      }
  return true;
}

}  // namespace labdet

/// Full decorrelation experiment. Per sample: one coefficient draw, corrector
/// hierarchy (+ dual when the coefficient is nonsymmetric or the order needs
/// it), the commutator entries, and for every (R, L) pair the translation-
/// averaged product estimator
///   P_hat = (1/M^d) sum_z F_z F'_{z+Le},   F_z = sum_x g(x - z) Xi(x),
/// evaluated exactly with three transforms per sample.  Stationarity of the
/// ensemble makes every translate an identically distributed observable pair,
/// so the translation average is an unbiased, variance-reduced estimate of
/// Cov(F, F'); batch means over samples provide the error bar.
/// With sensitivity enabled, the per-cell derivative kernel magnitude of F is
/// accumulated for the covariance-estimate bound.
///
/// Finite-volume reading guide.  The commutator is centered sample by sample
/// (its spatial mean vanishes with the per-sample effective tensor), so the
/// k = 0 mode is absent and the estimator converges to the periodized
/// covariance, which sits a constant S(0)/M^d below the infinite-volume one
/// (S = spectral density of the commutator entry at zero, typically O(1)).
/// The decaying part of the signal scales like L^{-(d+alpha0)} with an O(ell)
/// prefactor.  A grid point is therefore informative only when that tail
/// clears both the flat S(0)/M^d offset and the sampling noise, whose
/// per-sample scale is about S(0)/(M R); points far beyond that range read
/// as noise (or as the small negative offset once the noise is averaged
/// down), not as the underlying decay law.
inline DecayScanResult run_decay_scan(const ExperimentConfig& cfg,
                                      const std::function<void(long)>& progress = {}) {
  cfg.validate();
  const TorusGrid grid = cfg.make_grid();
  const int d = grid.dim();
  const int n = cfg.effective_order();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  const SolveOptions opt = cfg.solve_options();
  const bool distinct_second = (cfg.idx_m != cfg.idx_i) || (cfg.idx_l != cfg.idx_j);
  const size_t nr = cfg.r_list.size(), nl = cfg.l_list.size();

  // Shared per-scan precomputation: |g_hat|^2 per R, and the lag indices.
  std::vector<std::vector<double>> gh2(nr);
  std::vector<ScalarField> bumps;
  for (size_t ri = 0; ri < nr; ++ri) {
    TestFunction tf;
    tf.radius = cfg.r_list[ri];
    bumps.push_back(bump_eval(grid, tf));
    SpectralField gh = fourier_transform(bumps.back());
    gh2[ri].resize(gh.size());
    for (size_t k = 0; k < gh.size(); ++k) gh2[ri][k] = std::norm(gh[k]);
  }
  std::vector<Index> lag(nl);
  for (size_t li = 0; li < nl; ++li) {
    std::array<int, 3> c{0, 0, 0};
    c[size_t(cfg.direction)] = int(Index(std::llround(cfg.l_list[li])) % grid.side());
    lag[li] = grid.index(c);
  }

  DecayScanResult res;
  res.requested = cfg.samples;
  res.per_sample.assign(nr * nl, {});
  std::vector<ScalarField> acc1, acc2;
  if (cfg.with_sensitivity) {
    acc1.assign(nr, ScalarField(grid, 0.0));
    if (distinct_second) acc2.assign(nr, ScalarField(grid, 0.0));
  }

  auto produce = [&](long s) -> labdet::DecaySampleOut {
    labdet::DecaySampleOut out;
    try {
      MatrixField a = ens.sample_coefficient(std::uint64_t(s));
      const bool sym = is_pointwise_symmetric(a);
      const int dual_depth = std::max(n, 1);
      CorrectorHierarchy primal = build_hierarchy(a, sym ? dual_depth : 1, opt);
      if (!labdet::hierarchy_converged(primal, &out.message)) {
        out.ok = false;
        return out;
      }
      CorrectorHierarchy dual_store;
      const CorrectorHierarchy* dual = &primal;
      MatrixField a_trans = sym ? a : transpose_field(a);
      if (!sym) {
        dual_store = build_hierarchy(a_trans, dual_depth, opt);
        if (!labdet::hierarchy_converged(dual_store, &out.message)) {
          out.ok = false;
          return out;
        }
        dual = &dual_store;
      }
      ScalarField xi1 = standard_commutator_entry(a, primal, *dual, cfg.idx_i, cfg.idx_j, n);
      SpectralField hat1 = fourier_transform(xi1);
      SpectralField hat2 = hat1;
      if (distinct_second) {
        ScalarField xi2 = standard_commutator_entry(a, primal, *dual, cfg.idx_m, cfg.idx_l, n);
        hat2 = fourier_transform(xi2);
      }
      const double cells = double(grid.cells());
      for (size_t ri = 0; ri < nr; ++ri) {
        SpectralField vh(hat1.size());
        for (size_t k = 0; k < hat1.size(); ++k)
          vh[k] = std::conj(hat1[k]) * hat2[k] * gh2[ri][k];
        ScalarField v = inverse_fourier(grid, std::move(vh));
        for (size_t li = 0; li < nl; ++li) out.p.push_back(v[lag[li]] / cells);
      }
      if (cfg.with_sensitivity) {
        for (size_t ri = 0; ri < nr; ++ri) {
          FunctionalDerivative fd = representation_derivative(a_trans, primal, *dual, bumps[ri],
                                                              cfg.idx_i, cfg.idx_j, n, opt);
          if (!fd.aux.report.converged) {
            out.ok = false;
            out.message = "auxiliary solve did not converge";
            return out;
          }
          ScalarField m = fd.pointwise_norm();
          for (Index c = 0; c < grid.cells(); ++c) m[c] *= m[c];
          out.msq.push_back(std::move(m));
          if (distinct_second) {
            FunctionalDerivative fd2 = representation_derivative(a_trans, primal, *dual, bumps[ri],
                                                                 cfg.idx_m, cfg.idx_l, n, opt);
            if (!fd2.aux.report.converged) {
              out.ok = false;
              out.message = "auxiliary solve did not converge";
              return out;
            }
            ScalarField m2 = fd2.pointwise_norm();
            for (Index c = 0; c < grid.cells(); ++c) m2[c] *= m2[c];
            out.msq2.push_back(std::move(m2));
          }
        }
      }
    } catch (const std::exception& e) {
      out.ok = false;
      out.message = e.what();
    }
    return out;
  };

  auto merge = [&](long s, labdet::DecaySampleOut& out) {
    if (!out.ok) {
      ++res.skipped;
      res.log.push_back("sample " + std::to_string(s) + " skipped: " + out.message);
    } else {
      for (size_t pp = 0; pp < nr * nl; ++pp) res.per_sample[pp].push_back(out.p[pp]);
      if (cfg.with_sensitivity) {
        for (size_t ri = 0; ri < nr; ++ri) {
          double* dst = acc1[ri].data();
          const double* src = out.msq[ri].data();
          for (Index c = 0; c < grid.cells(); ++c) dst[c] += src[c];
          if (distinct_second) {
            double* dst2 = acc2[ri].data();
            const double* src2 = out.msq2[ri].data();
            for (Index c = 0; c < grid.cells(); ++c) dst2[c] += src2[c];
          }
        }
      }
      ++res.used;
    }
    if (progress) progress(s);
  };

  run_ordered_samples<labdet::DecaySampleOut>(cfg.samples, resolve_workers(cfg.workers), produce,
                                              merge);
  res.invalid = res.skipped * 100 > res.requested;

  // Sensitivity second-moment profiles and the covariance-estimate bound.
  ScalarField absc(grid, 0.0);
  std::vector<ScalarField> prof1, prof2;
  if (cfg.with_sensitivity && res.used > 0) {
    ScalarField c = covariance_kernel(grid, cfg.make_covariance());
    for (Index k = 0; k < grid.cells(); ++k) absc[k] = std::abs(c[k]);
    for (size_t ri = 0; ri < nr; ++ri) {
      ScalarField p1 = acc1[ri];
      for (Index k = 0; k < grid.cells(); ++k) p1[k] = std::sqrt(p1[k] / double(res.used));
      prof1.push_back(std::move(p1));
      if (distinct_second) {
        ScalarField p2 = acc2[ri];
        for (Index k = 0; k < grid.cells(); ++k) p2[k] = std::sqrt(p2[k] / double(res.used));
        prof2.push_back(std::move(p2));
      }
    }
    res.kernel_rms = prof1;
  }

  for (size_t ri = 0; ri < nr; ++ri)
    for (size_t li = 0; li < nl; ++li) {
      const BatchStats bs = batch_stats(res.per_sample[ri * nl + li]);
      DecayPoint pt;
      pt.r = cfg.r_list[ri];
      pt.l = cfg.l_list[li];
      pt.p = bs.mean;
      pt.se = bs.se;
      pt.n = res.used;
      pt.sign_stable = bs.sign_stable;
      pt.envelope = theorem_envelope(d, cfg.alpha0, pt.r, pt.l);
      if (cfg.with_sensitivity && res.used > 0) {
        const ScalarField& ph = distinct_second ? prof2[ri] : prof1[ri];
        ScalarField shifted = shift_field(ph, cfg.direction, -Index(std::llround(pt.l)));
        pt.cov_bound = covariance_bound_rhs(prof1[ri], shifted, absc);
      }
      res.points.push_back(pt);
    }
  return res;
}

// =============================================================================
// Moment scan
// =============================================================================

struct MomentRow {
  Index side = 0;
  int level = 0;
  std::string quantity;  // "phi" | "grad_phi" | "sigma"
  int p = 0;             // moment order (2 or 4)
  double value = 0;      // (ensemble mean of the spatial p-th moment)^{1/p}
  double se = 0;         // delta-method standard error of value
};

struct MomentScanResult {
  std::vector<MomentRow> rows;
  long requested = 0, used = 0, skipped = 0;
  bool invalid = false;
  std::vector<std::string> log;

  std::vector<FitPoint> series(int level, const std::string& quantity, int p) const {
    std::vector<FitPoint> pts;
    for (const MomentRow& r : rows)
      if (r.level == level && r.quantity == quantity && r.p == p)
        pts.push_back({double(r.side), r.value, r.se});
    return pts;
  }
};

/// Corrector moment growth across grid sizes: for each size in size_list,
/// `samples` hierarchy builds; reports the p-th-root ensemble moments of phi,
/// D phi and sigma at every level up to the effective order.
inline MomentScanResult run_moment_scan(const ExperimentConfig& cfg,
                                        const std::function<void(long)>& progress = {}) {
  cfg.validate();
  const int depth = cfg.effective_order();
  const SolveOptions opt = cfg.solve_options();
  MomentScanResult res;
  res.requested = cfg.samples * long(cfg.size_list.size());

  long done = 0;
  for (Index side : cfg.size_list) {
    const TorusGrid grid = cfg.make_grid(side);
    const EnsembleSpec ens = cfg.make_ensemble(grid);
    // per level: six series of per-sample spatial moments
    std::vector<std::array<std::vector<double>, 6>> vals(static_cast<size_t>(depth));

    struct Out {
      bool ok = true;
      std::string message;
      std::vector<MomentStats> stats;
    };
    auto produce = [&](long s) -> Out {
      Out out;
      try {
        MatrixField a = ens.sample_coefficient(std::uint64_t(s));
        CorrectorHierarchy h = build_hierarchy(a, depth, opt);
        if (!labdet::hierarchy_converged(h, &out.message)) {
          out.ok = false;
          return out;
        }
        for (int lv = 1; lv <= depth; ++lv) out.stats.push_back(measure_moments(h.level(lv)));
      } catch (const std::exception& e) {
        out.ok = false;
        out.message = e.what();
      }
      return out;
    };
    auto merge = [&](long s, Out& out) {
      if (!out.ok) {
        ++res.skipped;
        res.log.push_back("side " + std::to_string(side) + " sample " + std::to_string(s) +
                          " skipped: " + out.message);
      } else {
        for (int lv = 0; lv < depth; ++lv) {
          const MomentStats& st = out.stats[size_t(lv)];
          vals[size_t(lv)][0].push_back(st.phi_p2);
          vals[size_t(lv)][1].push_back(st.phi_p4);
          vals[size_t(lv)][2].push_back(st.grad_p2);
          vals[size_t(lv)][3].push_back(st.grad_p4);
          vals[size_t(lv)][4].push_back(st.sigma_p2);
          vals[size_t(lv)][5].push_back(st.sigma_p4);
        }
        ++res.used;
      }
      if (progress) progress(done + s);
    };
    run_ordered_samples<Out>(cfg.samples, resolve_workers(cfg.workers), produce, merge);
    done += cfg.samples;

    static const char* kNames[6] = {"phi", "phi", "grad_phi", "grad_phi", "sigma", "sigma"};
    static const int kOrders[6] = {2, 4, 2, 4, 2, 4};
    for (int lv = 0; lv < depth; ++lv)
      for (int q = 0; q < 6; ++q) {
        const BatchStats bs = batch_stats(vals[size_t(lv)][size_t(q)]);
        MomentRow row;
        row.side = side;
        row.level = lv + 1;
        row.quantity = kNames[q];
        row.p = kOrders[q];
        if (bs.mean > 0) {
          row.value = std::pow(bs.mean, 1.0 / row.p);
          row.se = bs.se / double(row.p) * std::pow(bs.mean, 1.0 / row.p - 1.0);
        }
        res.rows.push_back(row);
      }
  }
  res.invalid = res.skipped * 100 > res.requested;
  return res;
}

// =============================================================================
// Duality symmetry check (ensemble level)
// =============================================================================

struct SymmetryEntry {
  int j = 0, i1 = 0, i2 = 0;
  double lhs_mean = 0, rhs_mean = 0;
  double gap_mean = 0;
  double se = 0;  // standard error of gap_mean over samples
  double z = 0;   // |gap_mean| / se
};

struct SymmetryCheckResult {
  std::vector<SymmetryEntry> entries;
  long requested = 0, used = 0, skipped = 0;
  bool invalid = false;
  std::vector<std::string> log;

  double max_abs_z() const {
    double z = 0;
    for (const SymmetryEntry& e : entries) z = std::max(z, e.z);
    return z;
  }
};

/// Monte Carlo test of the symmetrized second-order duality relation between
/// the primal tensors and the tensors of the transposed coefficient. The
/// relation holds in ensemble mean; per entry the mean gap is compared to its
/// standard error.
inline SymmetryCheckResult run_symmetry_check(const ExperimentConfig& cfg,
                                              const std::function<void(long)>& progress = {}) {
  cfg.validate();
  const TorusGrid grid = cfg.make_grid();
  const int d = grid.dim();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  const SolveOptions opt = cfg.solve_options();

  SymmetryCheckResult res;
  res.requested = cfg.samples;
  std::vector<std::vector<double>> lhs_s, rhs_s;

  struct Out {
    bool ok = true;
    std::string message;
    SecondOrderDualityPair pair;
  };
  auto produce = [&](long s) -> Out {
    Out out;
    try {
      MatrixField a = ens.sample_coefficient(std::uint64_t(s));
      const bool sym = is_pointwise_symmetric(a);
      CorrectorHierarchy primal = build_hierarchy(a, 2, opt);
      if (!labdet::hierarchy_converged(primal, &out.message)) {
        out.ok = false;
        return out;
      }
      if (sym) {
        out.pair = second_order_duality_pair(primal, primal);
      } else {
        CorrectorHierarchy dual = build_hierarchy(transpose_field(a), 2, opt);
        if (!labdet::hierarchy_converged(dual, &out.message)) {
          out.ok = false;
          return out;
        }
        out.pair = second_order_duality_pair(primal, dual);
      }
    } catch (const std::exception& e) {
      out.ok = false;
      out.message = e.what();
    }
    return out;
  };
  auto merge = [&](long s, Out& out) {
    if (!out.ok) {
      ++res.skipped;
      res.log.push_back("sample " + std::to_string(s) + " skipped: " + out.message);
    } else {
      if (lhs_s.empty()) {
        lhs_s.resize(out.pair.lhs.size());
        rhs_s.resize(out.pair.rhs.size());
      }
      for (size_t k = 0; k < out.pair.lhs.size(); ++k) {
        lhs_s[k].push_back(out.pair.lhs[k]);
        rhs_s[k].push_back(out.pair.rhs[k]);
      }
      ++res.used;
    }
    if (progress) progress(s);
  };
  run_ordered_samples<Out>(cfg.samples, resolve_workers(cfg.workers), produce, merge);
  res.invalid = res.skipped * 100 > res.requested;

  size_t k = 0;
  for (int j = 0; j < d; ++j)
    for (int i1 = 0; i1 < d; ++i1)
      for (int i2 = i1; i2 < d; ++i2, ++k) {
        SymmetryEntry e;
        e.j = j;
        e.i1 = i1;
        e.i2 = i2;
        if (k < lhs_s.size() && res.used >= 2) {
          const long m = res.used;
          double ml = 0, mr = 0;
          for (long t = 0; t < m; ++t) {
            ml += lhs_s[k][size_t(t)];
            mr += rhs_s[k][size_t(t)];
          }
          ml /= double(m);
          mr /= double(m);
          e.lhs_mean = ml;
          e.rhs_mean = mr;
          e.gap_mean = ml - mr;
          double var = 0;
          for (long t = 0; t < m; ++t) {
            const double g = lhs_s[k][size_t(t)] - rhs_s[k][size_t(t)] - e.gap_mean;
            var += g * g;
          }
          e.se = std::sqrt(var / double(m) / double(m - 1));
          e.z = e.se > 0 ? std::abs(e.gap_mean) / e.se : (e.gap_mean == 0 ? 0 : 1e300);
        }
        res.entries.push_back(e);
      }
  return res;
}

// =============================================================================
// Auxiliary-field decay profile
// =============================================================================

struct GradHPerR {
  double r_test = 0;
  ScalarField q4;              // per-cell ensemble mean of |D h|^4 (the kernel tail)
  ScalarField k4;              // per-cell ensemble mean of |gamma|^4, gamma the full kernel
  RadialProfile profile;       // shells of q4 around the bump center
  double aggregate = 0;        // sum_x k4(x)^{1/2}, the variance-level kernel mass
  std::optional<PowerLawFit> radial_fit;  // of shell-mean^{1/4} on [2R, M/4]
};

struct GradHDecayResult {
  std::vector<GradHPerR> per_r;
  std::optional<PowerLawFit> aggregate_fit;  // aggregate vs R
  std::array<double, 3> center{0, 0, 0};
  long requested = 0, used = 0, skipped = 0;
  bool invalid = false;
  std::vector<std::string> log;
};

/// Ensemble decay of the sensitivity kernel in the test-function radius.
/// Per cell and sample it accumulates |D h_j|^4 (the nonlocal kernel tail,
/// whose radial profile decays like the Calderon–Zygmund rate r^{-d}) and
/// |gamma_j|^4 with gamma = gamma_local + D h the full sensitivity kernel.
/// The aggregate sum_x <|gamma|^4>^{1/2} is the variance-level kernel mass
/// that controls Var of the windowed observable; it scales like R^{-d}
/// (the tail alone contributes only R^{-d-2}).
inline GradHDecayResult run_gradh_decay(const ExperimentConfig& cfg,
                                        const std::function<void(long)>& progress = {}) {
  cfg.validate();
  const TorusGrid grid = cfg.make_grid();
  const int d = grid.dim();
  const int n = cfg.effective_order();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  const SolveOptions opt = cfg.solve_options();
  const size_t nr = cfg.r_list.size();

  GradHDecayResult res;
  res.requested = cfg.samples;
  for (int k = 0; k < d; ++k) res.center[size_t(k)] = double(grid.side() / 2);

  std::vector<ScalarField> bumps;
  for (double r : cfg.r_list) {
    TestFunction tf;
    tf.radius = r;
    tf.center = res.center;
    bumps.push_back(bump_eval(grid, tf));
  }
  std::vector<ScalarField> acc_q(nr, ScalarField(grid, 0.0));
  std::vector<ScalarField> acc_k(nr, ScalarField(grid, 0.0));

  struct Out {
    bool ok = true;
    std::string message;
    std::vector<ScalarField> q4, k4;
  };
  auto produce = [&](long s) -> Out {
    Out out;
    try {
      MatrixField a = ens.sample_coefficient(std::uint64_t(s));
      const bool sym = is_pointwise_symmetric(a);
      MatrixField a_trans = sym ? a : transpose_field(a);
      CorrectorHierarchy dual = build_hierarchy(a_trans, std::max(n, 1), opt);
      if (!labdet::hierarchy_converged(dual, &out.message)) {
        out.ok = false;
        return out;
      }
      for (size_t ri = 0; ri < nr; ++ri) {
        HSolution hs = h_solve(a_trans, dual, bumps[ri], cfg.idx_j, n, opt);
        if (!hs.report.converged) {
          out.ok = false;
          out.message = "auxiliary solve did not converge";
          return out;
        }
        VectorField gamma = sensitivity_kernel_local(dual, bumps[ri], cfg.idx_j, n);
        add_scaled(gamma, 1.0, hs.grad_h);
        ScalarField q4(grid), k4(grid);
        for (Index c = 0; c < grid.cells(); ++c) {
          double h2 = 0, g2 = 0;
          for (int k = 0; k < d; ++k) {
            h2 += hs.grad_h.at(k, c) * hs.grad_h.at(k, c);
            g2 += gamma.at(k, c) * gamma.at(k, c);
          }
          q4[c] = h2 * h2;
          k4[c] = g2 * g2;
        }
        out.q4.push_back(std::move(q4));
        out.k4.push_back(std::move(k4));
      }
    } catch (const std::exception& e) {
      out.ok = false;
      out.message = e.what();
    }
    return out;
  };
  auto merge = [&](long s, Out& out) {
    if (!out.ok) {
      ++res.skipped;
      res.log.push_back("sample " + std::to_string(s) + " skipped: " + out.message);
    } else {
      for (size_t ri = 0; ri < nr; ++ri) {
        double* dq = acc_q[ri].data();
        double* dk = acc_k[ri].data();
        const double* sq = out.q4[ri].data();
        const double* sk = out.k4[ri].data();
        for (Index c = 0; c < grid.cells(); ++c) {
          dq[c] += sq[c];
          dk[c] += sk[c];
        }
      }
      ++res.used;
    }
    if (progress) progress(s);
  };
  run_ordered_samples<Out>(cfg.samples, resolve_workers(cfg.workers), produce, merge);
  res.invalid = res.skipped * 100 > res.requested;

  std::vector<FitPoint> agg_pts;
  for (size_t ri = 0; ri < nr; ++ri) {
    GradHPerR per;
    per.r_test = cfg.r_list[ri];
    per.q4 = acc_q[ri];
    per.k4 = acc_k[ri];
    if (res.used > 0)
      for (Index c = 0; c < grid.cells(); ++c) {
        per.q4[c] /= double(res.used);
        per.k4[c] /= double(res.used);
      }
    per.profile = radial_profile(per.q4, res.center);
    double agg = 0;
    for (Index c = 0; c < grid.cells(); ++c) agg += std::sqrt(per.k4[c]);
    per.aggregate = agg;
    std::vector<FitPoint> pts;
    for (size_t b = 0; b < per.profile.r.size(); ++b) {
      const double r = per.profile.r[b];
      if (r >= 2 * per.r_test && r <= double(grid.side()) / 4 && per.profile.mean[b] > 0)
        pts.push_back({r, std::pow(per.profile.mean[b], 0.25), 0});
    }
    if (pts.size() >= 3) per.radial_fit = fit_power_law(pts);
    if (per.aggregate > 0) agg_pts.push_back({per.r_test, per.aggregate, 0});
    res.per_r.push_back(std::move(per));
  }
  if (agg_pts.size() >= 3) res.aggregate_fit = fit_power_law(agg_pts);
  return res;
}

// =============================================================================
// Gateaux verification run
// =============================================================================

struct RepCheckResult {
  GateauxTable table;
  double radius = 0;
  int i = 0, j = 0, order = 1;
};

/// A coefficient perturbation for derivative tests: an isotropic bump of the
/// given radius and peak amplitude (the bump is de-normalized so `amplitude`
/// is the actual peak value of the diagonal entries).
inline MatrixField isotropic_bump_perturbation(const TorusGrid& g, const TestFunction& tf,
                                               double amplitude) {
  ScalarField s = bump_eval(g, tf);
  const double peak = bump::normalization(g.dim()) * bump::kProfileSup[0] *
                      std::pow(tf.radius, -double(g.dim()));
  const double scale = peak > 0 ? amplitude / peak : 0.0;
  MatrixField da(g, 0.0);
  for (int k = 0; k < g.dim(); ++k) {
    double* dst = da.comp(k, k);
    for (Index c = 0; c < g.cells(); ++c) dst[c] = scale * s[c];
  }
  return da;
}

/// Builds one ensemble sample, a test bump at the grid center, a partially
/// overlapping isotropic perturbation, and runs the Gateaux comparison at the
/// given step sizes.
inline RepCheckResult run_rep_check(const ExperimentConfig& cfg,
                                    std::vector<double> ts = {1e-4, 5e-5}) {
  cfg.validate();
  const TorusGrid grid = cfg.make_grid();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  MatrixField a = ens.sample_coefficient(0);

  RepCheckResult out;
  out.radius = cfg.r_list.front();
  out.i = cfg.idx_i;
  out.j = cfg.idx_j;
  out.order = cfg.effective_order();

  TestFunction tf;
  tf.radius = out.radius;
  for (int k = 0; k < grid.dim(); ++k) tf.center[size_t(k)] = double(grid.side() / 2);
  ScalarField g = bump_eval(grid, tf);

  TestFunction tp = tf;  // perturbation bump, offset by R along the first axis
  tp.center[0] += out.radius;
  MatrixField da = isotropic_bump_perturbation(grid, tp, 0.3);

  out.table = gateaux_check(a, da, g, out.i, out.j, out.order, ts, cfg.solve_options());
  return out;
}

// =============================================================================
// Covariance tail run
// =============================================================================

/// Realized-kernel tail check on the configured grid: fit window [8, side/4].
inline TailCheckReport run_tail_check(const ExperimentConfig& cfg) {
  cfg.validate();
  const TorusGrid grid = cfg.make_grid();
  return covariance_tail_check(grid, cfg.make_covariance(), 8.0, double(grid.side()) / 4.0);
}

// =============================================================================
// File output: CSV, binary field dumps, manifest
// =============================================================================

namespace labdet {

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);  // binary: LF newlines on every platform
  if (!os) throw std::runtime_error("cannot open for writing: " + p.string());
  return os;
}

}  // namespace labdet

inline void write_decay_csv(const std::filesystem::path& p, const DecayScanResult& res) {
  std::ofstream os = labdet::open_out(p);
  os << "R,L,P,stderr,n_samples,envelope\n";
  for (const DecayPoint& pt : res.points)
    os << labdet::fmt(pt.r) << "," << labdet::fmt(pt.l) << "," << labdet::fmt(pt.p) << ","
       << labdet::fmt(pt.se) << "," << pt.n << "," << labdet::fmt(pt.envelope) << "\n";
}

inline void write_moment_csv(const std::filesystem::path& p, const MomentScanResult& res) {
  std::ofstream os = labdet::open_out(p);
  os << "M,level,quantity,p,value,stderr\n";
  for (const MomentRow& r : res.rows)
    os << r.side << "," << r.level << "," << r.quantity << "," << r.p << ","
       << labdet::fmt(r.value) << "," << labdet::fmt(r.se) << "\n";
}

inline void write_gateaux_csv(const std::filesystem::path& p, const GateauxTable& table) {
  std::ofstream os = labdet::open_out(p);
  os << "t,lhs,rhs,rel_error\n";
  for (const GateauxRow& r : table.rows)
    os << labdet::fmt(r.t) << "," << labdet::fmt(r.quotient) << "," << labdet::fmt(r.predicted)
       << "," << labdet::fmt(r.rel_error) << "\n";
}

inline void write_tail_csv(const std::filesystem::path& p, const TailCheckReport& rep) {
  std::ofstream os = labdet::open_out(p);
  os << "r,max_abs_c\n";
  for (const auto& sh : rep.shells)
    os << labdet::fmt(sh.first) << "," << labdet::fmt(sh.second) << "\n";
}

inline void write_gradh_csv(const std::filesystem::path& p, const GradHDecayResult& res) {
  std::ofstream os = labdet::open_out(p);
  os << "R,r,q4_mean,q4_peak,count\n";
  for (const GradHPerR& per : res.per_r)
    for (size_t b = 0; b < per.profile.r.size(); ++b)
      os << labdet::fmt(per.r_test) << "," << labdet::fmt(per.profile.r[b]) << ","
         << labdet::fmt(per.profile.mean[b]) << "," << labdet::fmt(per.profile.peak[b]) << ","
         << per.profile.count[b] << "\n";
}

inline void write_symmetry_csv(const std::filesystem::path& p, const SymmetryCheckResult& res) {
  std::ofstream os = labdet::open_out(p);
  os << "j,i1,i2,lhs,rhs,gap,stderr,z\n";
  for (const SymmetryEntry& e : res.entries)
    os << e.j << "," << e.i1 << "," << e.i2 << "," << labdet::fmt(e.lhs_mean) << ","
       << labdet::fmt(e.rhs_mean) << "," << labdet::fmt(e.gap_mean) << "," << labdet::fmt(e.se)
       << "," << labdet::fmt(e.z) << "\n";
}

inline void write_corrector_csv(const std::filesystem::path& p, const CorrectorHierarchy& h) {
  std::ofstream os = labdet::open_out(p);
  os << "level,label,value\n";
  for (const CorrectorLevel& lv : h.levels) {
    const int d = lv.phi[0].grid().dim();
    for (size_t pre = 0; pre < lv.abar.size(); ++pre)
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          os << lv.level << ",abar[" << pre << "](" << r << "." << c << "),"
             << labdet::fmt(lv.abar[pre](r, c)) << "\n";
    os << lv.level << ",sigma_skew_residual," << labdet::fmt(sigma_skew_residual(lv)) << "\n";
    os << lv.level << ",sigma_divergence_residual," << labdet::fmt(sigma_divergence_residual(lv))
       << "\n";
    os << lv.level << ",flux_mean_residual," << labdet::fmt(flux_mean_residual(lv)) << "\n";
    double worst = 0;
    for (const SolveReport& r : lv.reports) worst = std::max(worst, r.rel_residual);
    os << lv.level << ",solver_residual," << labdet::fmt(worst) << "\n";
  }
}

/// Binary field dump: 8-byte magic "HOMLABF1", u32 dim, u32 components,
/// u64 side, then components * side^dim little-endian float64, component-major.
inline void write_field_dump(const std::filesystem::path& p, int dim, Index side, int components,
                             const double* data) {
  std::ofstream os = labdet::open_out(p);
  os.write("HOMLABF1", 8);
  const std::uint32_t d32 = std::uint32_t(dim), c32 = std::uint32_t(components);
  const std::uint64_t s64 = std::uint64_t(side);
  os.write(reinterpret_cast<const char*>(&d32), 4);
  os.write(reinterpret_cast<const char*>(&c32), 4);
  os.write(reinterpret_cast<const char*>(&s64), 8);
  std::uint64_t cells = 1;
  for (int k = 0; k < dim; ++k) cells *= s64;
  os.write(reinterpret_cast<const char*>(data),
           std::streamsize(cells * std::uint64_t(components) * sizeof(double)));
}

// =============================================================================
// Run manifest
// =============================================================================

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ULL) {
  const unsigned char* b = static_cast<const unsigned char*>(data);
  for (std::size_t k = 0; k < n; ++k) {
    h ^= b[k];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string digest_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string digest_of_text(const std::string& s) {
  return digest_hex(fnv1a64(s.data(), s.size()));
}

inline std::string digest_of_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read for digest: " + p.string());
  std::uint64_t h = 14695981039346656037ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof buf);
    h = fnv1a64(buf, std::size_t(is.gcount()), h);
  }
  return digest_hex(h);
}

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string version = kVersionTag;
  int workers = 1;
  double wall_seconds = 0;
  std::vector<std::pair<std::string, double>> stages;
  struct FileRecord {
    std::string path;
    std::string digest;
    std::uint64_t bytes = 0;
  };
  std::vector<FileRecord> files;

  void add_stage(const std::string& name, double seconds) { stages.push_back({name, seconds}); }

  void add_file(const std::filesystem::path& p) {
    FileRecord rec;
    rec.path = p.filename().string();
    rec.digest = digest_of_file(p);
    rec.bytes = std::uint64_t(std::filesystem::file_size(p));
    files.push_back(rec);
  }

  void write(const std::filesystem::path& p) const {
    std::ofstream os = labdet::open_out(p);
    os << "manifest_version 1\n";
    os << "tool " << version << "\n";
    os << "command " << command << "\n";
    os << "config_digest fnv1a64:" << config_digest << "\n";
    os << "seed " << seed << "\n";
    os << "workers " << workers << "\n";
    os << "wall_clock_seconds " << labdet::fmt(wall_seconds) << "\n";
    for (const auto& st : stages)
      os << "stage " << st.first << " " << labdet::fmt(st.second) << "\n";
    for (const FileRecord& f : files)
      os << "file " << f.path << " fnv1a64:" << f.digest << " " << f.bytes << "\n";
  }
};

/// Wall-clock stopwatch for manifest stage timings.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace homlab
