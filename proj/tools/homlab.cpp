// =============================================================================
// homlab command-line interface.
//
// Subcommands:
//   sample       draw one coefficient field, dump it, report ellipticity
//   correctors   build the corrector hierarchy, print tensors and residuals
//   rep-check    Gateaux difference-quotient table for the derivative formula
//   decay-scan   Monte Carlo decorrelation scan over the (R, L) grid
//   moment-scan  corrector moment growth across grid sizes
//   tail-check   realized covariance kernel tail fit
//
// Configuration comes from an INI file (--config) mirroring the option names
// (sections = the dotted prefixes below), with command-line overrides. Every
// run writes its outputs plus a `run.manifest` with content digests.
// =============================================================================

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "homlab/homlab.hpp"

namespace fs = std::filesystem;
using namespace homlab;

namespace {

struct CliState {
  ExperimentConfig cfg;
  std::string family = "stable-exp";
  std::string map = "scalar-logistic";
  long sample_index = 0;
  std::vector<double> rep_ts{1e-4, 5e-5, 2.5e-5};
};

/// INI reader mapping `[section]` + `key=value` onto the flat dotted option
/// names used on the command line (`--section.key`). The stock formatter
/// would instead route sections to subcommands, which isn't the layout here.
/// Values are split on whitespace and commas so list options accept
/// `l-list=64 128 256` or `l-list=64,128,256`; `#`/`;` start comments.
class SectionedIniConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::vector<CLI::ConfigItem> out;
    std::string line, section;
    auto trim = [](std::string s) {
      const char* ws = " \t\r\n";
      const size_t b = s.find_first_not_of(ws);
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(ws) - b + 1);
    };
    while (std::getline(input, line)) {
      const size_t hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw CLI::FileError("config line is not key=value: " + line);
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) throw CLI::FileError("config line has an empty key: " + line);
      CLI::ConfigItem item;
      item.name = section.empty() ? key : section + "." + key;
      std::string tok;
      for (char c : val) {
        if (c == ' ' || c == '\t' || c == ',') {
          if (!tok.empty()) item.inputs.push_back(tok);
          tok.clear();
        } else {
          tok.push_back(c);
        }
      }
      if (!tok.empty()) item.inputs.push_back(tok);
      out.push_back(std::move(item));
    }
    return out;
  }
};

void bind_config(CLI::App& app, CliState& st) {
  app.config_formatter(std::make_shared<SectionedIniConfig>());
  app.set_config("--config", "", "INI configuration file (sections match option prefixes)");
  app.add_option("--grid.dim", st.cfg.dim, "lattice dimension (2 or 3)");
  app.add_option("--grid.side", st.cfg.side, "grid side length M");
  app.add_option("--ensemble.family", st.family, "spectral family: stable-exp | matern-like");
  app.add_option("--ensemble.alpha0", st.cfg.alpha0, "covariance tail exponent");
  app.add_option("--ensemble.ell", st.cfg.ell, "correlation length");
  app.add_option("--ensemble.sigma2", st.cfg.sigma2, "Gaussian field variance");
  app.add_option("--ensemble.map", st.map, "coefficient map: scalar-logistic | logistic-skew");
  app.add_option("--ensemble.lambda", st.cfg.lambda, "ellipticity floor of the map");
  app.add_option("--ensemble.theta", st.cfg.theta, "skew strength of the map");
  app.add_option("--ensemble.seed", st.cfg.seed, "master seed");
  app.add_option("--scan.order", st.cfg.order, "commutator order n (0 = automatic)");
  app.add_option("--scan.r-list", st.cfg.r_list, "test-function radii R");
  app.add_option("--scan.l-list", st.cfg.l_list, "separations L");
  app.add_option("--scan.direction", st.cfg.direction, "separation axis");
  app.add_option("--scan.i", st.cfg.idx_i, "first observable row index");
  app.add_option("--scan.j", st.cfg.idx_j, "first observable column index");
  app.add_option("--scan.m", st.cfg.idx_m, "second observable row index");
  app.add_option("--scan.l", st.cfg.idx_l, "second observable column index");
  app.add_option("--scan.samples", st.cfg.samples, "Monte Carlo sample count");
  app.add_option("--scan.sensitivity", st.cfg.with_sensitivity,
                 "also accumulate derivative-kernel profiles (decay-scan)");
  app.add_option("--moments.sizes", st.cfg.size_list, "grid sides for the moment scan");
  app.add_option("--solver.tol", st.cfg.solver_tol, "relative residual tolerance");
  app.add_option("--solver.max-iter", st.cfg.solver_max_iter, "Krylov iteration cap");
  app.add_option("--run.out", st.cfg.output_dir, "output directory");
  app.add_option("--run.workers", st.cfg.workers, "worker threads (0 = HOMLAB_WORKERS/auto)");
  app.add_option("--rep.t-list", st.rep_ts, "Gateaux step sizes (rep-check)");
}

ExperimentConfig finalize(CliState& st) {
  st.cfg.family = parse_family(st.family);
  st.cfg.map_kind = parse_map(st.map);
  st.cfg.validate();
  return st.cfg;
}

RunManifest make_manifest(const ExperimentConfig& cfg, const std::string& command) {
  RunManifest man;
  man.command = command;
  man.config_digest = digest_of_text(cfg.canonical_text());
  man.seed = cfg.seed;
  man.workers = resolve_workers(cfg.workers);
  return man;
}

std::function<void(long)> progress_printer(long total) {
  const long step = std::max<long>(1, total / 20);
  return [step, total](long s) {
    if ((s + 1) % step == 0 || s + 1 == total)
      std::fprintf(stderr, "  sample %ld/%ld\n", s + 1, total);
  };
}

int cmd_sample(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "sample");
  const TorusGrid grid = cfg.make_grid();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  MatrixField a = ens.sample_coefficient(std::uint64_t(st.sample_index));
  man.add_stage("sample", sw.lap());

  const auto [emin, emax] = ellipticity_range(a);
  const double lip = map_lipschitz_constant(cfg.make_map());
  std::printf("coefficient sample %ld on %d^%s grid\n", st.sample_index, int(grid.side()),
              grid.dim() == 2 ? "2" : "3");
  std::printf("  ellipticity range   [%.6g, %.6g]\n", emin, emax);
  std::printf("  map Lipschitz bound %.6g\n", lip);

  const fs::path dir = cfg.output_dir;
  const fs::path bin = dir / "coefficient.bin";
  write_field_dump(bin, grid.dim(), grid.side(), grid.dim() * grid.dim(), a.comp(0, 0));
  const fs::path csv = dir / "sample_summary.csv";
  {
    std::ofstream os = labdet::open_out(csv);
    os << "key,value\n";
    os << "ellipticity_min," << labdet::fmt(emin) << "\n";
    os << "ellipticity_max," << labdet::fmt(emax) << "\n";
    os << "map_lipschitz," << labdet::fmt(lip) << "\n";
    os << "pointwise_symmetric," << (is_pointwise_symmetric(a) ? 1 : 0) << "\n";
  }
  man.add_stage("write", sw.lap());
  man.add_file(bin);
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

int cmd_correctors(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "correctors");
  const TorusGrid grid = cfg.make_grid();
  const EnsembleSpec ens = cfg.make_ensemble(grid);
  MatrixField a = ens.sample_coefficient(std::uint64_t(st.sample_index));
  man.add_stage("sample", sw.lap());
  CorrectorHierarchy h = build_hierarchy(a, cfg.effective_order(), cfg.solve_options());
  man.add_stage("hierarchy", sw.lap());

  const int d = grid.dim();
  for (const CorrectorLevel& lv : h.levels) {
    std::printf("level %d effective tensors:\n", lv.level);
    for (size_t pre = 0; pre < lv.abar.size(); ++pre) {
      std::printf("  abar[%zu] =\n", pre);
      for (int r = 0; r < d; ++r) {
        std::printf("   ");
        for (int c = 0; c < d; ++c) std::printf(" % .12e", lv.abar[pre](r, c));
        std::printf("\n");
      }
    }
    std::printf("  sigma skew residual        %.3e\n", sigma_skew_residual(lv));
    std::printf("  sigma divergence residual  %.3e\n", sigma_divergence_residual(lv));
    std::printf("  flux mean residual         %.3e\n", flux_mean_residual(lv));
    std::printf("  corrector relation residual %.3e\n",
                corrector_relation_residual(a, h, lv.level));
  }

  const fs::path dir = cfg.output_dir;
  const fs::path csv = dir / "correctors.csv";
  write_corrector_csv(csv, h);
  man.add_stage("write", sw.lap());
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

int cmd_rep_check(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "rep-check");
  RepCheckResult rc = run_rep_check(cfg, st.rep_ts);
  man.add_stage("gateaux", sw.lap());

  std::printf("Gateaux check, order %d, entry (%d,%d), R = %g, tensors %s\n", rc.order, rc.i,
              rc.j, rc.radius, rc.table.tensors_frozen ? "frozen" : "recomputed");
  std::printf("  %-12s %-22s %-22s %s\n", "t", "difference quotient", "assembled derivative",
              "rel error");
  for (const GateauxRow& row : rc.table.rows)
    std::printf("  %-12g % -22.15e % -22.15e %.3e\n", row.t, row.quotient, row.predicted,
                row.rel_error);

  const fs::path dir = cfg.output_dir;
  const fs::path csv = dir / "gateaux.csv";
  write_gateaux_csv(csv, rc.table);
  man.add_stage("write", sw.lap());
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

int cmd_decay_scan(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "decay-scan");
  std::fprintf(stderr, "decay scan: %ld samples on %lld^%d, %d workers\n", cfg.samples,
               static_cast<long long>(cfg.side), cfg.dim, man.workers);
  DecayScanResult res = run_decay_scan(cfg, progress_printer(cfg.samples));
  man.add_stage("scan", sw.lap());

  for (const std::string& line : res.log) std::fprintf(stderr, "%s\n", line.c_str());
  std::printf("decay scan: %ld/%ld samples used%s\n", res.used, res.requested,
              res.invalid ? "  [INVALID: >1% skipped]" : "");
  std::printf("  %-8s %-8s %-14s %-12s %-12s %s\n", "R", "L", "P", "stderr", "envelope",
              "stable");
  for (const DecayPoint& pt : res.points)
    std::printf("  %-8g %-8g % -14.6e %-12.3e %-12.3e %s\n", pt.r, pt.l, pt.p, pt.se,
                pt.envelope, pt.sign_stable ? "yes" : "no");
  for (double r : cfg.r_list)
    if (auto fit = res.fit_l_exponent(r))
      std::printf("  L-exponent at R=%g: %.4f (over %ld significant points)\n", r, fit->slope,
                  fit->used);
  const DominationSummary env = domination_summary(res.points, false);
  std::printf("  envelope constant %.6g (%ld significant points, %s)\n", env.constant,
              env.significant, env.dominated ? "dominates" : "does NOT dominate");

  const fs::path dir = cfg.output_dir;
  const fs::path csv = dir / "decay.csv";
  write_decay_csv(csv, res);
  man.add_stage("write", sw.lap());
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

int cmd_moment_scan(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "moment-scan");
  const long total = cfg.samples * long(cfg.size_list.size());
  std::fprintf(stderr, "moment scan: %ld samples x %zu sizes, %d workers\n", cfg.samples,
               cfg.size_list.size(), man.workers);
  MomentScanResult res = run_moment_scan(cfg, progress_printer(total));
  man.add_stage("scan", sw.lap());

  for (const std::string& line : res.log) std::fprintf(stderr, "%s\n", line.c_str());
  std::printf("moment scan: %ld/%ld samples used%s\n", res.used, res.requested,
              res.invalid ? "  [INVALID: >1% skipped]" : "");
  std::printf("  %-8s %-6s %-10s %-3s %-14s %s\n", "M", "level", "quantity", "p", "value",
              "stderr");
  for (const MomentRow& row : res.rows)
    std::printf("  %-8lld %-6d %-10s %-3d %-14.6e %.3e\n", static_cast<long long>(row.side),
                row.level, row.quantity.c_str(), row.p, row.value, row.se);

  const fs::path dir = cfg.output_dir;
  const fs::path csv = dir / "moments.csv";
  write_moment_csv(csv, res);
  man.add_stage("write", sw.lap());
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

int cmd_tail_check(CliState& st) {
  const ExperimentConfig cfg = finalize(st);
  Stopwatch sw;
  RunManifest man = make_manifest(cfg, "tail-check");
  TailCheckReport rep = run_tail_check(cfg);
  man.add_stage("kernel", sw.lap());

  std::printf("covariance tail check on %lld^%d\n", static_cast<long long>(cfg.side), cfg.dim);
  std::printf("  c(0)               %.6g\n", rep.c0);
  std::printf("  fitted tail slope  %.4f (target -(d+alpha0) = %.4f)\n", rep.slope,
              -(double(cfg.dim) + cfg.alpha0));
  std::printf("  envelope constant  %.6g\n", rep.envelope_constant);
  std::printf("  %s\n", rep.ok ? "ok" : ("NOT ok: " + rep.message).c_str());

  const fs::path dir = cfg.output_dir;
  const fs::path csv = dir / "tail.csv";
  write_tail_csv(csv, rep);
  man.add_stage("write", sw.lap());
  man.add_file(csv);
  man.wall_seconds = sw.seconds();
  man.write(dir / "run.manifest");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliState st;
  CLI::App app{"homlab: a numerical laboratory for quantitative stochastic homogenization"};
  app.require_subcommand(1);
  bind_config(app, st);

  CLI::App* sub_sample = app.add_subcommand("sample", "draw and dump one coefficient field");
  sub_sample->add_option("--index", st.sample_index, "sample index to draw");
  CLI::App* sub_corr = app.add_subcommand("correctors", "build and validate the hierarchy");
  sub_corr->add_option("--index", st.sample_index, "sample index to draw");
  CLI::App* sub_rep = app.add_subcommand("rep-check", "Gateaux derivative verification table");
  CLI::App* sub_decay = app.add_subcommand("decay-scan", "decorrelation scan over (R, L)");
  CLI::App* sub_mom = app.add_subcommand("moment-scan", "corrector moment growth scan");
  CLI::App* sub_tail = app.add_subcommand("tail-check", "covariance kernel tail fit");
  for (CLI::App* s : {sub_sample, sub_corr, sub_rep, sub_decay, sub_mom, sub_tail})
    s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // nonzero parse outcomes (unknown flag, ...) exit 2
  }

  try {
    if (sub_sample->parsed()) return cmd_sample(st);
    if (sub_corr->parsed()) return cmd_correctors(st);
    if (sub_rep->parsed()) return cmd_rep_check(st);
    if (sub_decay->parsed()) return cmd_decay_scan(st);
    if (sub_mom->parsed()) return cmd_moment_scan(st);
    if (sub_tail->parsed()) return cmd_tail_check(st);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
