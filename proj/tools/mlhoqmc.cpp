// Command-line front end: generating vectors, point sets, forward solves,
// convergence studies, slope fits and synthetic data.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlhoqmc/cbc.hpp"
#include "mlhoqmc/errors.hpp"
#include "mlhoqmc/harness.hpp"

using namespace mlhoqmc;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Globals {
  std::string config;
  int threads = 0;  // 0: keep the config value
  std::string out_dir = ".";
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw ConfigError("not a number: '" + cell + "'");
    }
  }
  return out;
}

struct CbcArgs {
  int m = 0, s = 0, alpha = 2;
  double walsh_c = 0.1;
  std::string level_class = "base";
};

plr::GeneratingVector build_vector(const CbcArgs& a) {
  const auto cls = cbc::parse_level_class(a.level_class);
  if (a.s < 1) throw ConfigError("--s must be >= 1");
  const auto modes = field::enumerate_modes(a.s);
  try {
    const auto w = cbc::make_weights(modes, a.alpha, a.walsh_c, cls);
    return cbc::cbc_construct(a.m, a.s, w);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void add_cbc_flags(CLI::App* cmd, CbcArgs& a, bool required) {
  cmd->add_option("--m", a.m, "log2 of the number of points")->required(required);
  cmd->add_option("--s", a.s, "dimension")->required(required);
  cmd->add_option("--alpha", a.alpha, "interlacing factor")->capture_default_str();
  cmd->add_option("--walsh-c", a.walsh_c, "Walsh constant in the weights")->capture_default_str();
  cmd->add_option("--level-class", a.level_class, "weight class: base or increment")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel higher-order QMC for Bayesian inversion"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--threads", g.threads, "worker threads");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();

  // cbc
  CbcArgs cbc_args;
  std::string cbc_out;
  auto* cbc_cmd = app.add_subcommand("cbc", "construct a generating vector");
  add_cbc_flags(cbc_cmd, cbc_args, true);
  cbc_cmd->add_option("--out", cbc_out, "vector file (default: stdout)");

  // points
  CbcArgs pt_args;
  std::string pt_vector, pt_out;
  auto* pt_cmd = app.add_subcommand("points", "write the points of an interlaced rule as CSV");
  pt_cmd->add_option("--vector", pt_vector, "vector file; otherwise built from --m/--s");
  add_cbc_flags(pt_cmd, pt_args, false);
  pt_cmd->add_option("--out", pt_out, "CSV file (default: stdout)");

  // forward
  int fw_level = 3;
  std::string fw_law = "affine", fw_y, fw_solver = "pcg";
  auto* fw_cmd = app.add_subcommand("forward", "solve the forward problem at one parameter");
  fw_cmd->add_option("--level", fw_level, "mesh level (h = 2^-(level+1))")->capture_default_str();
  fw_cmd->add_option("--law", fw_law, "affine or logaffine")->capture_default_str();
  fw_cmd->add_option("--y", fw_y, "comma-separated parameter values");
  fw_cmd->add_option("--solver", fw_solver, "pcg or cholesky")->capture_default_str();

  // study
  std::optional<int> st_L;
  bool st_no_build = false;
  auto* st_cmd = app.add_subcommand("study", "error-versus-work convergence study");
  st_cmd->add_option("--L", st_L, "finest studied level (overrides schedule.L)");
  st_cmd->add_flag("--no-build-cbc", st_no_build, "fail on missing vector files instead of building them");

  // fit
  std::string fit_csv;
  int fit_skip = 3;
  auto* fit_cmd = app.add_subcommand("fit", "least-squares slope of log error against log work");
  fit_cmd->add_option("csv", fit_csv, "study CSV")->required();
  fit_cmd->add_option("--skip", fit_skip, "records dropped from the start of each kind")->capture_default_str();

  // gen-data
  std::string gd_gamma;
  std::optional<std::string> gd_law;
  std::optional<std::uint64_t> gd_seed;
  std::optional<int> gd_level;
  auto* gd_cmd = app.add_subcommand("gen-data", "synthetic observation from the fixed truth parameter");
  gd_cmd->add_option("--gamma", gd_gamma, "comma-separated noise variances (default: config noise.gamma)");
  gd_cmd->add_option("--seed", gd_seed, "noise seed");
  gd_cmd->add_option("--truth-level", gd_level, "mesh level of the truth solve");
  gd_cmd->add_option("--law", gd_law, "affine or logaffine (default: config field.law)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (g.threads < 0) throw ConfigError("--threads must be >= 1");
    const fs::path out_dir = g.out_dir;

    if (*cbc_cmd) {
      const auto gv = build_vector(cbc_args);
      if (cbc_out.empty()) {
        plr::write_vector(std::cout, gv);
      } else {
        const fs::path p = fs::path(cbc_out).is_absolute() ? fs::path(cbc_out) : out_dir / cbc_out;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        plr::save_vector(p, gv);
      }
      return 0;
    }

    if (*pt_cmd) {
      plr::GeneratingVector gv;
      if (!pt_vector.empty()) {
        try {
          gv = plr::load_vector(pt_vector);
        } catch (const std::runtime_error& e) {
          throw ConfigError(e.what());
        }
      } else {
        if (pt_args.m < 1 || pt_args.s < 1) throw ConfigError("points: give --vector or both --m and --s");
        gv = build_vector(pt_args);
      }
      const auto pts = plr::interlaced_points(gv);
      if (pt_out.empty()) {
        plr::write_points_csv(std::cout, pts);
      } else {
        const fs::path p = fs::path(pt_out).is_absolute() ? fs::path(pt_out) : out_dir / pt_out;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream os(p);
        if (!os) throw ConfigError("cannot write " + p.string());
        plr::write_points_csv(os, pts);
      }
      return 0;
    }

    if (*fw_cmd) {
      const auto y = parse_list(fw_y);
      const auto spec = field::FieldSpec::make(field::parse_law(fw_law), std::max<int>(1, static_cast<int>(y.size())));
      fem::FemOptions opt;
      if (fw_solver == "cholesky") opt.solver = fem::SolverKind::BandCholesky;
      else if (fw_solver != "pcg") throw ConfigError("--solver must be pcg or cholesky");
      if (fw_level < 0 || fw_level > 10) throw ConfigError("--level must lie in [0, 10]");
      const auto sol = fem::ForwardSolver(spec, fem::MeshLevel::make(fw_level), opt).solve(y);
      nlohmann::json j;
      j["level"] = fw_level;
      j["h"] = sol.level.h;
      j["qoi"] = sol.qoi;
      j["observation"] = sol.observation;
      j["energy"] = sol.energy;
      j["iterations"] = sol.iterations;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*st_cmd) {
      const std::string text = g.config.empty() ? std::string("{}") : slurp(g.config);
      auto plan = harness::plan_from_json(text);
      if (st_L) {
        plan.L_max = *st_L;
        plan.validate();
      }
      if (g.threads > 0) plan.run.threads = g.threads;
      if (st_no_build) plan.build_cbc = false;
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = harness::run_study(plan);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto paths = harness::write_study(out_dir, plan, result, text, secs);
      for (const auto& p : paths) std::cout << p.string() << '\n';
      for (const auto& gr : result.per_gamma)
        for (const auto& [k, s] : gr.slopes) std::printf("gamma=%g %s slope=%.4f\n", gr.gamma, std::string(est::to_string(k)).c_str(), s);
      return 0;
    }

    if (*fit_cmd) {
      std::ifstream in(fit_csv);
      if (!in) throw ConfigError("cannot read " + fit_csv);
      const auto records = harness::read_csv(in);
      std::map<est::EstimatorKind, std::vector<harness::ConvergenceRecord>> by_kind;
      for (const auto& r : records) by_kind[r.kind].push_back(r);
      if (by_kind.empty()) throw ConfigError("no records in " + fit_csv);
      for (const auto& [k, rs] : by_kind)
        std::printf("%s %.6f\n", std::string(est::to_string(k)).c_str(), harness::fit_slope(rs, fit_skip));
      return 0;
    }

    if (*gd_cmd) {
      harness::StudyPlan plan;
      if (!g.config.empty()) plan = harness::plan_from_json(slurp(g.config));
      if (!gd_gamma.empty()) plan.gammas = parse_list(gd_gamma);
      if (gd_seed) plan.data.seed = *gd_seed;
      if (gd_level) plan.data.truth_level = *gd_level;
      if (gd_law) plan.law = field::parse_law(*gd_law);
      if (plan.data.truth_level < 0 || plan.data.truth_level > 10) throw ConfigError("--truth-level must lie in [0, 10]");
      const auto spec = field::FieldSpec::make(plan.law, static_cast<int>(plan.data.truth.size()));
      nlohmann::json j;
      j["law"] = plan.law == field::Law::Affine ? "affine" : "logaffine";
      j["seed"] = plan.data.seed;
      j["truth_level"] = plan.data.truth_level;
      j["truth"] = plan.data.truth;
      for (double gamma : plan.gammas) {
        const auto d = harness::generate_data(spec, plan.fem, gamma, plan.data);
        j["data"].push_back({{"gamma", gamma}, {"delta", d.delta}, {"observation", d.observation}, {"noise_draw", d.draw}});
      }
      fs::create_directories(out_dir);
      std::ofstream os(out_dir / "data.json");
      if (!os) throw ConfigError("cannot write " + (out_dir / "data.json").string());
      os << j.dump(2) << '\n';
      std::cout << j.dump(2) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
