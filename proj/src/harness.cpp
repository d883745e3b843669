#include "mlhoqmc/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mlhoqmc/errors.hpp"

namespace mlhoqmc::harness {

using est::EstimatorKind;
using json = nlohmann::json;

// -------------------------------------------------------------- slope fits

double fit_slope(std::span<const double> work, std::span<const double> error, int skip) {
  if (work.size() != error.size()) throw std::invalid_argument("fit_slope: size mismatch");
  if (skip < 0) throw ConfigError("fit_slope: skip must be >= 0");
  const std::size_t first = static_cast<std::size_t>(skip);
  if (work.size() < first + 2) throw ConfigError("fit_slope: need at least two points after skipping");
  const double n = static_cast<double>(work.size() - first);
  double sx = 0, sy = 0;
  for (std::size_t i = first; i < work.size(); ++i) {
    if (!(work[i] > 0) || !(error[i] > 0)) throw ConfigError("fit_slope: work and error must be positive");
    sx += std::log(work[i]);
    sy += std::log(error[i]);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = first; i < work.size(); ++i) {
    const double dx = std::log(work[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(error[i]) - my);
  }
  if (!(sxx > 0)) throw ConfigError("fit_slope: work values are all equal");
  return sxy / sxx;
}

double fit_slope(std::span<const ConvergenceRecord> records, int skip) {
  std::vector<ConvergenceRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.work < b.work; });
  std::vector<double> w, e;
  for (const auto& r : sorted) {
    w.push_back(r.work);
    e.push_back(r.error);
  }
  return fit_slope(w, e, skip);
}

// --------------------------------------------------------- data generation

std::vector<double> DataConfig::default_truth() {
  std::vector<double> y(16);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = j % 2 ? -0.3 : 0.3;
  return y;
}

GeneratedData generate_data(const field::FieldSpec& spec, const fem::FemOptions& fem, double gamma,
                            const DataConfig& cfg) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("data generation needs a finite gamma >= 0");
  if (static_cast<int>(cfg.truth.size()) > spec.s_max())
    throw ConfigError("truth vector is longer than the field expansion");
  GeneratedData out;
  out.gamma = gamma;
  out.observation = fem::ForwardSolver(spec, fem::MeshLevel::make(cfg.truth_level), fem).solve(cfg.truth).observation;
  std::mt19937_64 eng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.draw = normal(eng);
  out.delta = out.observation + std::sqrt(gamma) * out.draw;
  return out;
}

// ------------------------------------------------------------------ studies

void StudyPlan::validate() const {
  if (L_min < 0 || L_max < L_min) throw ConfigError("schedule: need 0 <= L_min <= L");
  if (ref_level() <= L_max) throw ConfigError("reference.level must exceed every studied L");
  if (ref_level() > 10) throw ConfigError("reference.level must be <= 10");
  if (kinds.empty()) throw ConfigError("estimator.kind: at least one kind is required");
  if (mode == StudyMode::Bayes) {
    if (gammas.empty()) throw ConfigError("noise.gamma: at least one value is required");
    for (double g : gammas)
      if (!(g > 0.0) || !std::isfinite(g)) throw ConfigError("noise.gamma values must be positive and finite");
  }
  if (run.threads < 1) throw ConfigError("threads must be >= 1");
  if (run.repetitions < 1) throw ConfigError("mc.repetitions must be >= 1");
  if (run.alpha < 1 || run.alpha > 4) throw ConfigError("qmc.alpha must lie in [1, 4]");
  if (!(run.walsh_constant > 0)) throw ConfigError("qmc.walsh_c must be positive");
  if (!(eps_z >= 0)) throw ConfigError("estimator.eps_z must be >= 0");
  if (data.truth_level < 0 || data.truth_level > 10) throw ConfigError("noise.truth_level must lie in [0, 10]");
}

namespace {

struct Mean {
  double value;
  double error;
};

// MC error: root mean square of the repetition errors.
Mean mc_error(const est::EstimatorRun& run, double reference) {
  double sq = 0;
  for (double v : run.repetitions) sq += (v - reference) * (v - reference);
  return {run.value, std::sqrt(sq / static_cast<double>(run.repetitions.size()))};
}

}  // namespace

StudyResult run_study(const StudyPlan& plan) {
  plan.validate();
  const int ref = plan.ref_level();
  int s_needed = 1 << (std::max(ref, plan.L_max) + 1);
  if (plan.schedule.cap_exponent > 1) s_needed = std::max(s_needed, 1 << (ref + plan.schedule.cap_exponent));
  const auto spec = field::FieldSpec::make(plan.law, std::max(s_needed, 16));
  cbc::VectorStore vectors(plan.vector_dir, plan.build_cbc);

  std::vector<double> gammas = plan.gammas;
  if (plan.mode == StudyMode::Forward) gammas = {std::numeric_limits<double>::infinity()};

  StudyResult result;
  for (double gamma : gammas) {
    GammaResult gr;
    gr.gamma = gamma;
    est::Problem pb;
    pb.field = spec;
    pb.fem = plan.fem;
    pb.eps_z = plan.eps_z;
    if (plan.mode == StudyMode::Forward) {
      pb.noise = est::NoiseModel::prior();
    } else {
      if (plan.delta) {
        gr.delta = *plan.delta;
      } else {
        gr.data = generate_data(spec, plan.fem, gamma, plan.data);
        gr.delta = gr.data->delta;
      }
      pb.noise = est::NoiseModel{gamma, gr.delta, 1};
    }

    const auto ref_sched = est::schedule_qmc(ref, plan.schedule);
    const auto ref_run = est::ml_split(pb, ref_sched, vectors, plan.run);
    gr.reference = ref_run.value;
    gr.reference_work = ref_run.work;

    auto wants = [&](EstimatorKind k) { return std::find(plan.kinds.begin(), plan.kinds.end(), k) != plan.kinds.end(); };
    auto push = [&](EstimatorKind k, int L, const est::EstimatorRun& run) {
      ConvergenceRecord r;
      r.kind = k;
      r.L = L;
      r.work = static_cast<double>(run.work);
      if (est::is_mc(k)) {
        const auto m = mc_error(run, gr.reference);
        r.value = m.value;
        r.error = m.error;
      } else {
        r.value = run.value;
        r.error = std::abs(run.value - gr.reference);
      }
      gr.records.push_back(r);
    };

    for (int L = plan.L_min; L <= plan.L_max; ++L) {
      if (wants(EstimatorKind::SlRatio)) push(EstimatorKind::SlRatio, L, est::sl_ratio(pb, L, vectors, plan.run));
      if (wants(EstimatorKind::MlRatio) || wants(EstimatorKind::MlSplit)) {
        const auto [r, s] = est::ml_qmc_both(pb, est::schedule_qmc(L, plan.schedule), vectors, plan.run);
        if (wants(EstimatorKind::MlRatio)) push(EstimatorKind::MlRatio, L, r);
        if (wants(EstimatorKind::MlSplit)) push(EstimatorKind::MlSplit, L, s);
      }
      if (wants(EstimatorKind::McSl))
        push(EstimatorKind::McSl, L,
             est::mc_estimator(pb, EstimatorKind::McSl, est::schedule_mc(L, plan.schedule), plan.run, plan.mc_sl_samples));
      if (wants(EstimatorKind::MlmcRatio) || wants(EstimatorKind::MlmcSplit)) {
        const auto [r, s] = est::mlmc_both(pb, est::schedule_mc(L, plan.schedule), plan.run);
        if (wants(EstimatorKind::MlmcRatio)) push(EstimatorKind::MlmcRatio, L, r);
        if (wants(EstimatorKind::MlmcSplit)) push(EstimatorKind::MlmcSplit, L, s);
      }
    }

    std::stable_sort(gr.records.begin(), gr.records.end(), [](const auto& a, const auto& b) {
      if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
      return a.work < b.work;
    });
    for (auto k : plan.kinds) {
      std::vector<ConvergenceRecord> mine;
      for (const auto& r : gr.records)
        if (r.kind == k) mine.push_back(r);
      bool positive = std::all_of(mine.begin(), mine.end(), [](const auto& r) { return r.error > 0; });
      if (mine.size() >= 5 && positive) gr.slopes[k] = fit_slope(mine, 3);
    }
    result.per_gamma.push_back(std::move(gr));
  }

  std::set<std::string> files;
  if (std::filesystem::exists(plan.vector_dir))
    for (const auto& e : std::filesystem::directory_iterator(plan.vector_dir))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.insert(e.path().string());
  result.vector_files.assign(files.begin(), files.end());
  return result;
}

// ---------------------------------------------------------------------- I/O

void write_csv(std::ostream& os, std::span<const ConvergenceRecord> records) {
  os << "kind,L,work,error,value\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g\n", std::string(est::to_string(r.kind)).c_str(), r.L, r.work,
                  r.error, r.value);
    os << buf;
  }
}

std::vector<ConvergenceRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "kind,L,work,error,value") throw ConfigError("CSV header must be kind,L,work,error,value");
  std::vector<ConvergenceRecord> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ConfigError("CSV line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      ConvergenceRecord r;
      r.kind = est::parse_kind(f[0]);
      r.L = std::stoi(f[1]);
      r.work = std::stod(f[2]);
      r.error = std::stod(f[3]);
      r.value = std::stod(f[4]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw ConfigError("CSV line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

namespace {

std::string csv_name(const GammaResult& g) {
  if (std::isinf(g.gamma)) return "study_forward.csv";
  char buf[64];
  std::snprintf(buf, sizeof buf, "study_gamma_%g.csv", g.gamma);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::vector<std::filesystem::path> write_study(const std::filesystem::path& out_dir, const StudyPlan& plan,
                                               const StudyResult& result, const std::string& config_echo,
                                               double wall_seconds) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  json man;
  if (!config_echo.empty()) {
    auto parsed = json::parse(config_echo, nullptr, false);
    man["config"] = parsed.is_discarded() ? json(config_echo) : parsed;
  }
  man["mode"] = plan.mode == StudyMode::Forward ? "forward" : "bayes";
  man["law"] = plan.law == field::Law::Affine ? "affine" : "logaffine";
  man["L_min"] = plan.L_min;
  man["L_max"] = plan.L_max;
  man["reference_level"] = plan.ref_level();
  man["mc_seed"] = plan.run.seed;
  man["mc_repetitions"] = plan.run.repetitions;
  man["data_seed"] = plan.data.seed;
  man["truth_level"] = plan.data.truth_level;
  man["truth"] = plan.data.truth;
  for (const auto& g : result.per_gamma) {
    const auto path = out_dir / csv_name(g);
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path.string());
    write_csv(os, g.records);
    paths.push_back(path);
    json e;
    e["csv"] = path.filename().string();
    e["gamma"] = number_or_null(g.gamma);
    e["delta"] = g.delta;
    if (g.data) {
      e["observation"] = g.data->observation;
      e["noise_draw"] = g.data->draw;
    }
    e["reference"] = g.reference;
    e["reference_work"] = g.reference_work;
    for (const auto& [k, s] : g.slopes) e["slopes"][std::string(est::to_string(k))] = s;
    man["runs"].push_back(e);
  }
  for (const auto& f : result.vector_files) man["vector_files"][std::filesystem::path(f).filename().string()] = file_digest(f);
  man["wall_seconds"] = wall_seconds;
  std::ofstream ms(out_dir / "manifest.json");
  ms << man.dump(2) << '\n';
  return paths;
}

// ------------------------------------------------------------------- config

namespace {

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object() && (prefix.empty() || !j.empty())) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (out.count(prefix)) throw ConfigError("config key '" + prefix + "' given twice");
  out[prefix] = j;
}

template <class T>
T get_as(const std::map<std::string, json>& m, const std::string& key) {
  try {
    return m.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::vector<double> number_list(const json& j, const std::string& key) {
  std::vector<double> out;
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError("config key '" + key + "' must be a number or a list of numbers");
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number or a list of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

StudyPlan plan_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  std::map<std::string, json> kv;
  flatten(doc, "", kv);

  StudyPlan p;
  bool generate = true;
  std::optional<double> delta;
  for (const auto& [key, val] : kv) {
    if (key == "study.mode") {
      const auto m = get_as<std::string>(kv, key);
      if (m == "forward") p.mode = StudyMode::Forward;
      else if (m == "bayes") p.mode = StudyMode::Bayes;
      else throw ConfigError("study.mode must be forward or bayes");
    } else if (key == "field.law") {
      p.law = field::parse_law(get_as<std::string>(kv, key));
    } else if (key == "noise.gamma") {
      p.gammas = number_list(val, key);
    } else if (key == "noise.delta") {
      delta = get_as<double>(kv, key);
    } else if (key == "noise.generate") {
      generate = get_as<bool>(kv, key);
    } else if (key == "noise.seed") {
      p.data.seed = get_as<std::uint64_t>(kv, key);
    } else if (key == "noise.truth_level") {
      p.data.truth_level = get_as<int>(kv, key);
    } else if (key == "schedule.L") {
      p.L_max = get_as<int>(kv, key);
    } else if (key == "schedule.L_min") {
      p.L_min = get_as<int>(kv, key);
    } else if (key == "schedule.p0") {
      p.schedule.p0 = get_as<double>(kv, key);
    } else if (key == "schedule.pt") {
      p.schedule.pt = get_as<double>(kv, key);
    } else if (key == "schedule.cap_exponent") {
      p.schedule.cap_exponent = get_as<int>(kv, key);
    } else if (key == "schedule.pin_table") {
      p.schedule.pin_table = get_as<bool>(kv, key);
    } else if (key == "estimator.kind") {
      p.kinds.clear();
      if (val.is_string()) {
        p.kinds.push_back(est::parse_kind(val.get<std::string>()));
      } else if (val.is_array()) {
        for (const auto& k : val) {
          if (!k.is_string()) throw ConfigError("estimator.kind entries must be strings");
          p.kinds.push_back(est::parse_kind(k.get<std::string>()));
        }
      } else {
        throw ConfigError("estimator.kind must be a string or a list of strings");
      }
    } else if (key == "estimator.eps_z") {
      p.eps_z = get_as<double>(kv, key);
    } else if (key == "reference.level") {
      p.reference_level = get_as<int>(kv, key);
    } else if (key == "mc.repetitions") {
      p.run.repetitions = get_as<int>(kv, key);
    } else if (key == "mc.seed") {
      p.run.seed = get_as<std::uint64_t>(kv, key);
    } else if (key == "mc.sl_samples") {
      p.mc_sl_samples = get_as<std::uint64_t>(kv, key);
    } else if (key == "qmc.alpha") {
      p.run.alpha = get_as<int>(kv, key);
    } else if (key == "qmc.walsh_c") {
      p.run.walsh_constant = get_as<double>(kv, key);
    } else if (key == "cbc.dir") {
      p.vector_dir = get_as<std::string>(kv, key);
    } else if (key == "cbc.build") {
      p.build_cbc = get_as<bool>(kv, key);
    } else if (key == "fem.tol") {
      p.fem.tol = get_as<double>(kv, key);
    } else if (key == "fem.quad_order") {
      p.fem.quad_order = get_as<int>(kv, key);
    } else if (key == "fem.solver") {
      const auto s = get_as<std::string>(kv, key);
      if (s == "pcg") p.fem.solver = fem::SolverKind::Pcg;
      else if (s == "cholesky") p.fem.solver = fem::SolverKind::BandCholesky;
      else throw ConfigError("fem.solver must be pcg or cholesky");
    } else if (key == "threads") {
      p.run.threads = get_as<int>(kv, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (kv.count("noise.generate") && generate && delta) throw ConfigError("noise.delta conflicts with noise.generate=true");
  if (!generate && !delta && p.mode == StudyMode::Bayes) throw ConfigError("noise.generate=false needs noise.delta");
  if (delta && !(kv.count("noise.generate") && generate)) p.delta = delta;
  p.validate();
  return p;
}

}  // namespace mlhoqmc::harness
