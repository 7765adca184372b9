#pragma once

// Experiment driver behind the pae-sdre command line tool. Every command
// reads an ExperimentConfig, works inside cfg.out and writes CSV/JSON
// artifacts. Outputs depend only on the config (minus out/workers), never on
// the worker count or wall-clock time.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pae/autoencoder.hpp"
#include "pae/common.hpp"
#include "pae/json_io.hpp"
#include "pae/lpv_expansion.hpp"
#include "pae/matrix_equations.hpp"
#include "pae/sdc_model.hpp"
#include "pae/sdre_control.hpp"
#include "pae/simulation.hpp"

namespace pae {

struct SweepCell {
  double gamma = 1.0;
  double ts = 0.5;
  int p = 0;
  Index q = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  BurgersConfig benchmark;
  TrainingConfig training;

  double dt = 0.5 / 400.0;
  double t_train = 0.5;
  double t_validation = 1.0;
  /// Blowup threshold relative to the largest training-window M-norm.
  double blowup_factor = 1e6;

  std::vector<Index> report_r{2, 3, 4, 5, 6, 7, 8};
  std::optional<int> report_epochs;

  std::vector<Index> grid_r{2, 3, 4, 5, 6};
  std::vector<Index> grid_q{1, 2, 3, 4};
  int grid_epochs = 800;

  std::vector<double> gammas{100.0, 10.0, 1.0, 0.1, 0.001};
  std::vector<double> ts_list{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0};
  std::vector<int> p_list{0, 1, 2};
  std::vector<Index> q_list{1, 3};
  double t_end = 7.5;
  std::vector<SweepCell> marks;

  double compare_gamma = 1.0;
  Index compare_stride = 4;

  /// 0 picks std::thread::hardware_concurrency().
  unsigned workers = 0;
  std::string out = "out";
};

// --- config <-> JSON ----------------------------------------------------------------

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void read_if(const Json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline Json interval_to_json(const Interval& iv) { return Json::array({iv.lo, iv.hi}); }

inline Interval interval_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("interval: expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Json cell_to_json(const SweepCell& c) {
  return Json{{"gamma", c.gamma}, {"ts", c.ts}, {"p", c.p}, {"q", c.q}};
}

}  // namespace detail

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  const BurgersConfig& b = c.benchmark;
  j["benchmark"] = Json{{"n_grid", b.n_grid},
                        {"viscosity", b.viscosity},
                        {"growth", b.growth ? Json(*b.growth) : Json(nullptr)},
                        {"advection", b.advection},
                        {"reaction", b.reaction},
                        {"input_gain", b.input_gain},
                        {"actuators", Json::array({detail::interval_to_json(b.actuators[0]),
                                                   detail::interval_to_json(b.actuators[1])})},
                        {"sensors", Json::array({detail::interval_to_json(b.sensors[0]),
                                                 detail::interval_to_json(b.sensors[1])})}};
  const TrainingConfig& t = c.training;
  j["training"] = Json{{"r", t.r},
                       {"q", t.q},
                       {"sharpness", t.sharpness},
                       {"lambda", t.lambda},
                       {"learning_rate", t.learning_rate},
                       {"epochs", t.epochs},
                       {"batch", t.batch},
                       {"warmup_fraction", t.warmup_fraction}};
  j["simulation"] = Json{{"dt", c.dt},
                         {"t_train", c.t_train},
                         {"t_validation", c.t_validation},
                         {"blowup_factor", c.blowup_factor}};
  j["report"] = Json{{"r_list", c.report_r},
                     {"epochs", c.report_epochs ? Json(*c.report_epochs) : Json(nullptr)}};
  j["gridsearch"] = Json{{"r_list", c.grid_r}, {"q_list", c.grid_q}, {"epochs", c.grid_epochs}};
  Json marks = Json::array();
  for (const SweepCell& m : c.marks) marks.push_back(detail::cell_to_json(m));
  j["sweep"] = Json{{"gamma_list", c.gammas}, {"ts_list", c.ts_list}, {"p_list", c.p_list},
                    {"q_list", c.q_list},     {"t_end", c.t_end},     {"marks", marks}};
  j["compare"] = Json{{"gamma", c.compare_gamma}, {"stride", c.compare_stride}};
  j["workers"] = c.workers;
  j["out"] = c.out;
  return j;
}

inline void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.training.r < 1) fail("training.r must be >= 1");
  if (c.training.q < 1) fail("training.q must be >= 1");
  if (c.training.epochs < 0) fail("training.epochs must be >= 0");
  if (c.training.batch < 1) fail("training.batch must be >= 1");
  if (!(c.dt > 0.0)) fail("simulation.dt must be positive");
  if (!(c.t_train > 0.0) || c.t_validation < c.t_train) fail("need 0 < t_train <= t_validation");
  if (!(c.blowup_factor > 1.0)) fail("simulation.blowup_factor must exceed 1");
  if (c.report_r.empty() || c.grid_r.empty() || c.grid_q.empty()) fail("report/gridsearch lists must be nonempty");
  if (c.gammas.empty() || c.ts_list.empty() || c.p_list.empty() || c.q_list.empty())
    fail("sweep lists must be nonempty");
  for (Index r : c.report_r) if (r < 1) fail("report.r_list entries must be >= 1");
  for (Index r : c.grid_r) if (r < 1) fail("gridsearch.r_list entries must be >= 1");
  for (Index q : c.grid_q) if (q < 1) fail("gridsearch.q_list entries must be >= 1");
  for (Index q : c.q_list) if (q < 1) fail("sweep.q_list entries must be >= 1");
  for (double g : c.gammas) if (!(g > 0.0)) fail("sweep.gamma_list entries must be positive");
  for (double ts : c.ts_list) if (!(ts > 0.0) || !(ts < c.t_end)) fail("sweep.ts_list entries must lie in (0, t_end)");
  for (int p : c.p_list) if (p < 0 || p > 2) fail("sweep.p_list entries must be 0, 1 or 2");
  if (c.grid_epochs < 0 || (c.report_epochs && *c.report_epochs < 0)) fail("epoch counts must be >= 0");
  if (c.compare_stride < 1) fail("compare.stride must be >= 1");
  if (c.out.empty()) fail("out must be a nonempty path");
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    detail::check_keys(j, {"seed", "benchmark", "training", "simulation", "report", "gridsearch", "sweep", "compare",
                           "workers", "out"},
                       "config");
    detail::read_if(j, "seed", c.seed);
    if (j.contains("benchmark")) {
      const Json& b = j["benchmark"];
      detail::check_keys(b, {"n_grid", "viscosity", "growth", "advection", "reaction", "input_gain", "actuators",
                             "sensors"},
                         "benchmark");
      detail::read_if(b, "n_grid", c.benchmark.n_grid);
      detail::read_if(b, "viscosity", c.benchmark.viscosity);
      if (b.contains("growth"))
        c.benchmark.growth = b["growth"].is_null() ? std::nullopt : std::optional<double>(b["growth"].get<double>());
      detail::read_if(b, "advection", c.benchmark.advection);
      detail::read_if(b, "reaction", c.benchmark.reaction);
      detail::read_if(b, "input_gain", c.benchmark.input_gain);
      for (const char* key : {"actuators", "sensors"}) {
        if (!b.contains(key)) continue;
        const Json& a = b[key];
        if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("benchmark.") + key + ": expected two intervals");
        auto& dst = std::string(key) == "actuators" ? c.benchmark.actuators : c.benchmark.sensors;
        dst = {detail::interval_from_json(a[0]), detail::interval_from_json(a[1])};
      }
    }
    if (j.contains("training")) {
      const Json& t = j["training"];
      detail::check_keys(t, {"r", "q", "sharpness", "lambda", "learning_rate", "epochs", "batch", "warmup_fraction"},
                         "training");
      detail::read_if(t, "r", c.training.r);
      detail::read_if(t, "q", c.training.q);
      detail::read_if(t, "sharpness", c.training.sharpness);
      detail::read_if(t, "lambda", c.training.lambda);
      detail::read_if(t, "learning_rate", c.training.learning_rate);
      detail::read_if(t, "epochs", c.training.epochs);
      detail::read_if(t, "batch", c.training.batch);
      detail::read_if(t, "warmup_fraction", c.training.warmup_fraction);
    }
    if (j.contains("simulation")) {
      const Json& s = j["simulation"];
      detail::check_keys(s, {"dt", "t_train", "t_validation", "blowup_factor"}, "simulation");
      detail::read_if(s, "dt", c.dt);
      detail::read_if(s, "t_train", c.t_train);
      detail::read_if(s, "t_validation", c.t_validation);
      detail::read_if(s, "blowup_factor", c.blowup_factor);
    }
    if (j.contains("report")) {
      const Json& r = j["report"];
      detail::check_keys(r, {"r_list", "epochs"}, "report");
      detail::read_if(r, "r_list", c.report_r);
      if (r.contains("epochs"))
        c.report_epochs = r["epochs"].is_null() ? std::nullopt : std::optional<int>(r["epochs"].get<int>());
    }
    if (j.contains("gridsearch")) {
      const Json& g = j["gridsearch"];
      detail::check_keys(g, {"r_list", "q_list", "epochs"}, "gridsearch");
      detail::read_if(g, "r_list", c.grid_r);
      detail::read_if(g, "q_list", c.grid_q);
      detail::read_if(g, "epochs", c.grid_epochs);
    }
    if (j.contains("sweep")) {
      const Json& s = j["sweep"];
      detail::check_keys(s, {"gamma_list", "ts_list", "p_list", "q_list", "t_end", "marks"}, "sweep");
      detail::read_if(s, "gamma_list", c.gammas);
      detail::read_if(s, "ts_list", c.ts_list);
      detail::read_if(s, "p_list", c.p_list);
      detail::read_if(s, "q_list", c.q_list);
      detail::read_if(s, "t_end", c.t_end);
      if (s.contains("marks")) {
        c.marks.clear();
        for (const Json& m : s["marks"]) {
          detail::check_keys(m, {"gamma", "ts", "p", "q"}, "sweep.marks");
          c.marks.push_back({m.at("gamma").get<double>(), m.at("ts").get<double>(), m.at("p").get<int>(),
                             m.at("q").get<Index>()});
        }
      }
    }
    if (j.contains("compare")) {
      const Json& s = j["compare"];
      detail::check_keys(s, {"gamma", "stride"}, "compare");
      detail::read_if(s, "gamma", c.compare_gamma);
      detail::read_if(s, "stride", c.compare_stride);
    }
    detail::read_if(j, "workers", c.workers);
    detail::read_if(j, "out", c.out);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of everything that can change outputs.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("out");
  j.erase("workers");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

// --- CSV ----------------------------------------------------------------------------

/// Shortest representation that parses back to the same double.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const ExperimentConfig& cfg, const std::string& what) {
    out_ << "# config=" << config_hash(cfg) << " " << what << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void save(const std::string& path) const { write_text_file(path, out_.str()); }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

struct CsvTable {
  std::string comment;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && !line.empty() && line[0] == '#') {
      t.comment = line;
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError(where + ": bad number '" + s + "'");
  return x;
}

// --- shared helpers -----------------------------------------------------------------

namespace detail {

inline unsigned worker_count(const ExperimentConfig& c) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return c.workers == 0 ? hw : c.workers;
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads join.
inline void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::string path_in(const ExperimentConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out) / name).string();
}

inline void ensure_out_dir(const ExperimentConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) throw IoError("cannot create output directory " + c.out + ": " + ec.message());
}

inline std::string model_file(Index q, Index r) {
  return "model_q" + std::to_string(q) + "_r" + std::to_string(r) + ".json";
}

inline std::string pod_file(Index r) { return "pod_r" + std::to_string(r) + ".json"; }

template <class T, class Parse>
T load_artifact(const std::string& path, Parse&& parse) {
  const Json j = read_json_file(path);
  try {
    return parse(j);
  } catch (const std::invalid_argument& e) {
    throw IoError("malformed " + path + ": " + e.what());
  }
}

inline std::vector<Index> unique_sorted(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::string cell_label(const SweepCell& c) {
  return "q" + std::to_string(c.q) + "_p" + std::to_string(c.p) + "_g" + fmt(c.gamma) + "_ts" + fmt(c.ts);
}

}  // namespace detail

// --- snapshot files -----------------------------------------------------------------

struct SnapshotSet {
  Matrix states;  // n x N
  double dt = 0.0;
  double t0 = 0.0;
  Json meta;
};

inline void write_snapshots(const ExperimentConfig& cfg, const std::string& stem, const Trajectory& tr,
                            const std::string& description) {
  CsvWriter w(cfg, description + " (rows: state components, columns: time samples)");
  for (Index i = 0; i < tr.states.rows(); ++i) {
    std::vector<std::string> cells;
    cells.reserve(static_cast<std::size_t>(tr.states.cols()));
    for (Index k = 0; k < tr.states.cols(); ++k) cells.push_back(fmt(tr.states(i, k)));
    w.row(cells);
  }
  w.save(detail::path_in(cfg, stem + ".csv"));
  double max_norm = 0.0;
  const Matrix mass = make_burgers_benchmark(cfg.benchmark).mass;
  for (Index k = 0; k < tr.states.cols(); ++k) max_norm = std::max(max_norm, m_norm(mass, tr.states.col(k)));
  Json meta{{"config_hash", config_hash(cfg)},
            {"n", tr.states.rows()},
            {"N", tr.states.cols()},
            {"dt", cfg.dt},
            {"t0", 0.0},
            {"t_last", tr.times(tr.times.size() - 1)},
            {"max_m_norm", max_norm},
            {"blowup", tr.blowup},
            {"blowup_time", tr.blowup_time ? Json(*tr.blowup_time) : Json(nullptr)},
            {"description", description}};
  write_json_file(detail::path_in(cfg, stem + ".json"), meta);
}

inline SnapshotSet read_snapshots(const ExperimentConfig& cfg, const std::string& stem) {
  const std::string csv = detail::path_in(cfg, stem + ".csv");
  SnapshotSet s;
  s.meta = read_json_file(detail::path_in(cfg, stem + ".json"));
  const CsvTable t = read_csv(csv);
  if (t.rows.empty()) throw IoError(csv + ": no data rows");
  const std::size_t cols = t.rows.front().size();
  s.states.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != cols) throw IoError(csv + ": ragged row " + std::to_string(i + 1));
    for (std::size_t k = 0; k < cols; ++k)
      s.states(static_cast<Index>(i), static_cast<Index>(k)) = parse_double(t.rows[i][k], csv);
  }
  try {
    s.dt = s.meta.at("dt").get<double>();
    s.t0 = s.meta.at("t0").get<double>();
  } catch (const Json::exception& e) {
    throw IoError(stem + ".json: " + e.what());
  }
  return s;
}

// --- commands -----------------------------------------------------------------------

struct GenerateResult {
  Trajectory training;
  Trajectory validation;
};

inline GenerateResult cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  SimulationOptions opt;
  opt.dt = cfg.dt;
  const Index m = sys.m();
  const InputSignal u = [m](double t) { return test_input(t, m); };
  GenerateResult res;
  res.training = simulate_open_loop(sys, u, cfg.t_train, opt);
  if (res.training.blowup)
    throw NumericalError("generate: training trajectory blew up at t = " +
                         fmt(res.training.blowup_time.value_or(cfg.t_train)));
  double max_norm = 0.0;
  for (Index k = 0; k < res.training.states.cols(); ++k)
    max_norm = std::max(max_norm, m_norm(sys, res.training.states.col(k)));
  opt.blowup_threshold = cfg.blowup_factor * std::max(max_norm, 1e-300);
  res.validation = simulate_open_loop(sys, u, cfg.t_validation, opt);
  write_snapshots(cfg, "snapshots", res.training, "training snapshots under the test input");
  write_snapshots(cfg, "validation", res.validation, "validation trajectory under the test input");
  log << "generate: " << res.training.states.cols() << " training snapshots, " << res.validation.states.cols()
      << " validation samples" << (res.validation.blowup ? " (validation run blew up)" : "") << "\n";
  return res;
}

struct ReportCell {
  std::string scheme;
  Index r = 0;
  std::optional<double> error;  // average M-norm error
  std::string failure;
};

struct TrainResult {
  std::vector<ReportCell> report;
  std::map<Index, PolytopicAutoencoder> models;  // keyed by q, at training.r
};

namespace detail {

inline TrainingConfig training_for(const ExperimentConfig& cfg, Index q, Index r, int epochs) {
  TrainingConfig t = cfg.training;
  t.q = q;
  t.r = r;
  t.epochs = epochs;
  t.seed = cfg.seed;
  return t;
}

}  // namespace detail

inline TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const SnapshotSet snaps = read_snapshots(cfg, "snapshots");
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  require_dims(snaps.states.rows() == sys.n(), "train: snapshot dimension does not match the benchmark");
  const Index r0 = cfg.training.r;
  const Index q0 = cfg.training.q;
  const int report_epochs = cfg.report_epochs.value_or(cfg.training.epochs);

  // Full models for the sweep, then report models (q = 1 and q = q0 per r).
  struct Job {
    Index q, r;
    int epochs;
  };
  std::vector<Job> jobs;
  const std::vector<Index> qs = detail::unique_sorted([&] {
    auto v = cfg.q_list;
    v.push_back(q0);
    return v;
  }());
  for (Index q : qs) jobs.push_back({q, r0, cfg.training.epochs});
  auto job_index = [&](Index q, Index r, int epochs) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      if (jobs[i].q == q && jobs[i].r == r && jobs[i].epochs == epochs) return i;
    return std::nullopt;
  };
  for (Index r : cfg.report_r)
    for (Index q : detail::unique_sorted({1, q0}))
      if (!job_index(q, r, report_epochs)) jobs.push_back({q, r, report_epochs});
  std::vector<std::optional<PolytopicAutoencoder>> trained(jobs.size());
  std::vector<std::string> failures(jobs.size());
  detail::parallel_for(jobs.size(), detail::worker_count(cfg), [&](std::size_t i) {
    try {
      trained[i] = train(snaps.states, sys.mass, detail::training_for(cfg, jobs[i].q, jobs[i].r, jobs[i].epochs)).model;
    } catch (const TrainingDivergence& e) {
      failures[i] = e.what();
    }
  });

  TrainResult res;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (!trained[i]) throw NumericalError("train: PAE(q=" + std::to_string(qs[i]) + ") " + failures[i]);
    res.models.emplace(qs[i], *trained[i]);
    write_json_file(detail::path_in(cfg, detail::model_file(qs[i], r0)), model_to_json(*trained[i]));
  }
  write_json_file(detail::path_in(cfg, detail::pod_file(r0)), pod_to_json(pod_basis(snaps.states, r0, sys.mass)));

  auto find = [&](Index q, Index r) -> std::pair<const PolytopicAutoencoder*, std::string> {
    const std::size_t i = *job_index(q, r, report_epochs);
    return {trained[i] ? &*trained[i] : nullptr, failures[i]};
  };

  const std::string pq = "PAE " + std::to_string(q0);
  for (Index r : cfg.report_r) {
    ReportCell pod{"POD", r, std::nullopt, ""};
    if (r <= std::min(snaps.states.rows(), snaps.states.cols()))
      pod.error = reconstruction_error_series(pod_basis(snaps.states, r, sys.mass), snaps.states, sys.mass).average;
    else
      pod.failure = "r exceeds snapshot rank bound";
    res.report.push_back(pod);
    for (Index q : detail::unique_sorted({1, q0})) {
      auto [model, why] = find(q, r);
      ReportCell cell{"PAE " + std::to_string(q), r, std::nullopt, why};
      if (model) cell.error = reconstruction_error_series(*model, snaps.states, sys.mass).average;
      res.report.push_back(cell);
    }
    auto [model, why] = find(q0, r);
    ReportCell sur{pq + " (p=1)", r, std::nullopt, why};
    if (model) sur.error = first_order_error_series(*model, snaps.states, sys.mass).average;
    res.report.push_back(sur);
  }

  CsvWriter w(cfg, "train: average M-norm reconstruction error x1e3 on the training snapshots (blank = failed)");
  std::vector<std::string> header{"scheme"};
  for (Index r : cfg.report_r) header.push_back("r=" + std::to_string(r));
  w.row(header);
  std::vector<std::string> labels{"POD", "PAE 1"};
  if (q0 != 1) labels.push_back(pq);
  labels.push_back(pq + " (p=1)");
  for (const std::string& label : labels) {
    std::vector<std::string> row{label + " r"};
    for (Index r : cfg.report_r)
      for (const ReportCell& c : res.report)
        if (c.scheme == label && c.r == r) row.push_back(c.error ? fmt(*c.error * 1e3) : "");
    w.row(row);
  }
  w.save(detail::path_in(cfg, "reconstruction.csv"));
  for (const ReportCell& c : res.report)
    if (!c.failure.empty()) log << "train: " << c.scheme << " r=" << c.r << " failed: " << c.failure << "\n";
  log << "train: wrote " << qs.size() << " model(s) at r = " << r0 << " and reconstruction.csv\n";
  return res;
}

struct GridResult {
  /// errors[iq][ir], nullopt for failed cells.
  std::vector<std::vector<std::optional<double>>> errors;
  Index best_q = 0;
  Index best_r = 0;
};

inline GridResult cmd_gridsearch(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const SnapshotSet snaps = read_snapshots(cfg, "snapshots");
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  const std::size_t nq = cfg.grid_q.size(), nr = cfg.grid_r.size();
  GridResult res;
  res.errors.assign(nq, std::vector<std::optional<double>>(nr));
  std::vector<std::string> failures(nq * nr);
  detail::parallel_for(nq * nr, detail::worker_count(cfg), [&](std::size_t i) {
    const Index q = cfg.grid_q[i / nr], r = cfg.grid_r[i % nr];
    try {
      const auto model = train(snaps.states, sys.mass, detail::training_for(cfg, q, r, cfg.grid_epochs)).model;
      res.errors[i / nr][i % nr] = reconstruction_error_series(model, snaps.states, sys.mass).average;
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  CsvWriter w(cfg, "gridsearch: average M-norm reconstruction error x1e3, rows q, columns r (blank = failed)");
  std::vector<std::string> header{"q"};
  for (Index r : cfg.grid_r) header.push_back("r=" + std::to_string(r));
  w.row(header);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t iq = 0; iq < nq; ++iq) {
    std::vector<std::string> row{std::to_string(cfg.grid_q[iq])};
    for (std::size_t ir = 0; ir < nr; ++ir) {
      const auto& e = res.errors[iq][ir];
      row.push_back(e ? fmt(*e * 1e3) : "");
      if (e && *e < best) {
        best = *e;
        res.best_q = cfg.grid_q[iq];
        res.best_r = cfg.grid_r[ir];
      }
      if (!failures[iq * nr + ir].empty())
        log << "gridsearch: q=" << cfg.grid_q[iq] << " r=" << cfg.grid_r[ir] << " failed: " << failures[iq * nr + ir]
            << "\n";
    }
    w.row(row);
  }
  w.save(detail::path_in(cfg, "gridsearch.csv"));
  write_json_file(detail::path_in(cfg, "gridsearch.json"),
                  Json{{"config_hash", config_hash(cfg)},
                       {"epochs", cfg.grid_epochs},
                       {"best_q", res.best_q},
                       {"best_r", res.best_r},
                       {"best_error", std::isfinite(best) ? Json(best) : Json(nullptr)}});
  if (res.best_r > 0) log << "gridsearch: best cell q=" << res.best_q << " r=" << res.best_r << " error x1e3 = " << fmt(best * 1e3) << "\n";
  return res;
}

struct ControllerEntry {
  Index q = 1;
  double gamma = 1.0;
  int p = 0;
  std::optional<FeedbackExpansion> expansion;
  std::string failure;
};

namespace detail {

inline std::vector<ControllerEntry> synthesize_all(const ExperimentConfig& cfg, const QuadraticSdcSystem& sys,
                                                   const std::map<Index, PolytopicAutoencoder>& models,
                                                   const std::vector<double>& gammas, const std::vector<int>& ps) {
  std::map<Index, LpvCoefficients> lpv;
  for (const auto& [q, m] : models) lpv.emplace(q, lpv_coefficients_first_order(sys, m));
  std::vector<ControllerEntry> entries;
  for (const auto& [q, m] : models)
    for (double g : gammas)
      for (int p : ps) entries.push_back({q, g, p, std::nullopt, ""});
  parallel_for(entries.size(), worker_count(cfg), [&](std::size_t i) {
    ControllerEntry& e = entries[i];
    try {
      e.expansion = compute_expansion_coefficients(lpv.at(e.q), sys.b, sys.c, e.gamma, e.p);
    } catch (const NumericalError& ex) {
      e.failure = ex.what();
    }
  });
  return entries;
}

inline std::map<Index, PolytopicAutoencoder> load_models(const ExperimentConfig& cfg, const std::vector<Index>& qs) {
  std::map<Index, PolytopicAutoencoder> models;
  for (Index q : unique_sorted(qs))
    models.emplace(q, load_artifact<PolytopicAutoencoder>(path_in(cfg, model_file(q, cfg.training.r)),
                                                          [](const Json& j) { return model_from_json(j); }));
  return models;
}

}  // namespace detail

inline Json controllers_to_json(const ExperimentConfig& cfg, const std::vector<ControllerEntry>& entries) {
  Json list = Json::array();
  for (const ControllerEntry& e : entries) {
    Json j{{"q", e.q}, {"gamma", e.gamma}, {"p", e.p}, {"equations", equation_count(cfg.training.r, e.p)}};
    if (e.expansion) {
      j["status"] = "ok";
      j["expansion"] = expansion_to_json(*e.expansion);
    } else {
      j["status"] = "failed";
      j["error"] = e.failure;
    }
    list.push_back(j);
  }
  return Json{{"config_hash", config_hash(cfg)}, {"r", cfg.training.r}, {"controllers", list}};
}

inline std::vector<ControllerEntry> controllers_from_json(const Json& j) {
  std::vector<ControllerEntry> out;
  for (const Json& e : j.at("controllers")) {
    ControllerEntry c{e.at("q").get<Index>(), e.at("gamma").get<double>(), e.at("p").get<int>(), std::nullopt, ""};
    if (e.at("status").get<std::string>() == "ok")
      c.expansion = expansion_from_json(e.at("expansion"));
    else
      c.failure = e.value("error", std::string("synthesis failed"));
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<ControllerEntry> cmd_synthesize(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  const auto models = detail::load_models(cfg, cfg.q_list);
  auto entries = detail::synthesize_all(cfg, sys, models, cfg.gammas, cfg.p_list);
  for (const ControllerEntry& e : entries) {
    log << "synthesize: q=" << e.q << " gamma=" << fmt(e.gamma) << " p=" << e.p << ": "
        << equation_count(cfg.training.r, e.p) << " equation(s)";
    if (e.expansion)
      log << " solved\n";
    else
      log << " FAILED: " << e.failure << "\n";
  }
  write_json_file(detail::path_in(cfg, "controllers.json"), controllers_to_json(cfg, entries));
  return entries;
}

namespace detail {

inline std::vector<ControllerEntry> load_controllers(const ExperimentConfig& cfg) {
  return load_artifact<std::vector<ControllerEntry>>(path_in(cfg, "controllers.json"), [](const Json& j) {
    try {
      return controllers_from_json(j);
    } catch (const Json::exception& e) {
      throw ConfigError(e.what());
    }
  });
}

inline const ControllerEntry* find_controller(const std::vector<ControllerEntry>& all, Index q, double gamma, int p) {
  for (const ControllerEntry& e : all)
    if (e.q == q && e.gamma == gamma && e.p == p) return &e;
  return nullptr;
}

inline double blowup_threshold(const ExperimentConfig& cfg) {
  const Json meta = read_json_file(path_in(cfg, "snapshots.json"));
  try {
    return cfg.blowup_factor * std::max(meta.at("max_m_norm").get<double>(), 1e-300);
  } catch (const Json::exception& e) {
    throw IoError("snapshots.json: " + std::string(e.what()));
  }
}

}  // namespace detail

struct CompareRow {
  double t = 0.0;
  bool ok = false;
  double u_norm = 0.0;
  /// Per q in the order of CompareResult::qs: LPV-exact error, then p = 0, 1, 2.
  std::vector<std::optional<double>> errors;
};

struct CompareResult {
  std::vector<Index> qs;
  std::vector<CompareRow> rows;
  /// Time averages over [0, t_train] of every error column (same layout).
  std::vector<std::optional<double>> train_window_average;
};

inline CompareResult cmd_sdre_compare(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  const SnapshotSet val = read_snapshots(cfg, "validation");
  const auto models = detail::load_models(cfg, cfg.q_list);
  const double gamma = cfg.compare_gamma;
  const std::vector<int> ps{0, 1, 2};

  // Reuse synthesized controllers when they exist for this gamma.
  std::vector<ControllerEntry> stored;
  if (std::filesystem::exists(detail::path_in(cfg, "controllers.json"))) stored = detail::load_controllers(cfg);
  std::vector<ControllerEntry> fresh;
  bool missing = false;
  for (const auto& [q, m] : models)
    for (int p : ps)
      if (!detail::find_controller(stored, q, gamma, p)) missing = true;
  if (missing) fresh = detail::synthesize_all(cfg, sys, models, {gamma}, ps);
  auto controller = [&](Index q, int p) -> const ControllerEntry* {
    const ControllerEntry* e = detail::find_controller(stored, q, gamma, p);
    return e ? e : detail::find_controller(fresh, q, gamma, p);
  };

  CompareResult res;
  for (const auto& [q, m] : models) res.qs.push_back(q);
  std::vector<Index> samples;
  for (Index k = 0; k < val.states.cols(); k += cfg.compare_stride) samples.push_back(k);
  res.rows.resize(samples.size());
  const std::size_t per_q = 1 + ps.size();
  detail::parallel_for(samples.size(), detail::worker_count(cfg), [&](std::size_t i) {
    const Index k = samples[i];
    const Vector v = val.states.col(k);
    CompareRow& row = res.rows[i];
    row.t = val.t0 + static_cast<double>(k) * val.dt;
    row.errors.assign(res.qs.size() * per_q, std::nullopt);
    Vector u_true;
    try {
      u_true = true_sdre_feedback(sys, v, gamma);
    } catch (const NumericalError&) {
      return;
    }
    row.ok = true;
    row.u_norm = u_true.norm();
    for (std::size_t iq = 0; iq < res.qs.size(); ++iq) {
      const PolytopicAutoencoder& model = models.at(res.qs[iq]);
      try {
        row.errors[iq * per_q] = (exact_sdre_feedback(sys, model, v, gamma) - u_true).norm();
      } catch (const NumericalError&) {
      }
      const Vector rho = encode(model, v).rho;
      for (std::size_t ip = 0; ip < ps.size(); ++ip) {
        const ControllerEntry* c = controller(res.qs[iq], ps[ip]);
        if (c && c->expansion) row.errors[iq * per_q + 1 + ip] = (expanded_feedback(*c->expansion, rho, v) - u_true).norm();
      }
    }
  });

  res.train_window_average.assign(res.qs.size() * per_q, std::nullopt);
  for (std::size_t col = 0; col < res.train_window_average.size(); ++col) {
    double sum = 0.0;
    std::size_t count = 0;
    bool complete = true;
    for (const CompareRow& row : res.rows) {
      if (!row.ok || row.t > cfg.t_train + 1e-12) continue;
      if (!row.errors[col]) {
        complete = false;
        continue;
      }
      sum += *row.errors[col];
      ++count;
    }
    if (count > 0 && complete) res.train_window_average[col] = sum / static_cast<double>(count);
  }

  CsvWriter w(cfg, "sdre-compare: ||u_P - u_approx|| along the validation trajectory, gamma = " + fmt(gamma));
  std::vector<std::string> header{"t", "status", "u_sdre_norm"};
  for (Index q : res.qs) {
    const std::string s = "_q" + std::to_string(q);
    header.push_back("lpv" + s);
    for (int p : ps) header.push_back("p" + std::to_string(p) + s);
  }
  w.row(header);
  std::size_t skipped = 0;
  for (const CompareRow& row : res.rows) {
    std::vector<std::string> cells{fmt(row.t), row.ok ? "ok" : "care_failed", row.ok ? fmt(row.u_norm) : ""};
    for (const auto& e : row.errors) cells.push_back(e ? fmt(*e) : "");
    if (!row.ok) ++skipped;
    w.row(cells);
  }
  w.save(detail::path_in(cfg, "sdre_compare.csv"));
  Json avg = Json::object();
  for (std::size_t iq = 0; iq < res.qs.size(); ++iq) {
    const std::string s = "_q" + std::to_string(res.qs[iq]);
    auto val_of = [&](std::size_t col) {
      return res.train_window_average[col] ? Json(*res.train_window_average[col]) : Json(nullptr);
    };
    avg["lpv" + s] = val_of(iq * per_q);
    for (std::size_t ip = 0; ip < ps.size(); ++ip) avg["p" + std::to_string(ps[ip]) + s] = val_of(iq * per_q + 1 + ip);
  }
  write_json_file(detail::path_in(cfg, "sdre_compare.json"),
                  Json{{"config_hash", config_hash(cfg)}, {"gamma", gamma}, {"t_window", cfg.t_train},
                       {"window_average", avg}, {"skipped_rows", skipped}});
  log << "sdre-compare: " << res.rows.size() << " states, " << skipped << " skipped (CARE failure)\n";
  return res;
}

struct SweepCellResult {
  SweepCell cell;
  std::optional<double> index;
  bool blowup = false;
  bool synthesis_failed = false;
  std::optional<double> blowup_time;
  double norm_at_ts = 0.0;
  double norm_at_end = 0.0;
};

struct SweepResult {
  std::vector<SweepCellResult> cells;

  const SweepCellResult* find(Index q, int p, double gamma, double ts) const {
    for (const auto& c : cells)
      if (c.cell.q == q && c.cell.p == p && c.cell.gamma == gamma && c.cell.ts == ts) return &c;
    return nullptr;
  }
};

inline SweepResult cmd_fbsweep(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  const QuadraticSdcSystem sys = make_burgers_benchmark(cfg.benchmark);
  const auto models = detail::load_models(cfg, cfg.q_list);
  const auto controllers = detail::load_controllers(cfg);
  SimulationOptions opt;
  opt.dt = cfg.dt;
  opt.blowup_threshold = detail::blowup_threshold(cfg);

  SweepResult res;
  for (Index q : detail::unique_sorted(cfg.q_list))
    for (int p : cfg.p_list)
      for (double g : cfg.gammas)
        for (double ts : cfg.ts_list) res.cells.push_back({{g, ts, p, q}, std::nullopt, false, false, std::nullopt, 0, 0});
  std::vector<std::optional<Trajectory>> marked(res.cells.size());
  auto is_marked = [&](const SweepCell& c) {
    for (const SweepCell& m : cfg.marks)
      if (m.q == c.q && m.p == c.p && m.gamma == c.gamma && m.ts == c.ts) return true;
    return false;
  };

  detail::parallel_for(res.cells.size(), detail::worker_count(cfg), [&](std::size_t i) {
    SweepCellResult& out = res.cells[i];
    const SweepCell& c = out.cell;
    const ControllerEntry* ctrl = detail::find_controller(controllers, c.q, c.gamma, c.p);
    if (!ctrl || !ctrl->expansion) {
      out.synthesis_failed = true;
      return;
    }
    const FeedbackLaw law = expanded_feedback_law(models.at(c.q), *ctrl->expansion);
    Trajectory tr = simulate_closed_loop(sys, law, c.ts, cfg.t_end, opt);
    out.blowup = tr.blowup;
    out.blowup_time = tr.blowup_time;
    const Index k_ts = std::min<Index>(std::llround(c.ts / cfg.dt), tr.states.cols() - 1);
    out.norm_at_ts = m_norm(sys, tr.states.col(k_ts));
    out.norm_at_end = m_norm(sys, tr.states.col(tr.states.cols() - 1));
    if (!tr.blowup) out.index = performance_index(tr, law, c.ts, cfg.t_end);
    if (is_marked(c)) marked[i] = std::move(tr);
  });

  for (Index q : detail::unique_sorted(cfg.q_list))
    for (int p : cfg.p_list) {
      CsvWriter w(cfg, "fbsweep: performance index, q = " + std::to_string(q) + ", p = " + std::to_string(p) +
                           ", rows gamma, columns t_s (blank = blowup; flags: . finite, B blowup, S synthesis failed)");
      std::vector<std::string> header{"gamma"};
      for (double ts : cfg.ts_list) header.push_back("ts=" + fmt(ts));
      header.push_back("flags");
      w.row(header);
      for (double g : cfg.gammas) {
        std::vector<std::string> row{fmt(g)};
        std::string flags;
        for (double ts : cfg.ts_list) {
          const SweepCellResult* c = res.find(q, p, g, ts);
          row.push_back(c->index ? fmt(*c->index) : "");
          flags += c->synthesis_failed ? 'S' : (c->index ? '.' : 'B');
        }
        row.push_back(flags);
        w.row(row);
      }
      w.save(detail::path_in(cfg, "fbsweep_q" + std::to_string(q) + "_p" + std::to_string(p) + ".csv"));
    }

  Json cells = Json::array();
  for (const SweepCellResult& c : res.cells)
    cells.push_back(Json{{"q", c.cell.q},
                         {"p", c.cell.p},
                         {"gamma", c.cell.gamma},
                         {"ts", c.cell.ts},
                         {"index", c.index ? Json(*c.index) : Json(nullptr)},
                         {"blowup", c.blowup},
                         {"synthesis_failed", c.synthesis_failed},
                         {"blowup_time", c.blowup_time ? Json(*c.blowup_time) : Json(nullptr)},
                         {"m_norm_at_ts", c.norm_at_ts},
                         {"m_norm_at_end", c.norm_at_end}});
  write_json_file(detail::path_in(cfg, "fbsweep.json"),
                  Json{{"config_hash", config_hash(cfg)}, {"t_end", cfg.t_end}, {"cells", cells}});

  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    if (!marked[i]) continue;
    const Trajectory& tr = *marked[i];
    CsvWriter w(cfg, "fbsweep trajectory " + detail::cell_label(res.cells[i].cell));
    std::vector<std::string> header{"t", "m_norm"};
    for (Index j = 0; j < sys.m(); ++j) header.push_back("u" + std::to_string(j + 1));
    for (Index j = 0; j < sys.l(); ++j) header.push_back("y" + std::to_string(j + 1));
    w.row(header);
    for (Index k = 0; k < tr.states.cols(); ++k) {
      std::vector<std::string> row{fmt(tr.times(k)), fmt(m_norm(sys, tr.states.col(k)))};
      for (Index j = 0; j < sys.m(); ++j) row.push_back(k < tr.inputs.cols() ? fmt(tr.inputs(j, k)) : "");
      for (Index j = 0; j < sys.l(); ++j) row.push_back(fmt(tr.outputs(j, k)));
      w.row(row);
    }
    w.save(detail::path_in(cfg, "trajectory_" + detail::cell_label(res.cells[i].cell) + ".csv"));
  }
  std::size_t finite = 0;
  for (const auto& c : res.cells) finite += c.index.has_value();
  log << "fbsweep: " << res.cells.size() << " cells, " << finite << " finite\n";
  return res;
}

inline std::vector<ComplexityRow> cmd_model_summary(const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_out_dir(cfg);
  std::vector<ComplexityRow> rows;
  const Index r = cfg.training.r;
  rows.push_back(count_parameters(detail::load_artifact<PodBasis>(detail::path_in(cfg, detail::pod_file(r)),
                                                                  [](const Json& j) { return pod_from_json(j); })));
  for (const auto& [q, m] : detail::load_models(cfg, cfg.q_list)) rows.push_back(count_parameters(m));
  CsvWriter w(cfg, "model-summary: parameter and layer counts per scheme");
  w.row({"scheme", "r", "q", "encoding_params", "encoding_layers", "encoding_kind", "clustering_params",
         "decoder_params", "decoding_params", "decoding_nonlinear_layers", "decoding_linear_layers"});
  for (const ComplexityRow& c : rows)
    w.row({c.scheme, std::to_string(c.r), std::to_string(c.q), std::to_string(c.encoding_params),
           std::to_string(c.encoding_layers), c.encoding_nonlinear ? "nonlinear" : "linear",
           std::to_string(c.clustering_params), std::to_string(c.decoder_params), std::to_string(c.decoding_params()),
           std::to_string(c.decoding_nonlinear_layers), std::to_string(c.decoding_linear_layers)});
  w.save(detail::path_in(cfg, "model_summary.csv"));
  log << "model-summary: " << rows.size() << " scheme(s)\n";
  return rows;
}

}  // namespace pae
