#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include "pae/harness.hpp"

using namespace pae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pae_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Json tiny_config_json() {
  return Json::parse(R"({
    "benchmark": {"n_grid": 16},
    "training": {"r": 2, "q": 2, "epochs": 40, "batch": 50},
    "simulation": {"t_validation": 0.6},
    "report": {"r_list": [2, 3], "epochs": 30},
    "gridsearch": {"r_list": [2, 3], "q_list": [1, 2], "epochs": 20},
    "sweep": {"gamma_list": [1.0, 0.1], "ts_list": [0.2], "p_list": [0, 1], "q_list": [1, 2], "t_end": 1.0,
              "marks": [{"gamma": 1.0, "ts": 0.2, "p": 1, "q": 2}]},
    "compare": {"gamma": 1.0, "stride": 40},
    "workers": 1
  })");
}

fs::path write_config(const fs::path& dir, const Json& j) {
  const fs::path p = dir / "config.json";
  write_text_file(p.string(), j.dump(1));
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PAE_SDRE_EXE) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string first_line(const fs::path& p) {
  const std::string text = read_text_file(p.string());
  return text.substr(0, text.find('\n'));
}

const char* const kVerbs[] = {"generate", "train", "gridsearch", "synthesize", "sdre-compare", "fbsweep",
                              "model-summary"};

void run_pipeline(const fs::path& cfg, const fs::path& out) {
  for (const char* verb : kVerbs)
    ASSERT_EQ(run_cli(std::string(verb) + " --config " + cfg.string() + " --out " + out.string()), 0) << verb;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(validate_config(c));
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(Config, HashIgnoresOutputLocationOnly) {
  ExperimentConfig a, b;
  b.out = "elsewhere";
  b.workers = 3;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = a.seed + 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(config_from_json(Json{{"sed", 1}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"training", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"training", {{"r", 0}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"sweep", {{"p_list", {3}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"sweep", {{"ts_list", {9.0}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"training", {{"lambda", "big"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(Json{{"benchmark", {{"sensors", {{0.1, 0.2}}}}}}), ConfigError);
}

TEST(Config, FileErrors) {
  const fs::path dir = scratch("config_files");
  EXPECT_THROW(load_config((dir / "missing.json").string()), IoError);
  write_text_file((dir / "bad.json").string(), "{ not json");
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
}

TEST(Csv, FormatRoundTripsDoubles) {
  for (double x : {0.1, -3.0, 1e-300, 6.02214076e23, 1.0 / 3.0}) EXPECT_EQ(parse_double(fmt(x), "test"), x);
  EXPECT_EQ(fmt(2.0), "2");
  EXPECT_THROW(parse_double("1.5x", "test"), IoError);
}

TEST(Csv, HeaderCarriesConfigHash) {
  const ExperimentConfig c;
  CsvWriter w(c, "demo");
  w.row({"a", "b"});
  EXPECT_EQ(w.str(), "# config=" + config_hash(c) + " demo\na,b\n");
}

TEST(ParallelFor, VisitsEveryIndexAndRethrows) {
  std::vector<int> hits(50, 0);
  detail::parallel_for(50, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(detail::parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw NumericalError("boom");
               }),
               NumericalError);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit_codes");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("generate --bogus 1"), 2);
  EXPECT_EQ(run_cli("generate --r abc"), 2);
  EXPECT_EQ(run_cli("generate --ts -1 --out " + dir.string()), 2);
  Json unknown = tiny_config_json();
  unknown["sweep"]["gama_list"] = {1.0};
  EXPECT_EQ(run_cli("generate --config " + write_config(dir, unknown).string()), 2);
  EXPECT_EQ(run_cli("generate --config " + (dir / "missing.json").string()), 4);
  EXPECT_EQ(run_cli("train --out " + (dir / "empty").string()), 4);

  Json unstable = tiny_config_json();
  unstable["benchmark"]["growth"] = 400.0;
  unstable["benchmark"]["reaction"] = 200.0;
  unstable["simulation"]["t_train"] = 1.0;
  unstable["simulation"]["t_validation"] = 1.0;
  EXPECT_EQ(run_cli("generate --config " + write_config(dir, unstable).string() + " --out " + dir.string()), 3);
}

TEST(Cli, PipelineOutputs) {
  const fs::path dir = scratch("pipeline");
  const fs::path cfg_path = write_config(dir, tiny_config_json());
  const fs::path out = dir / "out";
  run_pipeline(cfg_path, out);
  const ExperimentConfig cfg = load_config(cfg_path.string());
  const std::string tag = "# config=" + config_hash(cfg);

  const CsvTable snaps = read_csv((out / "snapshots.csv").string());
  EXPECT_EQ(snaps.rows.size(), 16u);
  EXPECT_EQ(snaps.rows.front().size(), 401u);
  const Json vmeta = read_json_file((out / "validation.json").string());
  const std::size_t vcols = read_csv((out / "validation.csv").string()).rows.front().size();
  EXPECT_EQ(vcols, vmeta.at("N").get<std::size_t>());
  if (vmeta.at("blowup").get<bool>())
    EXPECT_LT(vcols, 481u);
  else
    EXPECT_EQ(vcols, 481u);

  for (const char* f : {"snapshots.csv", "reconstruction.csv", "gridsearch.csv", "sdre_compare.csv",
                        "fbsweep_q1_p0.csv", "fbsweep_q2_p1.csv", "model_summary.csv", "trajectory_q2_p1_g1_ts0.2.csv"})
    EXPECT_EQ(first_line(out / f).rfind(tag, 0), 0u) << f;

  const CsvTable grid = read_csv((out / "gridsearch.csv").string());
  ASSERT_EQ(grid.rows.size(), 3u);
  EXPECT_EQ(grid.rows[0].size(), 3u);
  const Json best = read_json_file((out / "gridsearch.json").string());
  EXPECT_TRUE(best.contains("best_q"));

  const CsvTable rec = read_csv((out / "reconstruction.csv").string());
  ASSERT_EQ(rec.rows.size(), 5u);
  EXPECT_EQ(rec.rows[1][0], "POD r");
  for (std::size_t i = 1; i < rec.rows.size(); ++i)
    for (std::size_t j = 1; j < rec.rows[i].size(); ++j) EXPECT_GT(parse_double(rec.rows[i][j], "rec"), 0.0);

  const CsvTable sweep = read_csv((out / "fbsweep_q2_p1.csv").string());
  ASSERT_EQ(sweep.rows.size(), 3u);
  EXPECT_EQ(sweep.rows[0], (std::vector<std::string>{"gamma", "ts=0.2", "flags"}));

  const Json controllers = read_json_file((out / "controllers.json").string());
  EXPECT_EQ(controllers.at("controllers").size(), 2u * 2u * 2u);

  const CsvTable summary = read_csv((out / "model_summary.csv").string());
  EXPECT_EQ(summary.rows.size(), 4u);
}

TEST(Cli, ByteReproducible) {
  const fs::path dir = scratch("repro");
  const fs::path cfg_path = write_config(dir, tiny_config_json());
  run_pipeline(cfg_path, dir / "a");
  run_pipeline(cfg_path, dir / "b");
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const fs::path other = dir / "b" / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(read_text_file(entry.path().string()), read_text_file(other.string())) << entry.path().filename();
    ++compared;
  }
  EXPECT_GE(compared, 15u);
}

TEST(Cli, SeedChangesModels) {
  const fs::path dir = scratch("seeds");
  const fs::path cfg_path = write_config(dir, tiny_config_json());
  for (const char* s : {"1", "2"}) {
    const std::string out = (dir / s).string();
    ASSERT_EQ(run_cli("generate --config " + cfg_path.string() + " --out " + out), 0);
    ASSERT_EQ(run_cli("train --config " + cfg_path.string() + " --seed " + s + " --out " + out), 0);
  }
  EXPECT_EQ(read_text_file((dir / "1" / "snapshots.csv").string()).substr(60),
            read_text_file((dir / "2" / "snapshots.csv").string()).substr(60));
  EXPECT_NE(read_text_file((dir / "1" / "model_q2_r2.json").string()),
            read_text_file((dir / "2" / "model_q2_r2.json").string()));
}
