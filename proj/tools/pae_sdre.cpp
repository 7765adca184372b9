// pae-sdre: command line driver for the polytopic-autoencoder SDRE pipeline.
//
//   pae-sdre <verb> [--config cfg.json] [--r N] [--q N] [--p N] [--gamma G]
//                   [--ts T] [--seed S] [--epochs E] [--out DIR] [--workers W]
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pae/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<long> r, q, p, seed, epochs;
  std::optional<double> gamma, ts;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
};

pae::ExperimentConfig resolve(const Overrides& o) {
  pae::ExperimentConfig cfg = o.config.empty() ? pae::ExperimentConfig{} : pae::load_config(o.config);
  if (o.r) cfg.training.r = *o.r;
  if (o.q) {
    cfg.training.q = *o.q;
    cfg.q_list = {*o.q};
  }
  if (o.p) cfg.p_list = {static_cast<int>(*o.p)};
  if (o.gamma) {
    cfg.gammas = {*o.gamma};
    cfg.compare_gamma = *o.gamma;
  }
  if (o.ts) cfg.ts_list = {*o.ts};
  if (o.seed) {
    if (*o.seed < 0) throw pae::ConfigError("--seed must be nonnegative");
    cfg.seed = static_cast<std::uint64_t>(*o.seed);
  }
  if (o.epochs) cfg.training.epochs = static_cast<int>(*o.epochs);
  if (o.out) cfg.out = *o.out;
  if (o.workers) cfg.workers = *o.workers;
  pae::validate_config(cfg);
  return cfg;
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--r", o.r, "reduced dimension");
  cmd->add_option("--q", o.q, "number of clusters (also restricts the sweep to this q)");
  cmd->add_option("--p", o.p, "expansion order (restricts the sweep)");
  cmd->add_option("--gamma", o.gamma, "input weight (restricts the sweep and sdre-compare)");
  cmd->add_option("--ts", o.ts, "startup time (restricts the sweep)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--workers", o.workers, "worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polytopic autoencoder + SDRE feedback experiments on a 1-D Burgers benchmark"};
  app.require_subcommand(1);
  Overrides o;
  struct Verb {
    const char* name;
    const char* help;
  };
  const Verb verbs[] = {
      {"generate", "simulate the benchmark under the test input; write training and validation snapshots"},
      {"train", "train the autoencoders and POD; write models and the reconstruction table"},
      {"gridsearch", "train one model per (q, r) cell; write the error heatmap"},
      {"synthesize", "solve the Riccati/Lyapunov cascade for every (q, gamma, p)"},
      {"sdre-compare", "compare approximate and exact SDRE feedback along the validation trajectory"},
      {"fbsweep", "closed-loop runs over gamma x t_s x p x q; write performance heatmaps"},
      {"model-summary", "write parameter counts of the trained schemes"},
  };
  for (const Verb& v : verbs) add_overrides(app.add_subcommand(v.name, v.help), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const pae::ExperimentConfig cfg = resolve(o);
    std::ostream& log = std::cerr;
    if (verb == "generate") pae::cmd_generate(cfg, log);
    else if (verb == "train") pae::cmd_train(cfg, log);
    else if (verb == "gridsearch") pae::cmd_gridsearch(cfg, log);
    else if (verb == "synthesize") pae::cmd_synthesize(cfg, log);
    else if (verb == "sdre-compare") pae::cmd_sdre_compare(cfg, log);
    else if (verb == "fbsweep") pae::cmd_fbsweep(cfg, log);
    else pae::cmd_model_summary(cfg, log);
  } catch (const pae::ConfigError& e) {
    std::cerr << "pae-sdre " << verb << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const pae::DimensionError& e) {
    std::cerr << "pae-sdre " << verb << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const pae::IoError& e) {
    std::cerr << "pae-sdre " << verb << ": I/O error: " << e.what() << "\n";
    return 4;
  } catch (const pae::NumericalError& e) {
    std::cerr << "pae-sdre " << verb << ": numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
