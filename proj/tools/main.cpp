#include <cstdint>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kalmanuq/errors.hpp"
#include "kalmanuq/experiment.hpp"

namespace {

// One machine-readable error object on stderr; the human summary is the
// message field.
void print_error(const std::string& type, const std::string& message) {
  nlohmann::json j;
  j["error"]["type"] = type;
  j["error"]["message"] = message;
  std::cerr << j.dump() << std::endl;
}

struct SubArgs {
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
};

kalmanuq::ExperimentConfig config_for(const SubArgs& sub) {
  kalmanuq::ExperimentConfig cfg =
      kalmanuq::load_experiment_config(sub.config_path);
  if (sub.cmd->count("--seed")) cfg.seed = sub.seed;
  if (sub.cmd->count("--out")) cfg.out_dir = sub.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State estimation experiments: model-based and learned "
               "Kalman filters with uncertainty calibration"};
  app.require_subcommand(1);

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "Generate and store the grid's datasets"},
      {"train", "Train the learned filters once over the noise grid"},
      {"evaluate", "Evaluate stored checkpoints per grid point"},
      {"sweep", "Generate, train and evaluate; write table and figures"},
      {"single", "Single mismatched velocity-model run with traces"},
      {"bench", "Inference latency table, serial and parallel"},
      {"plot", "Re-derive the figures from stored CSVs"},
  };

  std::map<std::string, SubArgs> subs;
  for (const auto& [name, desc] : commands) {
    SubArgs& sub = subs[name];
    sub.cmd = app.add_subcommand(name, desc);
    sub.cmd->add_option("--config", sub.config_path,
                        "Experiment config (json)")
        ->required();
    sub.cmd->add_option("--seed", sub.seed, "Master seed override");
    sub.cmd->add_option("--out", sub.out_dir, "Output directory override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("cli", e.what());
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const kalmanuq::ExperimentConfig cfg = config_for(subs.at(name));
    if (name == "generate") {
      for (const std::string& path : kalmanuq::run_generate(cfg))
        std::cout << path << "\n";
    } else if (name == "train") {
      const auto trained = kalmanuq::run_train(cfg);
      std::cout << "trained " << trained.size() << " filter(s) into "
                << cfg.experiment_dir() << "\n";
    } else if (name == "evaluate") {
      const auto rows = kalmanuq::run_evaluate(cfg);
      std::cout << rows.size() << " rows -> " << cfg.experiment_dir()
                << "/eval.csv\n";
    } else if (name == "sweep") {
      const auto rows = kalmanuq::run_sweep(cfg);
      std::cout << rows.size() << " rows -> " << cfg.experiment_dir()
                << "/sweep.csv\n";
    } else if (name == "single") {
      kalmanuq::run_single(cfg);
      std::cout << "single-run traces -> " << cfg.experiment_dir() << "\n";
    } else if (name == "bench") {
      for (const kalmanuq::BenchRow& row : kalmanuq::run_bench(cfg))
        std::cout << row.scenario << ' ' << row.filter << ' ' << row.mode
                  << ' ' << row.median_ms << " ms\n";
    } else if (name == "plot") {
      for (const std::string& path : kalmanuq::run_plot(cfg))
        std::cout << path << "\n";
    }
  } catch (const kalmanuq::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
