// Command-line front end. Exit codes: 0 ok, 1 usage or configuration,
// 2 data, 3 runtime.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "bsb/harness.hpp"

using namespace bsb;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data_dir;
  std::optional<std::size_t> workers;
  std::string dataset;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI configuration file");
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--data-dir", c.data_dir, "Corpus root (default $BSB_DATA_DIR or ./data)");
  cmd->add_option("--workers", c.workers, "Worker threads for attack runs");
  cmd->add_option("--dataset", c.dataset, "mnist | cifar10 | synth");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.data_dir.empty()) cfg.dataset.root = c.data_dir;
  if (c.workers) cfg.workers = *c.workers;
  if (!c.dataset.empty()) cfg.dataset.kind = c.dataset;
  cfg.validate();
  return cfg;
}

// Rebuilds the partition a model was trained on, so members are known.
ExperimentData experiment_data(const ExperimentConfig& cfg) {
  return partition(load_data(cfg.dataset, cfg.seed), cfg.seed);
}

void print_row(const ResultRow& r) {
  std::printf("%s %s%s: test %.2f%%, hsj %.0f%%, boundary %.0f%%, MI acc %.2f%%, AUC %.4f\n",
              r.dataset.c_str(), r.bayesian ? "bayesian-" : "", r.model.c_str(), r.test_accuracy,
              r.hsj_efficacy, r.boundary_efficacy, r.mi_accuracy, r.mi_auc);
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const ValidationError*>(&e)) return 1;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box attacks on Bayesian and plain image classifiers"};
  app.require_subcommand(1);

  Common common;
  std::string out;
  std::string model = "lenet5";
  bool bayesian = false;
  std::string attack = "hsj";
  std::optional<std::size_t> samples;
  std::optional<std::size_t> query_budget;
  std::size_t top_k = 0;
  std::string model_file;

  auto* train_cmd = app.add_subcommand("train", "Train a target model and save it");
  add_common(train_cmd, common);
  train_cmd->add_option("--model", model, "lenet5 | resnet-small");
  train_cmd->add_flag("--bayesian", bayesian, "MC dropout variant");
  train_cmd->add_option("--out", out, "Model file to write")->required();

  auto* adv_cmd = app.add_subcommand("attack-adv", "Decision-based attack on a saved model");
  add_common(adv_cmd, common);
  adv_cmd->add_option("--model", model, "lenet5 | resnet-small (trained in-process)");
  adv_cmd->add_flag("--bayesian", bayesian, "MC dropout variant");
  adv_cmd->add_option("--model-file", model_file, "Attack a saved model instead");
  adv_cmd->add_option("--attack", attack, "hsj | boundary");
  adv_cmd->add_option("--samples", samples, "Test samples to attack");
  adv_cmd->add_option("--query-budget", query_budget, "Queries per sample");

  auto* mi_cmd = app.add_subcommand("attack-mi", "Shadow-model membership inference on a saved model");
  add_common(mi_cmd, common);
  mi_cmd->add_option("--model", model, "lenet5 | resnet-small (trained in-process)");
  mi_cmd->add_flag("--bayesian", bayesian, "MC dropout variant");
  mi_cmd->add_option("--model-file", model_file, "Attack a saved model instead");
  mi_cmd->add_option("--top-k", top_k, "Truncate target posteriors to the top k (0 = off)");

  auto* run_cmd = app.add_subcommand("run", "Full experiment grid");
  add_common(run_cmd, common);
  run_cmd->add_option("--out", out, "Output directory");

  std::size_t synth_train = 2000, synth_test = 500;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write synthetic blobs as IDX files");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--train", synth_train, "Training samples");
  synth_cmd->add_option("--test", synth_test, "Test samples");

  std::string csv;
  auto* report_cmd = app.add_subcommand("report", "Aggregate a results.csv into summary tables");
  report_cmd->add_option("csv", csv, "results.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*report_cmd) {
      const auto rows = load_results_csv(csv);
      std::cout << "membership inference accuracy\n";
      for (const auto& v : aggregate_mi_by_variant(rows)) {
        std::printf("  %-8s %-8s %6.2f\n", v.dataset.c_str(), v.bayesian ? "bayesian" : "plain",
                    round_half_up(v.mean_mi_accuracy));
      }
      std::cout << "adversarial efficacy (hsj, boundary)\n";
      for (const auto& a : aggregate_adv_by_dataset(rows)) {
        std::printf("  %-8s %6.2f %6.2f\n", a.dataset.c_str(), round_half_up(a.mean_hsj),
                    round_half_up(a.mean_boundary));
      }
      return 0;
    }

    ExperimentConfig cfg = resolve(common);

    if (*synth_cmd) {
      const std::filesystem::path dir(out);
      std::filesystem::create_directories(dir);
      const auto& s = cfg.dataset;
      save_idx(synth_blobs(synth_train, s.synth_classes, s.synth_side, s.synth_sigma, cfg.seed),
               dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
      save_idx(synth_blobs(synth_test, s.synth_classes, s.synth_side, s.synth_sigma, cfg.seed + 1),
               dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
      std::cout << "wrote " << synth_train << " + " << synth_test << " samples to " << dir << "\n";
      return 0;
    }

    if (*run_cmd) {
      if (!out.empty()) cfg.out_dir = out;
      const ExperimentOutput result =
          run_experiment(cfg, [](const std::string& msg) { std::cerr << msg << "\n"; });
      write_outputs(result, cfg.out_dir);
      for (const auto& r : result.rows) print_row(r);
      std::cout << "results in " << cfg.out_dir << "\n";
      return 0;
    }

    if (*train_cmd) {
      const ExperimentData data = experiment_data(cfg);
      const GridCell cell{parse_family(model), bayesian};
      TrainedTarget t = train_target(cfg, cell, data);
      auto net = std::make_shared<const Network>(t.net);
      Oracle o = make_oracle(net, t.spec, cfg.seed);
      std::printf("%s: %zu epochs, test accuracy %.2f%%\n", t.spec.label().c_str(), t.history.size(),
                  oracle_accuracy(o, data.test));
      save_model(out, t.spec, t.net);
      return 0;
    }

    const ExperimentData data = experiment_data(cfg);
    LoadedModel loaded;
    if (model_file.empty()) {
      TrainedTarget t = train_target(cfg, {parse_family(model), bayesian}, data);
      loaded = {t.spec, std::move(t.net)};
    } else {
      loaded = load_model(model_file);
    }
    auto net = std::make_shared<const Network>(loaded.net);

    if (*adv_cmd) {
      if (samples) cfg.samples_per_attack = *samples;
      if (query_budget) cfg.boundary.max_queries = cfg.hsj.max_queries = *query_budget;
      cfg.attacks = {attack};
      cfg.validate();
      Oracle sel = make_oracle(net, loaded.spec, cfg.seed);
      const auto picked = select_attack_samples(sel, data.test, cfg.samples_per_attack, cfg.seed);
      const OracleFactory factory = [&](std::uint64_t s) { return make_oracle(net, loaded.spec, s); };
      const auto records = run_attacks(factory, data.test, picked, attack, cfg);
      std::printf("%s on %s: efficacy %.2f%% over %zu samples, mean queries %.0f\n", attack.c_str(),
                  loaded.spec.label().c_str(), attack_efficacy(records), records.size(),
                  mean_queries(records));
      return 0;
    }

    if (*mi_cmd) {
      Oracle target = make_oracle(net, loaded.spec, cfg.seed, top_k);
      const MiOutcome mi = run_membership_inference(cfg, loaded.spec, target, data);
      std::printf("membership inference on %s: accuracy %.2f%%, AUC %.4f, attacker holdout %.2f%%\n",
                  loaded.spec.label().c_str(), 100.0 * mi.accuracy, mi.roc.auc,
                  100.0 * mi.attacker_holdout_accuracy);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 1;
}
