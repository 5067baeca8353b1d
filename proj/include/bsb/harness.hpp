#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bsb/attacks.hpp"
#include "bsb/membership.hpp"
#include "bsb/report.hpp"

namespace bsb {

struct DatasetSpec {
  std::string kind = "synth";  // mnist | cifar10 | synth
  std::filesystem::path root;  // corpus root for mnist / cifar10
  std::size_t train_limit = 10000;
  std::size_t test_limit = 2000;
  // synth only
  std::size_t synth_train = 2000;
  std::size_t synth_test = 500;
  std::size_t synth_classes = 4;
  std::size_t synth_side = 16;
  double synth_sigma = 0.25;
};

struct GridCell {
  Family family = Family::lenet5;
  bool bayesian = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<GridCell> grid{{Family::lenet5, false},
                             {Family::lenet5, true},
                             {Family::resnet_small, false},
                             {Family::resnet_small, true}};
  double dropout_rate = 0.5;
  std::size_t mc_samples = 30;
  TrainConfig train;
  BoundaryConfig boundary;
  HsjConfig hsj;
  std::size_t samples_per_attack = 100;
  std::vector<std::string> attacks{"hsj", "boundary"};
  double mi_frac = 0.5;
  std::size_t mi_k = 3;
  TrainConfig mi_attack_train{.learning_rate = 0.1,
                              .batch_size = 64,
                              .max_epochs = 200,
                              .early_stop_patience = 20,
                              .momentum = 0.9};
  std::size_t top_k_truncation = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "results";
  std::size_t workers = 1;

  void validate() const;
};

// Flat key = value text with [section] headers (INI style). Unknown keys
// are rejected. See README for the key list.
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& cfg, const std::string& text);

struct LoadedData {
  Dataset train;
  Dataset test;
};

// Corpus root from BSB_DATA_DIR, else "data".
std::filesystem::path default_data_root();
LoadedData load_data(const DatasetSpec& spec, std::uint64_t seed);

// Disjoint partitions used by every grid cell: the target's training and
// validation sets, and the attacker's shadow pool.
struct ExperimentData {
  Dataset target_train;
  Dataset target_val;
  Dataset shadow_pool;
  Dataset test;
};
ExperimentData partition(const LoadedData& data, std::uint64_t seed);

ModelSpec model_spec(const ExperimentConfig& cfg, const GridCell& cell, const Dataset& d);

struct TrainedTarget {
  ModelSpec spec;
  Network net;
  std::vector<EpochStats> history;
};
TrainedTarget train_target(const ExperimentConfig& cfg, const GridCell& cell,
                           const ExperimentData& data);

// Oracle for a trained target: deterministic for plain networks,
// MC-averaged for Bayesian ones.
Oracle make_oracle(std::shared_ptr<const Network> net, const ModelSpec& spec,
                   std::uint64_t seed, std::size_t top_k = 0);

// Accuracy in percent of the oracle's labels on `d`.
double oracle_accuracy(Oracle& o, const Dataset& d);

// The first `count` test indices, in seeded shuffle order, whose oracle
// label is correct.
std::vector<std::size_t> select_attack_samples(Oracle& o, const Dataset& test,
                                               std::size_t count, std::uint64_t seed);

struct AttackRecord {
  std::size_t sample_index = 0;
  AttackResult result;
};

// Builds an oracle with its own ledger (and, for MC models, its own random
// stream) from a seed.
using OracleFactory = std::function<Oracle(std::uint64_t)>;

// Runs `attack` ("boundary" or "hsj") on every selected sample, each against
// its own oracle and with streams seeded by seed ^ sample index. Results come
// back in sample order whatever the worker count.
std::vector<AttackRecord> run_attacks(const OracleFactory& make_oracle, const Dataset& test,
                                      std::span<const std::size_t> samples,
                                      const std::string& attack, const ExperimentConfig& cfg);

// 100 * successes / attempts.
double attack_efficacy(std::span<const AttackResult> results);
double attack_efficacy(std::span<const AttackRecord> records);
double mean_queries(std::span<const AttackRecord> records);

struct MiOutcome {
  double accuracy = 0.0;
  RocCurve roc;
  double attacker_holdout_accuracy = 0.0;
};

// Shadow split of the pool, shadow training (same family and Bayesian flag
// as the target), attack classifier training, then scoring of the target's
// training set against the test set.
MiOutcome run_membership_inference(const ExperimentConfig& cfg, const ModelSpec& spec,
                                   Oracle& target, const ExperimentData& data);

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  std::map<std::string, std::vector<NamedRoc>> rocs;  // per dataset
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Writes results.csv, one roc_<dataset>_<model>.csv per row, and
// roc_<dataset>.svg into `dir`.
void write_outputs(const ExperimentOutput& out, const std::filesystem::path& dir);

// Runs fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace bsb
