#include "bsb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace bsb {
namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<GridCell> parse_grid(const std::string& text) {
  std::vector<GridCell> grid;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    GridCell c;
    constexpr std::string_view kPrefix = "bayesian-";
    if (item.starts_with(kPrefix)) {
      c.bayesian = true;
      item.erase(0, kPrefix.size());
    }
    c.family = parse_family(item);
    grid.push_back(c);
  }
  return grid;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T get_value(const boost::property_tree::ptree& node, const std::string& key) {
  try {
    return node.get_value<T>();
  } catch (const boost::property_tree::ptree_error&) {
    throw ValidationError("config key '" + key + "' has invalid value '" +
                          node.get_value<std::string>() + "'");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (grid.empty()) throw ValidationError("experiment grid is empty");
  if (samples_per_attack == 0) throw ValidationError("samples_per_attack must be at least 1");
  if (workers == 0) throw ValidationError("workers must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ValidationError("dropout rate must lie in [0, 1)");
  if (mc_samples == 0) throw ValidationError("mc_samples must be positive");
  if (!(mi_frac > 0.0 && mi_frac < 1.0)) throw ValidationError("mi frac must lie in (0, 1)");
  if (mi_k == 0) throw ValidationError("mi k must be positive");
  for (const auto& a : attacks) {
    if (a != "boundary" && a != "hsj") throw ValidationError("unknown attack '" + a + "'");
  }
  if (dataset.kind != "mnist" && dataset.kind != "cifar10" && dataset.kind != "synth")
    throw ValidationError("unknown dataset '" + dataset.kind + "'");
  train.validate();
  mi_attack_train.validate();
  boundary.validate();
  hsj.validate();
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  using Setter = std::function<void(const pt::ptree&, const std::string&)>;
  auto sz = [](std::size_t& f) {
    return Setter([&f](const pt::ptree& n, const std::string& k) { f = get_value<std::size_t>(n, k); });
  };
  auto dbl = [](double& f) {
    return Setter([&f](const pt::ptree& n, const std::string& k) { f = get_value<double>(n, k); });
  };
  auto u64 = [](std::uint64_t& f) {
    return Setter([&f](const pt::ptree& n, const std::string& k) { f = get_value<std::uint64_t>(n, k); });
  };
  auto str = [](std::string& f) {
    return Setter([&f](const pt::ptree& n, const std::string&) { f = n.get_value<std::string>(); });
  };

  // An explicit hsj_budget wins over the norm's default, whatever the order.
  bool hsj_budget_set = tree.get_child_optional("adversarial.hsj_budget").has_value();
  std::map<std::string, Setter> keys = {
      {"seed", u64(cfg.seed)},
      {"out", Setter([&](const pt::ptree& n, const std::string&) { cfg.out_dir = n.get_value<std::string>(); })},
      {"workers", sz(cfg.workers)},
      {"dataset.kind", str(cfg.dataset.kind)},
      {"dataset.root", Setter([&](const pt::ptree& n, const std::string&) { cfg.dataset.root = n.get_value<std::string>(); })},
      {"dataset.train_limit", sz(cfg.dataset.train_limit)},
      {"dataset.test_limit", sz(cfg.dataset.test_limit)},
      {"dataset.synth_train", sz(cfg.dataset.synth_train)},
      {"dataset.synth_test", sz(cfg.dataset.synth_test)},
      {"dataset.synth_classes", sz(cfg.dataset.synth_classes)},
      {"dataset.synth_side", sz(cfg.dataset.synth_side)},
      {"dataset.synth_sigma", dbl(cfg.dataset.synth_sigma)},
      {"models.grid", Setter([&](const pt::ptree& n, const std::string&) { cfg.grid = parse_grid(n.get_value<std::string>()); })},
      {"models.dropout", dbl(cfg.dropout_rate)},
      {"models.mc_samples", sz(cfg.mc_samples)},
      {"train.learning_rate", dbl(cfg.train.learning_rate)},
      {"train.batch_size", sz(cfg.train.batch_size)},
      {"train.max_epochs", sz(cfg.train.max_epochs)},
      {"train.patience", sz(cfg.train.early_stop_patience)},
      {"train.momentum", dbl(cfg.train.momentum)},
      {"adversarial.samples", sz(cfg.samples_per_attack)},
      {"adversarial.attacks", Setter([&](const pt::ptree& n, const std::string&) { cfg.attacks = parse_list(n.get_value<std::string>()); })},
      {"adversarial.query_budget", Setter([&](const pt::ptree& n, const std::string& k) {
         cfg.boundary.max_queries = cfg.hsj.max_queries = get_value<std::size_t>(n, k);
       })},
      {"adversarial.l2_budget", dbl(cfg.boundary.distance_budget)},
      {"adversarial.hsj_norm", Setter([&](const pt::ptree& n, const std::string&) {
         cfg.hsj.norm = parse_norm(n.get_value<std::string>());
         if (!hsj_budget_set) cfg.hsj.distance_budget = default_budget(cfg.hsj.norm);
       })},
      {"adversarial.hsj_budget", Setter([&](const pt::ptree& n, const std::string& k) {
         cfg.hsj.distance_budget = get_value<double>(n, k);
         hsj_budget_set = true;
       })},
      {"adversarial.hsj_max_iters", sz(cfg.hsj.max_outer_iters)},
      {"adversarial.hsj_batch", sz(cfg.hsj.grad_batch_init)},
      {"adversarial.hsj_tol", dbl(cfg.hsj.bin_search_tol)},
      {"adversarial.orth_step", dbl(cfg.boundary.orth_step)},
      {"adversarial.source_step", dbl(cfg.boundary.source_step)},
      {"mi.frac", dbl(cfg.mi_frac)},
      {"mi.k", sz(cfg.mi_k)},
      {"mi.top_k_truncation", sz(cfg.top_k_truncation)},
      {"mi.learning_rate", dbl(cfg.mi_attack_train.learning_rate)},
      {"mi.max_epochs", sz(cfg.mi_attack_train.max_epochs)},
      {"mi.patience", sz(cfg.mi_attack_train.early_stop_patience)},
  };

  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      auto it = keys.find(section);
      if (it == keys.end()) throw ValidationError("config: unknown key '" + section + "'");
      it->second(node, section);
      continue;
    }
    for (const auto& [key, leaf] : node) {
      const std::string full = section + "." + key;
      auto it = keys.find(full);
      if (it == keys.end()) throw ValidationError("config: unknown key '" + full + "'");
      it->second(leaf, full);
    }
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_text(cfg, s.str());
  return cfg;
}

std::filesystem::path default_data_root() {
  if (const char* env = std::getenv("BSB_DATA_DIR"); env && *env) return env;
  return "data";
}

LoadedData load_data(const DatasetSpec& spec, std::uint64_t seed) {
  LoadedData d;
  const auto root = spec.root.empty() ? default_data_root() : spec.root;
  if (spec.kind == "synth") {
    d.train = synth_blobs(spec.synth_train, spec.synth_classes, spec.synth_side,
                          spec.synth_sigma, mix(seed, 101));
    d.test = synth_blobs(spec.synth_test, spec.synth_classes, spec.synth_side,
                         spec.synth_sigma, mix(seed, 102));
    return d;
  }
  if (spec.kind == "mnist") {
    auto dir = root / "mnist";
    if (!std::filesystem::exists(dir / "train-images-idx3-ubyte")) dir = root;
    d.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    d.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  } else if (spec.kind == "cifar10") {
    auto dir = root / "cifar-10-batches-bin";
    if (!std::filesystem::exists(dir / "test_batch.bin")) dir = root;
    std::vector<std::filesystem::path> batches;
    for (int i = 1; i <= 5; ++i) {
      const auto p = dir / ("data_batch_" + std::to_string(i) + ".bin");
      if (std::filesystem::exists(p)) batches.push_back(p);
    }
    d.train = load_cifar_binary(batches);
    const std::filesystem::path test[] = {dir / "test_batch.bin"};
    d.test = load_cifar_binary(test);
  } else {
    throw ValidationError("unknown dataset '" + spec.kind + "'");
  }
  d.train = d.train.head(spec.train_limit);
  d.test = d.test.head(spec.test_limit);
  return d;
}

ExperimentData partition(const LoadedData& data, std::uint64_t seed) {
  const double halves[] = {0.5, 0.5};
  auto pools = split(data.train, halves, mix(seed, 201));
  const double tv[] = {0.9, 0.1};
  auto target = split(pools[0], tv, mix(seed, 202));
  return {std::move(target[0]), std::move(target[1]), std::move(pools[1]), data.test};
}

ModelSpec model_spec(const ExperimentConfig& cfg, const GridCell& cell, const Dataset& d) {
  ModelSpec spec;
  spec.family = cell.family;
  spec.bayesian = cell.bayesian;
  spec.dropout_rate = cfg.dropout_rate;
  spec.mc_samples = cfg.mc_samples;
  spec.input_shape = d.image_shape();
  spec.num_classes = d.class_count;
  return spec;
}

TrainedTarget train_target(const ExperimentConfig& cfg, const GridCell& cell,
                           const ExperimentData& data) {
  const ModelSpec spec = model_spec(cfg, cell, data.target_train);
  const std::uint64_t salt = static_cast<std::uint64_t>(cell.family) * 2 + (cell.bayesian ? 1 : 0);
  TrainConfig tc = cfg.train;
  tc.seed = mix(cfg.seed, 300 + salt);
  auto r = train(build(spec, mix(cfg.seed, 400 + salt)), data.target_train, data.target_val, tc);
  return {spec, std::move(r.net), std::move(r.history)};
}

Oracle make_oracle(std::shared_ptr<const Network> net, const ModelSpec& spec,
                   std::uint64_t seed, std::size_t top_k) {
  OracleOptions opt;
  opt.top_k = top_k;
  if (spec.bayesian && net->has_dropout())
    return Oracle(mc_predictor(std::move(net), spec.mc_samples, seed), opt);
  return Oracle(deterministic_predictor(std::move(net)), opt);
}

double oracle_accuracy(Oracle& o, const Dataset& d) {
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < d.size(); b += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(d.size(), b + kChunk); ++i) idx.push_back(i);
    const Dataset part = d.subset(idx);
    const auto labels = o.query_labels(part.images);
    for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == part.labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(d.size());
}

std::vector<std::size_t> select_attack_samples(Oracle& o, const Dataset& test,
                                               std::size_t count, std::uint64_t seed) {
  const auto order = seeded_permutation(test.size(), mix(seed, 500));
  std::vector<std::size_t> chosen;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < order.size() && chosen.size() < count; b += kChunk) {
    const std::span<const std::size_t> idx(order.data() + b, std::min(kChunk, order.size() - b));
    const Dataset part = test.subset(idx);
    const auto labels = o.query_labels(part.images);
    for (std::size_t i = 0; i < idx.size() && chosen.size() < count; ++i) {
      if (labels[i] == part.labels[i]) chosen.push_back(idx[i]);
    }
  }
  return chosen;
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<AttackRecord> run_attacks(const OracleFactory& make, const Dataset& test,
                                      std::span<const std::size_t> samples,
                                      const std::string& attack, const ExperimentConfig& cfg) {
  if (attack != "boundary" && attack != "hsj")
    throw ValidationError("unknown attack '" + attack + "'");
  std::vector<AttackRecord> out(samples.size());
  parallel_for(samples.size(), cfg.workers, [&](std::size_t i) {
    const std::size_t idx = samples[i];
    const std::uint64_t seed = cfg.seed ^ idx;
    Oracle o = make(mix(seed, 600));
    const Tensor x = test.images.sample_tensor(idx);
    const int label = test.labels[idx];
    out[i].sample_index = idx;
    try {
      if (attack == "boundary") {
        BoundaryConfig bc = cfg.boundary;
        bc.seed = seed;
        out[i].result = boundary_attack(o, x, label, bc);
      } else {
        HsjConfig hc = cfg.hsj;
        hc.seed = seed;
        out[i].result = hsj_attack(o, x, label, hc);
      }
    } catch (const PreconditionError&) {
      // A stochastic oracle can disagree with the selection pass on a
      // borderline sample. Counted as a failed attack.
      out[i].result = AttackResult{};
      out[i].result.queries_used = o.queries();
      out[i].result.original_label = label;
    }
  });
  return out;
}

double attack_efficacy(std::span<const AttackResult> results) {
  if (results.empty()) throw ValidationError("attack_efficacy: no attack results");
  const auto hits = std::count_if(results.begin(), results.end(),
                                  [](const AttackResult& r) { return r.success; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double attack_efficacy(std::span<const AttackRecord> records) {
  std::vector<AttackResult> r;
  for (const auto& rec : records) r.push_back(rec.result);
  return attack_efficacy(r);
}

double mean_queries(std::span<const AttackRecord> records) {
  if (records.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : records) s += static_cast<double>(r.result.queries_used);
  return s / static_cast<double>(records.size());
}

MiOutcome run_membership_inference(const ExperimentConfig& cfg, const ModelSpec& spec,
                                   Oracle& target, const ExperimentData& data) {
  const ShadowSplit split = make_shadow_split(data.shadow_pool, cfg.mi_frac, mix(cfg.seed, 700));
  TrainConfig tc = cfg.train;
  tc.seed = mix(cfg.seed, 701);
  const Network shadow = train_shadow(spec, split, tc, mix(cfg.seed, 702));
  const std::size_t samples = spec.bayesian ? spec.mc_samples : 1;
  const AttackDataset ads = build_attack_dataset(shadow, split, cfg.mi_k, samples, mix(cfg.seed, 703));
  TrainConfig ac = cfg.mi_attack_train;
  ac.seed = mix(cfg.seed, 704);
  const AttackClassifier attacker = train_attack_classifier(ads, ac);
  const MiEvaluation ev = evaluate_mi(attacker.net, target, data.target_train, data.test, cfg.mi_k);
  return {ev.accuracy, ev.roc, attacker.holdout_accuracy};
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  auto note = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const LoadedData loaded = load_data(cfg.dataset, cfg.seed);
  const ExperimentData data = partition(loaded, cfg.seed);
  ExperimentOutput out;

  for (const auto& cell : cfg.grid) {
    const std::string where = cfg.dataset.kind + "/" + (cell.bayesian ? "bayesian-" : "") +
                              family_name(cell.family);
    try {
      note(where + ": training");
      TrainedTarget target = train_target(cfg, cell, data);
      auto net = std::make_shared<const Network>(std::move(target.net));
      const ModelSpec spec = target.spec;

      ResultRow row;
      row.dataset = cfg.dataset.kind;
      row.model = family_name(cell.family);
      row.bayesian = cell.bayesian;
      {
        Oracle o = make_oracle(net, spec, mix(cfg.seed, 800), cfg.top_k_truncation);
        row.test_accuracy = oracle_accuracy(o, data.test);
      }
      note(where + ": test accuracy " + std::to_string(row.test_accuracy));

      Oracle selector = make_oracle(net, spec, mix(cfg.seed, 801));
      const auto samples =
          select_attack_samples(selector, data.test, cfg.samples_per_attack, cfg.seed);
      const OracleFactory factory = [&](std::uint64_t s) {
        return make_oracle(net, spec, s, cfg.top_k_truncation);
      };
      for (const auto& attack : cfg.attacks) {
        note(where + ": " + attack + " on " + std::to_string(samples.size()) + " samples");
        const auto records = run_attacks(factory, data.test, samples, attack, cfg);
        const double eff = records.empty() ? 0.0 : attack_efficacy(records);
        if (attack == "hsj") {
          row.hsj_efficacy = eff;
          row.queries_mean_hsj = mean_queries(records);
        } else {
          row.boundary_efficacy = eff;
          row.queries_mean_boundary = mean_queries(records);
        }
      }

      note(where + ": membership inference");
      Oracle target_oracle = make_oracle(net, spec, mix(cfg.seed, 802), cfg.top_k_truncation);
      const MiOutcome mi = run_membership_inference(cfg, spec, target_oracle, data);
      row.mi_accuracy = 100.0 * mi.accuracy;
      row.mi_auc = mi.roc.auc;
      out.rows.push_back(row);
      out.rocs[row.dataset].push_back({spec.label(), mi.roc});
    } catch (const Error& e) {
      // Keep the exception category so the CLI can map it to an exit code.
      const std::string msg = where + ": " + e.what();
      if (dynamic_cast<const DivergenceError*>(&e)) throw DivergenceError(msg);
      if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
      if (dynamic_cast<const DataError*>(&e)) throw DataError(msg);
      if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(msg);
      throw Error(msg);
    }
  }
  return out;
}

void write_outputs(const ExperimentOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  emit_csv(out.rows, dir / "results.csv");
  for (const auto& [dataset, curves] : out.rocs) {
    for (const auto& c : curves) write_roc_csv(c.roc, dir / ("roc_" + dataset + "_" + c.name + ".csv"));
    emit_roc_svg(curves, dir / ("roc_" + dataset + ".svg"), "Membership inference ROC (" + dataset + ")");
  }
}

}  // namespace bsb
