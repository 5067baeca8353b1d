#include "bsb/membership.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

namespace bsb {
namespace {

constexpr std::size_t kAttackHidden = 64;

Dataset as_dataset(const AttackDataset& ds) {
  Dataset d{Tensor({ds.size(), ds.k()}), ds.labels, 2};
  d.images.matrix() = ds.features;
  return d;
}

}  // namespace

ShadowSplit make_shadow_split(const Dataset& pool, double frac, std::uint64_t seed) {
  if (pool.size() < 2) throw ValidationError("shadow split needs at least two samples");
  if (!(frac > 0.0 && frac < 1.0)) throw ValidationError("shadow split fraction must lie in (0, 1)");
  const auto n = pool.size();
  auto n_train = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  const auto perm = seeded_permutation(n, seed);
  const std::span<const std::size_t> all(perm);
  return {pool.subset(all.first(n_train)), pool.subset(all.subspan(n_train))};
}

Network train_shadow(const ModelSpec& spec, const ShadowSplit& split,
                     const TrainConfig& cfg, std::uint64_t init_seed) {
  return train(build(spec, init_seed), split.shadow_train, split.shadow_out, cfg).net;
}

Eigen::VectorXd top_k_feature(const Eigen::Ref<const Eigen::VectorXd>& posterior,
                              std::size_t k) {
  std::vector<double> v(posterior.data(), posterior.data() + posterior.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < std::min(k, v.size()); ++i) f[static_cast<Eigen::Index>(i)] = v[i];
  return f;
}

AttackDataset make_attack_dataset(const Tensor& in_posteriors,
                                  const Tensor& out_posteriors, std::size_t k) {
  if (k == 0) throw ValidationError("attack features need k >= 1");
  const std::size_t n = std::min(in_posteriors.batch(), out_posteriors.batch());
  AttackDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(2 * n), static_cast<Eigen::Index>(k));
  ds.labels.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.features.row(static_cast<Eigen::Index>(2 * i)) =
        top_k_feature(in_posteriors.sample(i), k).transpose();
    ds.labels[2 * i] = 1;
    ds.features.row(static_cast<Eigen::Index>(2 * i + 1)) =
        top_k_feature(out_posteriors.sample(i), k).transpose();
    ds.labels[2 * i + 1] = 0;
  }
  return ds;
}

AttackDataset build_attack_dataset(const Network& shadow, const ShadowSplit& split,
                                   std::size_t k, std::size_t samples,
                                   std::uint64_t seed) {
  Rng rng(seed);
  const Tensor in = mc_predict(shadow, split.shadow_train.images, samples, rng);
  const Tensor out = mc_predict(shadow, split.shadow_out.images, samples, rng);
  return make_attack_dataset(in, out, k);
}

AttackClassifier train_attack_classifier(const AttackDataset& ds, const TrainConfig& cfg) {
  if (ds.size() == 0) throw ValidationError("attack dataset is empty");
  const auto members = std::count(ds.labels.begin(), ds.labels.end(), 1);
  if (members == 0 || members == static_cast<std::ptrdiff_t>(ds.size()))
    throw ValidationError("attack dataset needs both member and non-member examples");

  const Dataset all = as_dataset(ds);
  const double fr[] = {0.8, 0.2};
  const auto parts = split(all, fr, cfg.seed ^ 0x5bd1e995ULL);
  Network net({dense(ds.k(), kAttackHidden), relu(), dense(kAttackHidden, 2)}, {ds.k()}, 2);
  init_he_uniform(net, cfg.seed);
  TrainResult r = train(std::move(net), parts[0], parts[1], cfg);
  const double acc = evaluate(r.net, parts[1]).accuracy;
  return {std::move(r.net), acc};
}

void RocCurve::validate() const {
  if (points.size() < 2) throw ValidationError("roc curve needs at least two points");
  if (points.front() != std::pair{0.0, 0.0} || points.back() != std::pair{1.0, 1.0})
    throw ValidationError("roc curve must run from (0,0) to (1,1)");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [f, t] = points[i];
    if (!(f >= 0.0 && f <= 1.0 && t >= 0.0 && t <= 1.0))
      throw ValidationError("roc point outside the unit square");
    if (i && (f < points[i - 1].first || t < points[i - 1].second))
      throw ValidationError("roc points are not monotone");
  }
  if (!(auc >= 0.0 && auc <= 1.0)) throw ValidationError("auc outside [0, 1]");
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ValidationError("roc_curve: need equally many (non-zero) scores and labels");
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0 || negatives == 0)
    throw ValidationError("roc_curve: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] == 1 ? tp : fp) += 1.0;
    }
    roc.points.emplace_back(fp / negatives, tp / positives);
  }
  roc.points.back() = {1.0, 1.0};
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto [f0, t0] = roc.points[i - 1];
    const auto [f1, t1] = roc.points[i];
    roc.auc += (f1 - f0) * (t0 + t1) / 2.0;
  }
  return roc;
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path) {
  roc.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "fpr,tpr\n";
  out.precision(17);
  for (const auto& [f, t] : roc.points) out << f << ',' << t << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<double> member_scores(const Network& attacker, const RowMatrix<double>& features) {
  Tensor batch({static_cast<std::size_t>(features.rows()),
                static_cast<std::size_t>(features.cols())});
  batch.matrix() = features;
  const Tensor p = predict_proba(attacker, batch);
  std::vector<double> s(p.batch());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = p.sample(i)[1];
  return s;
}

MiEvaluation evaluate_mi(const Network& attacker, Oracle& target, const Dataset& members,
                         const Dataset& non_members, std::size_t k) {
  if (members.size() == 0 || non_members.size() == 0)
    throw ValidationError("evaluate_mi: empty member or non-member set");
  const std::size_t n = std::min(members.size(), non_members.size());
  const Tensor in = target.query_probs_batch(members.head(n).images);
  const Tensor out = target.query_probs_batch(non_members.head(n).images);
  const AttackDataset ds = make_attack_dataset(in, out, k);

  MiEvaluation ev;
  ev.scores = member_scores(attacker, ds.features);
  ev.labels = ds.labels;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ev.scores.size(); ++i)
    correct += (ev.scores[i] > 0.5 ? 1 : 0) == ev.labels[i];
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.scores.size());
  ev.roc = roc_curve(ev.scores, ev.labels);
  return ev;
}

}  // namespace bsb
