#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "bsb/model_zoo.hpp"
#include "bsb/oracle.hpp"
#include "bsb/train.hpp"

namespace bsb {

struct ShadowSplit {
  Dataset shadow_train;
  Dataset shadow_out;
};

// Seeded partition of the attacker's pool: ceil(frac * n) samples to train
// the shadow model, the rest held out as "out" examples.
ShadowSplit make_shadow_split(const Dataset& pool, double frac, std::uint64_t seed);

// Trains a shadow model of the same family and Bayesian flag as the target.
// The held-out half doubles as the early-stopping validation set.
Network train_shadow(const ModelSpec& spec, const ShadowSplit& split,
                     const TrainConfig& cfg, std::uint64_t init_seed);

// Rows are sorted top-k posterior vectors, labels are 1 for members ("in")
// and 0 for non-members ("out").
struct AttackDataset {
  RowMatrix<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t k() const { return static_cast<std::size_t>(features.cols()); }
};

// The k largest posterior entries in descending order, zero padded when the
// posterior has fewer than k classes.
Eigen::VectorXd top_k_feature(const Eigen::Ref<const Eigen::VectorXd>& posterior,
                              std::size_t k);

// Featurises member and non-member posteriors ([n, classes] each) and
// balances the classes by keeping the first min(n_in, n_out) of each.
AttackDataset make_attack_dataset(const Tensor& in_posteriors,
                                  const Tensor& out_posteriors, std::size_t k);

// Queries the shadow model (MC-averaged over `samples` passes when it has
// dropout) on both halves of the split.
AttackDataset build_attack_dataset(const Network& shadow, const ShadowSplit& split,
                                   std::size_t k, std::size_t samples,
                                   std::uint64_t seed);

// k -> 64 ReLU -> 2 classifier trained with early stopping on a stratified
// 20% hold-out of `ds`.
struct AttackClassifier {
  Network net;
  double holdout_accuracy = 0.0;
};
AttackClassifier train_attack_classifier(const AttackDataset& ds, const TrainConfig& cfg);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr)
  double auc = 0.0;

  // Throws ValidationError unless points are sorted by FPR, lie in the unit
  // square, start at (0,0) and end at (1,1), and auc is in [0, 1].
  void validate() const;
};

// Sweeps every distinct score as a threshold (score >= t predicts member);
// AUC by the trapezoidal rule.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path);

struct MiEvaluation {
  double accuracy = 0.0;  // fraction, threshold 0.5 on the member score
  RocCurve roc;
  std::vector<double> scores;
  std::vector<int> labels;
};

// Member-class probability of the attacker for every featurised posterior.
std::vector<double> member_scores(const Network& attacker, const RowMatrix<double>& features);

// Scores the target's answers for members and non-members (truncated to the
// smaller set) with the attacker.
MiEvaluation evaluate_mi(const Network& attacker, Oracle& target, const Dataset& members,
                         const Dataset& non_members, std::size_t k);

}  // namespace bsb
