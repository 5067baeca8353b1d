#pragma once

#include <cstdint>
#include <vector>

#include "bsb/datasets.hpp"
#include "bsb/network.hpp"

namespace bsb {

struct TrainConfig {
  double learning_rate = 0.02;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;
  std::size_t early_stop_patience = 5;
  double momentum = 0.0;
  std::uint64_t seed = 0;

  // max_epochs may be zero (no training); everything else must be positive
  // and patience may not exceed a non-zero max_epochs.
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

// Mini-batch SGD with early stopping on validation cross-entropy. The
// parameters from the best validation epoch are returned. Shuffling and
// dropout masks both come from `cfg.seed`.
TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction in [0, 1]
};

// Deterministic (eval-mode) loss and accuracy, batched.
Evaluation evaluate(const Network& net, const Dataset& d,
                    std::size_t batch_size = 256);

// Eval-mode predicted labels.
std::vector<int> predict_labels(const Network& net, const Tensor& images,
                                std::size_t batch_size = 256);

}  // namespace bsb
