#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>

#include "bsb/network.hpp"

namespace bsb {

// Maps a batch [n, input...] to class posteriors [n, classes].
using Predictor = std::function<Tensor(const Tensor&)>;

Predictor deterministic_predictor(std::shared_ptr<const Network> net);

// MC-dropout predictor: every call averages `samples` dropout-active
// passes. Call i draws its masks from a stream derived from (seed, i).
Predictor mc_predictor(std::shared_ptr<const Network> net, std::size_t samples,
                       std::uint64_t seed);

// Counts queries; one query is one prediction for one input, however many
// forward passes the predictor needs for it.
class QueryLedger {
 public:
  explicit QueryLedger(std::optional<std::size_t> budget = std::nullopt);

  // Reserves `n` queries or throws BudgetError without consuming any.
  void consume(std::size_t n = 1);

  std::size_t count() const { return count_.load(); }
  std::optional<std::size_t> budget() const { return budget_; }
  std::size_t remaining() const;

 private:
  std::atomic<std::size_t> count_{0};
  std::optional<std::size_t> budget_;
};

struct OracleOptions {
  double lo = 0.0;
  double hi = 1.0;
  // 0 returns the full posterior; k > 0 keeps the k largest entries and
  // renormalises them.
  std::size_t top_k = 0;
  std::optional<std::size_t> budget;
};

// Keeps the k largest entries of each row (ties toward the lower index),
// zeroes the rest and renormalises.
Tensor truncate_top_k(const Tensor& posteriors, std::size_t k);

// Closed-box view of a model: attackers only see labels or (possibly
// truncated) posteriors, and every query is charged to the ledger.
class Oracle {
 public:
  Oracle(Predictor predictor, OracleOptions options = {});

  // `x` is a single sample shaped [1, input...].
  int query_label(const Tensor& x);
  Eigen::VectorXd query_probs(const Tensor& x);

  // One query per row.
  std::vector<int> query_labels(const Tensor& batch);
  Tensor query_probs_batch(const Tensor& batch);

  Tensor clip_to_domain(const Tensor& x) const;
  bool in_domain(const Tensor& x) const;

  const QueryLedger& ledger() const { return *ledger_; }
  std::size_t queries() const { return ledger_->count(); }
  std::size_t remaining() const { return ledger_->remaining(); }
  const OracleOptions& options() const { return options_; }

  // Same model and options with a fresh ledger.
  Oracle fresh(std::optional<std::size_t> budget) const;

 private:
  Predictor predictor_;
  OracleOptions options_;
  std::shared_ptr<QueryLedger> ledger_;
};

}  // namespace bsb
