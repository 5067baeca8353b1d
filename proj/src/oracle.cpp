#include "bsb/oracle.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "bsb/model_zoo.hpp"

namespace bsb {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Predictor deterministic_predictor(std::shared_ptr<const Network> net) {
  return [net = std::move(net)](const Tensor& batch) { return predict_proba(*net, batch); };
}

Predictor mc_predictor(std::shared_ptr<const Network> net, std::size_t samples,
                       std::uint64_t seed) {
  if (samples == 0) throw ValidationError("mc_predictor: sample count must be at least 1");
  auto calls = std::make_shared<std::atomic<std::uint64_t>>(0);
  return [net = std::move(net), samples, seed, calls](const Tensor& batch) {
    Rng rng(mix_seed(seed, calls->fetch_add(1)));
    return mc_predict(*net, batch, samples, rng);
  };
}

QueryLedger::QueryLedger(std::optional<std::size_t> budget) : budget_(budget) {}

void QueryLedger::consume(std::size_t n) {
  std::size_t cur = count_.load();
  do {
    if (budget_ && cur + n > *budget_)
      throw BudgetError("query budget of " + std::to_string(*budget_) + " exhausted");
  } while (!count_.compare_exchange_weak(cur, cur + n));
}

std::size_t QueryLedger::remaining() const {
  if (!budget_) return std::numeric_limits<std::size_t>::max();
  const auto c = count();
  return c >= *budget_ ? 0 : *budget_ - c;
}

Tensor truncate_top_k(const Tensor& posteriors, std::size_t k) {
  if (k == 0) return posteriors;
  Tensor out(posteriors.shape());
  const std::size_t classes = posteriors.sample_size();
  std::vector<std::size_t> order(classes);
  for (std::size_t i = 0; i < posteriors.batch(); ++i) {
    auto row = posteriors.sample(i);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[static_cast<Eigen::Index>(a)] > row[static_cast<Eigen::Index>(b)];
    });
    auto dst = out.sample(i);
    double kept = 0.0;
    for (std::size_t j = 0; j < std::min(k, classes); ++j) {
      const auto c = static_cast<Eigen::Index>(order[j]);
      dst[c] = row[c];
      kept += row[c];
    }
    if (kept > 0.0) {
      dst /= kept;
    } else {
      dst[static_cast<Eigen::Index>(order[0])] = 1.0;
    }
  }
  return out;
}

Oracle::Oracle(Predictor predictor, OracleOptions options)
    : predictor_(std::move(predictor)),
      options_(options),
      ledger_(std::make_shared<QueryLedger>(options.budget)) {
  if (!(options_.lo < options_.hi)) throw ValidationError("oracle domain needs lo < hi");
}

Tensor Oracle::query_probs_batch(const Tensor& batch) {
  ledger_->consume(batch.batch());
  return truncate_top_k(predictor_(batch), options_.top_k);
}

std::vector<int> Oracle::query_labels(const Tensor& batch) {
  const Tensor p = query_probs_batch(batch);
  std::vector<int> out(p.batch());
  for (std::size_t i = 0; i < p.batch(); ++i) out[i] = static_cast<int>(argmax(p.sample(i)));
  return out;
}

int Oracle::query_label(const Tensor& x) {
  if (x.batch() != 1) throw DimensionError("query_label expects a single [1, ...] sample");
  return query_labels(x)[0];
}

Eigen::VectorXd Oracle::query_probs(const Tensor& x) {
  if (x.batch() != 1) throw DimensionError("query_probs expects a single [1, ...] sample");
  return query_probs_batch(x).sample(0);
}

Tensor Oracle::clip_to_domain(const Tensor& x) const {
  Tensor y = x;
  y.data() = y.data().cwiseMax(options_.lo).cwiseMin(options_.hi);
  return y;
}

bool Oracle::in_domain(const Tensor& x) const {
  return x.size() == 0 ||
         (x.data().minCoeff() >= options_.lo && x.data().maxCoeff() <= options_.hi);
}

Oracle Oracle::fresh(std::optional<std::size_t> budget) const {
  OracleOptions o = options_;
  o.budget = budget;
  return Oracle(predictor_, o);
}

}  // namespace bsb
