#include <doctest.h>

#include <thread>

#include "bsb/attacks.hpp"
#include "bsb/model_zoo.hpp"
#include "bsb/oracle.hpp"

using namespace bsb;

namespace {

// Ignores its input and answers a fixed posterior for every row.
Predictor constant(std::vector<double> p) {
  return [p](const Tensor& batch) {
    Tensor out({batch.batch(), p.size()});
    for (std::size_t i = 0; i < batch.batch(); ++i) {
      for (std::size_t j = 0; j < p.size(); ++j) out[i * p.size() + j] = p[j];
    }
    return out;
  };
}

Tensor row(std::vector<double> v) {
  return Tensor({1, v.size()}, Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

}  // namespace

TEST_CASE("labels and accounting") {
  Oracle o(constant({0.1, 0.7, 0.2}));
  Tensor x({1, 4});
  CHECK(o.query_label(x) == 1);
  CHECK(o.query_label(x) == 1);
  CHECK(o.queries() == 2);
  CHECK(o.query_labels(Tensor({5, 4})) == std::vector<int>(5, 1));
  CHECK(o.queries() == 7);
  CHECK_THROWS_AS(o.query_label(Tensor({2, 4})), DimensionError);
}

TEST_CASE("budget") {
  Oracle o(constant({0.6, 0.4}), {.budget = 5});
  Tensor x({1, 2});
  for (int i = 0; i < 5; ++i) o.query_label(x);
  CHECK(o.remaining() == 0);
  CHECK_THROWS_AS(o.query_label(x), BudgetError);
  CHECK(o.queries() == 5);

  Oracle p(constant({0.6, 0.4}), {.budget = 3});
  CHECK_THROWS_AS(p.query_labels(Tensor({4, 2})), BudgetError);
  CHECK(p.queries() == 0);

  Oracle fresh = o.fresh(10);
  CHECK(fresh.queries() == 0);
  CHECK(fresh.remaining() == 10);
}

TEST_CASE("ledger is exact under concurrent use") {
  Oracle o(constant({0.5, 0.5}), {.budget = 1000});
  std::vector<std::thread> pool;
  std::atomic<int> refused{0};
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&] {
      Tensor x({1, 2});
      for (int i = 0; i < 300; ++i) {
        try {
          o.query_label(x);
        } catch (const BudgetError&) {
          ++refused;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  CHECK(o.queries() == 1000);
  CHECK(refused == 200);
}

TEST_CASE("top-k truncation") {
  CHECK(truncate_top_k(row({0.1, 0.7, 0.2}), 1).data() == Eigen::Vector3d(0, 1, 0));
  Tensor t2 = truncate_top_k(row({0.5, 0.3, 0.2}), 2);
  CHECK(t2[0] == doctest::Approx(0.625));
  CHECK(t2[1] == doctest::Approx(0.375));
  CHECK(t2[2] == 0.0);
  Tensor tie = truncate_top_k(row({0.4, 0.4, 0.2}), 1);
  CHECK(tie.data() == Eigen::Vector3d(1, 0, 0));
  CHECK(truncate_top_k(row({0.2, 0.3, 0.5}), 0) == row({0.2, 0.3, 0.5}));

  Oracle full(constant({0.25, 0.25, 0.5}));
  CHECK(std::abs(full.query_probs(Tensor({1, 3})).sum() - 1.0) < 1e-9);
  Oracle top1(constant({0.25, 0.25, 0.5}), {.top_k = 1, .budget = std::nullopt});
  CHECK(top1.query_probs(Tensor({1, 3})) == Eigen::Vector3d(0, 0, 1));
}

TEST_CASE("domain clipping") {
  Oracle o(constant({0.5, 0.5}));
  Tensor inside = row({0.0, 0.3, 1.0});
  CHECK(o.clip_to_domain(inside) == inside);
  CHECK(o.in_domain(inside));
  Tensor outside = row({1.5, -0.2, 0.5});
  Tensor c = o.clip_to_domain(outside);
  CHECK(c == row({1.0, 0.0, 0.5}));
  CHECK(o.clip_to_domain(c) == c);
  CHECK_FALSE(o.in_domain(outside));
  CHECK(clip(outside, {0.0, 1.0}) == c);
}

TEST_CASE("predictors") {
  ModelSpec spec;
  spec.input_shape = {1, 16, 16};
  spec.num_classes = 4;
  auto plain = std::make_shared<const Network>(build(spec, 1));
  Rng rng(3);
  Tensor x = uniform<double>({2, 1, 16, 16}, 0.0, 1.0, rng);
  CHECK(deterministic_predictor(plain)(x) == predict_proba(*plain, x));

  spec.bayesian = true;
  auto bayes = std::make_shared<const Network>(build(spec, 1));
  Predictor a = mc_predictor(bayes, 20, 5);
  Predictor b = mc_predictor(bayes, 20, 5);
  Tensor first = a(x);
  CHECK(first == b(x));
  CHECK_FALSE(a(x) == first);  // the next call draws fresh masks
  for (std::size_t i = 0; i < first.batch(); ++i) CHECK(std::abs(first.sample(i).sum() - 1) < 1e-9);
}
