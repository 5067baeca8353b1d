#include <doctest.h>

#include <cmath>

#include "bsb/network.hpp"
#include "checks.hpp"

using namespace bsb;

namespace {

Network mlp(std::size_t in, std::size_t hidden, std::size_t classes, std::uint64_t seed,
            double drop = 0.0) {
  std::vector<Layer> layers{dense(in, hidden), relu()};
  if (drop > 0) layers.push_back(dropout(drop));
  layers.push_back(dense(hidden, hidden));
  layers.push_back(relu());
  layers.push_back(dense(hidden, classes));
  Network net(std::move(layers), {in}, classes);
  init_he_uniform(net, seed);
  return net;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.batch() == 2);
  CHECK(t.sample_size() == 3);
  t[4] = 5.0;
  CHECK(t.sample_tensor(1)[1] == 5.0);
  CHECK(t.sample_tensor(1).shape() == Shape{1, 3});
  CHECK_THROWS_AS(Tensor({2, 2}, Eigen::VectorXd::Zero(3)), DimensionError);
  CHECK(argmax(Eigen::Vector3d(0.1, 0.7, 0.2)) == 1);
  CHECK(argmax(Eigen::Vector3d(0.4, 0.4, 0.2)) == 0);
}

TEST_CASE("layer shapes are validated with the offending layer named") {
  CHECK_NOTHROW(Network({dense(4, 3)}, {4}, 3));
  try {
    Network({dense(4, 3), dense(5, 2)}, {4}, 2);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  CHECK_THROWS_AS(Network({dense(4, 3)}, {4}, 2), DimensionError);
  CHECK_THROWS_AS(Network({conv2d(1, 2, 5)}, {1, 3, 3}, 2), DimensionError);
  CHECK_THROWS_AS(Network({residual({dense(4, 3)}), dense(3, 2)}, {4}, 2), DimensionError);
}

TEST_CASE("dropout-free network: train and eval forward agree") {
  Rng rng(3);
  Network net = mlp(5, 8, 3, 1);
  Tensor x = standard_normal({4, 5}, rng);
  Rng masks(9);
  CHECK(forward(net, x, Mode::train, &masks) == forward(net, x, Mode::eval));
}

TEST_CASE("zero dense layer gives zero logits") {
  Network net({dense(6, 4)}, {6}, 4);
  Rng rng(1);
  Tensor x = standard_normal({3, 6}, rng);
  CHECK(forward(net, x, Mode::eval).data().isZero(0.0));
}

TEST_CASE("softmax rows sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Network net = mlp(7, 10, 5, seed);
    Tensor x = standard_normal({6, 7}, rng);
    Tensor p = predict_proba(net, x);
    for (std::size_t i = 0; i < p.batch(); ++i) {
      CHECK(std::abs(p.sample(i).sum() - 1.0) < 1e-12);
    }
  }
  Tensor big({1, 3});
  big[0] = 1000;
  big[1] = -1000;
  Tensor s = softmax(big);
  CHECK(s.all_finite());
  CHECK(s[0] == doctest::Approx(1.0));
}

TEST_CASE("cross entropy") {
  Tensor uniform_logits({2, 7});
  std::vector<int> labels{3, 6};
  CHECK(cross_entropy(uniform_logits, labels) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(uniform_logits, std::vector<int>{0, 7}), ValidationError);

  Network net({dense(2, 2)}, {2}, 2);
  auto& d = net.layers()[0].as<Dense>();
  d.bias[0] = 40;
  d.bias[1] = -40;
  Tensor x({3, 2});
  auto g = loss_and_gradients(net, x, std::vector<int>{0, 0, 0}, Mode::eval);
  CHECK(g.loss < 1e-12);
  for (const auto& p : g.params) CHECK(p.data().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient check for every layer kind") {
  for (const auto& kind : check::layer_kinds()) {
    CAPTURE(kind);
    CHECK(check::worst_gradient_error(kind, 5, 11) < 1e-4);
  }
}

TEST_CASE("residual block with a zero inner stack is the identity") {
  Network net({residual({dense(4, 4)}), dense(4, 2)}, {4}, 2);
  auto& head = net.layers()[1].as<Dense>();
  Rng rng(5);
  head.weight = standard_normal({2, 4}, rng);
  Tensor x = standard_normal({3, 4}, rng);
  Network plain({dense(4, 2)}, {4}, 2);
  plain.layers()[0] = head;
  CHECK(forward(net, x, Mode::eval) == forward(plain, x, Mode::eval));
}

TEST_CASE("dropout: identity in eval, unbiased in train") {
  Network net({dropout(0.4), dense(200, 2)}, {200}, 2);
  auto& d = net.layers()[1].as<Dense>();
  d.weight = Tensor::filled({2, 200}, 0.0);
  for (std::size_t j = 0; j < 200; ++j) d.weight[j] = 1.0;  // logit 0 = sum of inputs
  Tensor x = Tensor::filled({1, 200}, 1.0);
  CHECK(forward(net, x, Mode::eval)[0] == doctest::Approx(200.0));

  Rng rng(2);
  double total = 0.0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) total += forward(net, x, Mode::train, &rng)[0];
  // Per-pass std is sqrt(200 * 0.4 / 0.6) ~ 11.5, so the mean is within ~0.26.
  CHECK(std::abs(total / reps - 200.0) < 1.5);

  Network zero({dropout(0.0), dense(3, 2)}, {3}, 2);
  init_he_uniform(zero, 1);
  Tensor y = standard_normal({2, 3}, rng);
  CHECK(forward(zero, y, Mode::train, &rng) == forward(zero, y, Mode::eval));
}

TEST_CASE("train-mode forward is deterministic for a fixed mask stream") {
  Network net = mlp(5, 16, 3, 4, 0.5);
  Rng rng(0);
  Tensor x = standard_normal({4, 5}, rng);
  Rng a(77), b(77), c(78);
  CHECK(forward(net, x, Mode::train, &a) == forward(net, x, Mode::train, &b));
  CHECK_FALSE(forward(net, x, Mode::train, &a) == forward(net, x, Mode::train, &c));
}

TEST_CASE("sgd step") {
  Network net({dense(1, 1), dense(1, 2)}, {1}, 2);
  net.layers()[0].as<Dense>().weight[0] = 1.0;
  Gradients g;
  for (const Tensor* p : std::as_const(net).parameters()) g.params.emplace_back(p->shape());
  g.params[0][0] = 2.0;
  sgd_step(net, g, 0.1);
  CHECK(net.layers()[0].as<Dense>().weight[0] == doctest::Approx(0.8));

  Network before = mlp(3, 4, 2, 9);
  Network after = before;
  Rng rng(1);
  Tensor x = standard_normal({5, 3}, rng);
  std::vector<int> labels{0, 1, 1, 0, 1};
  auto grads = loss_and_gradients(after, x, labels, Mode::eval);
  sgd_step(after, grads, 0.0);
  for (std::size_t i = 0; i < before.parameters().size(); ++i) {
    CHECK(*before.parameters()[i] == *after.parameters()[i]);
  }
  sgd_step(after, grads, 0.05);
  CHECK(cross_entropy(forward(after, x, Mode::eval), labels) < grads.loss);

  g.params.pop_back();
  CHECK_THROWS_AS(sgd_step(net, g, 0.1), DimensionError);
}
