#pragma once
// Independent reference computations shared by the unit and acceptance
// suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bsb/attacks.hpp"
#include "bsb/network.hpp"
#include "bsb/oracle.hpp"
#include "bsb/report.hpp"

namespace bsb::check {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double pick_real(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Worst per-tensor relative error ||analytic - numeric|| / max(||analytic||,
// ||numeric||) over every parameter tensor, numeric by central differences.
// In train mode every loss evaluation replays the dropout masks drawn from
// `mask_seed`.
inline double gradient_error(Network net, const Tensor& x, const std::vector<int>& labels,
                             Mode mode, std::uint64_t mask_seed, double h = 1e-5) {
  Rng rng(mask_seed);
  const Gradients g = loss_and_gradients(net, x, labels, mode, &rng);
  auto loss = [&](const Network& n) {
    Rng r(mask_seed);
    return cross_entropy(forward(n, x, mode, &r), labels);
  };
  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    Eigen::VectorXd numeric(static_cast<Eigen::Index>(t.size()));
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double orig = t[j];
      t[j] = orig + h;
      const double up = loss(net);
      t[j] = orig - h;
      const double down = loss(net);
      t[j] = orig;
      numeric[static_cast<Eigen::Index>(j)] = (up - down) / (2 * h);
    }
    const Eigen::VectorXd& analytic = g.params[p].data();
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    worst = std::max(worst, (analytic - numeric).norm() / scale);
  }
  return worst;
}

// Random small network exercising one layer kind, with a matching random
// batch and labels.
struct GradCase {
  Network net;
  Tensor x;
  std::vector<int> labels;
  Mode mode = Mode::eval;
};

inline const std::vector<std::string>& layer_kinds() {
  static const std::vector<std::string> kinds{"dense", "conv2d", "max_pool", "relu",
                                              "flatten", "dropout", "residual"};
  return kinds;
}

inline GradCase random_grad_case(const std::string& kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t classes = pick(rng, 2, 4);
  const std::size_t batch = pick(rng, 1, 3);
  std::vector<Layer> layers;
  Shape input;
  Mode mode = Mode::eval;
  if (kind == "dense") {
    const std::size_t in = pick(rng, 2, 6);
    input = {in};
    layers = {dense(in, classes)};
  } else if (kind == "conv2d") {
    const std::size_t c = pick(rng, 1, 2), oc = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t side = pick(rng, std::max<std::size_t>(k, 3), 6);
    input = {c, side, side};
    Layer conv = conv2d(c, oc, k, stride, pad);
    const Shape out = output_shape(conv, input);
    layers = {conv, flatten(), dense(shape_size(out), classes)};
  } else if (kind == "max_pool") {
    const std::size_t c = pick(rng, 1, 2), side = pick(rng, 4, 7), k = pick(rng, 2, 3);
    input = {c, side, side};
    Layer conv = conv2d(c, 2, 3, 1, 1);
    Layer pool = max_pool(k);
    const Shape out = output_shape(pool, output_shape(conv, input));
    layers = {conv, pool, flatten(), dense(shape_size(out), classes)};
  } else if (kind == "relu") {
    const std::size_t in = pick(rng, 2, 6), hidden = pick(rng, 3, 8);
    input = {in};
    layers = {dense(in, hidden), relu(), dense(hidden, classes)};
  } else if (kind == "flatten") {
    const std::size_t c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    input = {c, h, w};
    layers = {flatten(), dense(c * h * w, classes)};
  } else if (kind == "dropout") {
    const std::size_t in = pick(rng, 2, 6), hidden = pick(rng, 4, 10);
    input = {in};
    layers = {dense(in, hidden), dropout(pick_real(rng, 0.1, 0.7)), dense(hidden, classes)};
    mode = Mode::train;
  } else if (kind == "residual") {
    if (pick(rng, 0, 1) == 0) {
      const std::size_t d = pick(rng, 2, 6);
      input = {d};
      layers = {residual({dense(d, d), relu(), dense(d, d)}), dense(d, classes)};
    } else {
      const std::size_t c = pick(rng, 1, 2), side = pick(rng, 3, 5);
      input = {c, side, side};
      layers = {conv2d(c, 2, 3, 1, 1),
                residual({conv2d(2, 2, 3, 1, 1), relu(), conv2d(2, 2, 3, 1, 1)}), flatten(),
                dense(2 * side * side, classes)};
    }
  } else {
    throw ValidationError("unknown layer kind " + kind);
  }

  Network net(std::move(layers), input, classes);
  init_he_uniform(net, seed + 1);
  for (Tensor* p : net.parameters()) {
    for (auto& v : p->data()) v += 0.1 * std::normal_distribution<double>()(rng);
  }
  Shape xs{batch};
  xs.insert(xs.end(), input.begin(), input.end());
  GradCase c{std::move(net), standard_normal(xs, rng), {}, mode};
  for (std::size_t i = 0; i < batch; ++i) {
    c.labels.push_back(static_cast<int>(pick(rng, 0, classes - 1)));
  }
  return c;
}

// Worst gradient error over `instances` random cases of one layer kind.
inline double worst_gradient_error(const std::string& kind, std::size_t instances,
                                   std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    GradCase c = random_grad_case(kind, seed * 1000 + i);
    worst = std::max(worst, gradient_error(c.net, c.x, c.labels, c.mode, seed + i));
  }
  return worst;
}

// Two-class linear classifier on R^2: class 0 where w.x + b > 0.
struct Hyperplane {
  Eigen::Vector2d w;
  double b = 0.0;
  double signed_distance(const Tensor& x) const {
    return (w.dot(Eigen::Vector2d(x[0], x[1])) + b) / w.norm();
  }
};

inline Network linear_classifier(const Hyperplane& h) {
  Network net({dense(2, 2)}, {2}, 2);
  auto& d = net.layers()[0].as<Dense>();
  d.weight[0] = h.w[0];
  d.weight[1] = h.w[1];
  d.weight[2] = -h.w[0];
  d.weight[3] = -h.w[1];
  d.bias[0] = h.b;
  d.bias[1] = -h.b;
  return net;
}

inline Oracle linear_oracle(const Hyperplane& h) {
  return Oracle(deterministic_predictor(std::make_shared<const Network>(linear_classifier(h))));
}

// A random hyperplane through the box interior and a point at distance
// `gap` from it whose projection onto the plane lies inside [0, 1]^2, so the
// minimal perturbation is exactly `gap`.
struct GeometryCase {
  Hyperplane plane;
  Tensor x;
  double gap = 0.0;
};

inline GeometryCase random_geometry_case(std::uint64_t seed) {
  Rng rng(seed);
  const double angle = pick_real(rng, 0.0, 2 * M_PI);
  const Eigen::Vector2d w(std::cos(angle), std::sin(angle));
  for (;;) {
    const Eigen::Vector2d foot(pick_real(rng, 0.3, 0.7), pick_real(rng, 0.3, 0.7));
    const double gap = pick_real(rng, 0.1, 0.25);
    const double side = pick(rng, 0, 1) ? 1.0 : -1.0;
    const Eigen::Vector2d x = foot + side * gap * w;
    if ((x.array() < 0.05).any() || (x.array() > 0.95).any()) continue;
    Tensor t({1, 2});
    t[0] = x[0];
    t[1] = x[1];
    return {{w, -w.dot(foot)}, t, gap};
  }
}

// P(member score > non-member score) + 0.5 P(equal), by enumerating pairs.
inline double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// The twelve per-model measurements of the reference results table.
inline std::vector<ResultRow> reference_rows() {
  auto row = [](std::string ds, std::string model, bool bayes, double acc, double hsj,
                double boundary, double mi) {
    ResultRow r;
    r.dataset = std::move(ds);
    r.model = std::move(model);
    r.bayesian = bayes;
    r.test_accuracy = acc;
    r.hsj_efficacy = hsj;
    r.boundary_efficacy = boundary;
    r.mi_accuracy = mi;
    return r;
  };
  return {
      row("mnist", "lenet5", false, 98.48, 58, 52, 63.91),
      row("mnist", "lenet5", true, 98.01, 52, 50, 64.72),
      row("mnist", "resnet", false, 98.66, 64, 70, 62.49),
      row("mnist", "resnet", true, 98.02, 66, 62, 73.38),
      row("cifar10", "lenet5", false, 58.43, 94, 92, 58.86),
      row("cifar10", "lenet5", true, 58.56, 85, 87, 66.85),
      row("cifar10", "resnet", false, 75.40, 69, 71, 72.10),
      row("cifar10", "resnet", true, 73.20, 60, 57, 77.16),
  };
}

}  // namespace bsb::check
