#include "bsb/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bsb {
namespace {

Tensor gather(const Tensor& images, std::span<const std::size_t> idx) {
  Shape s = images.shape();
  s[0] = idx.size();
  Tensor out(std::move(s));
  for (std::size_t i = 0; i < idx.size(); ++i) out.sample(i) = images.sample(idx[i]);
  return out;
}

Tensor slice(const Tensor& images, std::size_t begin, std::size_t end) {
  Shape s = images.shape();
  s[0] = end - begin;
  const auto m = images.sample_size();
  return Tensor(std::move(s), images.data().segment(static_cast<Eigen::Index>(begin * m),
                                                    static_cast<Eigen::Index>((end - begin) * m)));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (early_stop_patience == 0) throw ValidationError("early_stop_patience must be positive");
  if (max_epochs > 0 && early_stop_patience > max_epochs)
    throw ValidationError("early_stop_patience exceeds max_epochs");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
}

std::vector<int> predict_labels(const Network& net, const Tensor& images,
                                std::size_t batch_size) {
  std::vector<int> out;
  out.reserve(images.batch());
  for (std::size_t b = 0; b < images.batch(); b += batch_size) {
    const auto e = std::min(images.batch(), b + batch_size);
    const Tensor logits = forward(net, slice(images, b, e), Mode::eval);
    for (std::size_t i = 0; i < logits.batch(); ++i)
      out.push_back(static_cast<int>(argmax(logits.sample(i))));
  }
  return out;
}

Evaluation evaluate(const Network& net, const Dataset& d, std::size_t batch_size) {
  if (d.size() == 0) throw ValidationError("evaluate: empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    const auto e = std::min(d.size(), b + batch_size);
    const Tensor logits = forward(net, slice(d.images, b, e), Mode::eval);
    const std::span<const int> labels(d.labels.data() + b, e - b);
    loss += cross_entropy(logits, labels) * static_cast<double>(e - b);
    for (std::size_t i = 0; i < logits.batch(); ++i)
      correct += static_cast<int>(argmax(logits.sample(i))) == labels[i];
  }
  const auto n = static_cast<double>(d.size());
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0)
    throw ValidationError("train: empty training or validation set");

  TrainResult result{net, {}, 0};
  if (cfg.max_epochs == 0) return result;

  Rng rng(cfg.seed);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<Tensor> velocity;
  if (cfg.momentum > 0.0) {
    for (const auto* p : net.parameters()) velocity.emplace_back(p->shape());
  }

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const auto e = std::min(order.size(), b + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const Tensor batch = gather(train_set.images, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];

      const ForwardPass pass = forward_traced(net, batch, Mode::train, &rng);
      Gradients g = backward(net, pass, labels);
      if (!std::isfinite(g.loss))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              " (non-finite loss)");
      loss_sum += g.loss * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        correct += static_cast<int>(argmax(pass.logits.sample(i))) == labels[i];

      if (cfg.momentum > 0.0) {
        for (std::size_t p = 0; p < velocity.size(); ++p) {
          velocity[p].data() = cfg.momentum * velocity[p].data() + g.params[p].data();
          g.params[p].data() = velocity[p].data();
        }
      }
      sgd_step(net, g, cfg.learning_rate);
    }

    const Evaluation val = evaluate(net, val_set);
    if (!std::isfinite(val.loss))
      throw DivergenceError("validation loss became non-finite at epoch " +
                            std::to_string(epoch));
    const auto n = static_cast<double>(train_set.size());
    result.history.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n,
                              val.loss, val.accuracy});

    if (val.loss < best_val) {
      best_val = val.loss;
      since_best = 0;
      result.net = net;
      result.best_epoch = epoch;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  return result;
}

}  // namespace bsb
