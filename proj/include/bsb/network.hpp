#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bsb/tensor.hpp"

namespace bsb {

enum class Mode { train, eval };

struct Layer;

// y = x W^T + b. weight is [out, in], bias is [out].
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;
  Tensor bias;
};

// 2D convolution over [n, channels, height, width]. weight is stored as
// [out_ch, in_ch * kernel * kernel] so a sample's output is one GEMM
// against its im2col matrix.
struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  Tensor weight;
  Tensor bias;
};

// Non-overlapping k x k max pooling; trailing rows/cols that do not fill a
// window are dropped.
struct MaxPool {
  std::size_t k = 2;
};

struct ReLU {};
struct Flatten {};

// Inverted dropout: in train mode each activation is zeroed with
// probability `rate` and survivors are scaled by 1 / (1 - rate).
struct Dropout {
  double rate = 0.0;
};

// out = x + inner(x). The inner stack must preserve the input shape.
struct ResidualBlock {
  std::vector<Layer> inner;
};

struct Layer {
  using Kind =
      std::variant<Dense, Conv2d, MaxPool, ReLU, Flatten, Dropout, ResidualBlock>;
  Kind kind;

  Layer() = default;
  template <typename T>
  Layer(T k) : kind(std::move(k)) {}  // NOLINT(google-explicit-constructor)

  template <typename T>
  bool is() const { return std::holds_alternative<T>(kind); }
  template <typename T>
  const T& as() const { return std::get<T>(kind); }
  template <typename T>
  T& as() { return std::get<T>(kind); }
};

std::string layer_name(const Layer& layer);
bool is_weight_layer(const Layer& layer);

// Layer factories. Weight tensors start at zero; see `init_he_uniform`.
Layer dense(std::size_t in, std::size_t out);
Layer conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
             std::size_t stride = 1, std::size_t pad = 0);
Layer max_pool(std::size_t k);
Layer relu();
Layer flatten();
Layer dropout(double rate);
Layer residual(std::vector<Layer> inner);

class Network {
 public:
  Network() = default;
  // Validates that consecutive layer shapes agree and that the final
  // output is a [num_classes] logit vector.
  Network(std::vector<Layer> layers, Shape input_shape, std::size_t num_classes);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }

  // Weight and bias tensors in declaration order (depth first through
  // residual blocks). Gradients use the same order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  bool has_dropout() const;

 private:
  std::vector<Layer> layers_;
  Shape input_shape_;
  std::size_t num_classes_ = 0;
};

// Per-sample output shape of `layer` given a per-sample input shape.
Shape output_shape(const Layer& layer, const Shape& in);

// He-uniform initialisation of every weight tensor (limit sqrt(6 / fan_in)),
// zero biases.
void init_he_uniform(Network& net, std::uint64_t seed);

// Per-layer activations and masks recorded by a forward pass so that the
// backward pass can reuse exactly the same dropout masks.
struct LayerTrace {
  Tensor input;
  Tensor mask;
  std::vector<std::uint32_t> argmax;
  std::vector<LayerTrace> inner;
};

struct ForwardPass {
  std::vector<LayerTrace> traces;
  Tensor logits;
};

// Logits [n, num_classes] for a batch [n, input_shape...]. `rng` is only
// consulted in train mode and may be null in eval mode.
Tensor forward(const Network& net, const Tensor& batch, Mode mode,
               Rng* rng = nullptr);
ForwardPass forward_traced(const Network& net, const Tensor& batch, Mode mode,
                           Rng* rng = nullptr);

// Row-wise class posteriors.
Tensor predict_proba(const Network& net, const Tensor& batch);

struct Gradients {
  double loss = 0.0;
  std::vector<Tensor> params;
};

// Mean softmax cross-entropy of `logits` against `labels`.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

Gradients backward(const Network& net, const ForwardPass& pass,
                   std::span<const int> labels);

// forward_traced + backward.
Gradients loss_and_gradients(const Network& net, const Tensor& batch,
                             std::span<const int> labels, Mode mode,
                             Rng* rng = nullptr);

// Plain SGD: p <- p - lr * g.
void sgd_step(Network& net, const Gradients& grads, double lr);

}  // namespace bsb
