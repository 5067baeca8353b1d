#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bsb/datasets.hpp"
#include "bsb/network.hpp"

namespace bsb {

enum class Family : std::uint8_t { lenet5 = 0, resnet_small = 1 };

std::string family_name(Family f);
Family parse_family(const std::string& name);

struct ModelSpec {
  Family family = Family::lenet5;
  bool bayesian = false;
  double dropout_rate = 0.5;
  std::size_t mc_samples = 30;
  Shape input_shape{1, 28, 28};
  std::size_t num_classes = 10;

  void validate() const;
  // "lenet5", "bayesian-resnet-small", ...
  std::string label() const;
};

// LeNet-5 style: conv5x5(6)/pool/conv5x5(16)/pool/dense120/dense84/dense.
// ResNet-small: conv3x3(16, stride 2) + three two-conv residual blocks +
// 2x2 pooling + dense head. All activations are ReLU. Bayesian variants
// put Dropout(p) right after every conv and dense layer, the output layer
// included.
Network build(const ModelSpec& spec, std::uint64_t init_seed);

// Mean of `samples` dropout-active softmax outputs for every row of `x`
// ([n, input...] -> [n, classes]). A network without dropout yields its
// deterministic softmax after a single pass.
Tensor mc_predict(const Network& net, const Tensor& x, std::size_t samples,
                  Rng& rng);

// Mean max-posterior over `members` minus the same over `non_members`.
double confidence_gap(const Network& net, std::size_t samples,
                      const Dataset& members, const Dataset& non_members,
                      std::uint64_t seed);

// Versioned little-endian model file: "BSBM", format version, the spec
// fields, then every parameter tensor in declaration order.
void save_model(const std::filesystem::path& path, const ModelSpec& spec,
                const Network& net);

struct LoadedModel {
  ModelSpec spec;
  Network net;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace bsb
