#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bsb/tensor.hpp"

namespace bsb {

// Labelled images: [n, channels, height, width] with pixel values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return images.sample_shape(); }

  // Throws ValidationError unless the invariants hold: n > 0, labels in
  // range, pixels in [0, 1], image count equals label count.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

// Concatenates datasets with identical image shape and class count.
Dataset concat(const Dataset& a, const Dataset& b);

// IDX (MNIST) image + label files. Pixels are divided by 255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Writes single-channel datasets as IDX files. Pixels are quantised with
// round(v * 255).
void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

// CIFAR-10 binary batches: 3073-byte records of one label byte followed by
// 1024 R, 1024 G and 1024 B bytes (32 x 32, row-major planes).
Dataset load_cifar_binary(std::span<const std::filesystem::path> paths);

// Byte-level parsers behind the file loaders.
Dataset parse_idx(std::span<const std::uint8_t> images,
                  std::span<const std::uint8_t> labels);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes);

// Desk-scale stand-in corpus: each class is a bright Gaussian blob at a
// class-specific location on a side x side single-channel canvas, plus
// i.i.d. pixel noise, clipped to [0, 1].
Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t side,
                    double noise_sigma, std::uint64_t seed);

// Stratified seeded split into len(fractions) disjoint parts. Each class's
// members are shuffled and handed out in proportion to `fractions`, so
// per-class counts are within one of proportional.
std::vector<Dataset> split(const Dataset& d, std::span<const double> fractions,
                           std::uint64_t seed);

// Deterministic permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace bsb
