#include "bsb/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace bsb {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarSide = 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at,
                        const char* what) {
  if (bytes.size() < at + 4) {
    throw FormatError(std::string(what) + ": truncated header (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex;
  s.width(8);
  s.fill('0');
  s << v;
  return s.str();
}

void check_magic(std::uint32_t actual, std::uint32_t expected, const char* what) {
  if (actual != expected) {
    throw FormatError(std::string(what) + ": bad magic " + hex32(actual) +
                      ", expected " + hex32(expected));
  }
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw ValidationError("dataset is empty");
  if (images.rank() != 4 || images.batch() != labels.size())
    throw ValidationError("dataset images " + shape_string(images.shape()) +
                          " do not match " + std::to_string(labels.size()) + " labels");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count)
      throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(class_count) + ")");
  }
  if (images.data().minCoeff() < 0.0 || images.data().maxCoeff() > 1.0)
    throw ValidationError("pixel values outside [0, 1]");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Shape s = images.shape();
  s[0] = indices.size();
  Dataset out{Tensor(std::move(s)), {}, class_count};
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.images.sample(i) = images.sample(indices[i]);
    out.labels.push_back(labels.at(indices[i]));
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.image_shape() != b.image_shape() || a.class_count != b.class_count)
    throw ValidationError("concat: datasets are not compatible");
  Shape s = a.images.shape();
  s[0] = a.size() + b.size();
  Dataset out{Tensor(std::move(s)), a.labels, a.class_count};
  out.images.data().head(a.images.data().size()) = a.images.data();
  out.images.data().tail(b.images.data().size()) = b.images.data();
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Dataset parse_idx(std::span<const std::uint8_t> images,
                  std::span<const std::uint8_t> labels) {
  check_magic(read_be32(images, 0, "idx images"), kIdxImagesMagic, "idx images");
  check_magic(read_be32(labels, 0, "idx labels"), kIdxLabelsMagic, "idx labels");
  const std::size_t n = read_be32(images, 4, "idx images");
  const std::size_t rows = read_be32(images, 8, "idx images");
  const std::size_t cols = read_be32(images, 12, "idx images");
  const std::size_t n_labels = read_be32(labels, 4, "idx labels");
  if (n != n_labels)
    throw DataError("idx: " + std::to_string(n) + " images but " +
                    std::to_string(n_labels) + " labels");
  if (n == 0) throw DataError("idx: no samples");
  const std::size_t pixels = n * rows * cols;
  if (images.size() < 16 + pixels)
    throw FormatError("idx images: expected " + std::to_string(16 + pixels) +
                      " bytes, file has " + std::to_string(images.size()));
  if (labels.size() < 8 + n)
    throw FormatError("idx labels: expected " + std::to_string(8 + n) +
                      " bytes, file has " + std::to_string(labels.size()));

  Dataset d{Tensor({n, 1, rows, cols}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < pixels; ++i) d.images[i] = images[16 + i] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = labels[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  try {
    return parse_idx(images, labels);
  } catch (const FormatError& e) {
    throw FormatError(images_path.string() + ": " + e.what());
  }
}

void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  if (d.images.rank() != 4 || d.images.dim(1) != 1)
    throw ValidationError("save_idx: only single-channel datasets fit the IDX format");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img) throw DataError("cannot write " + images_path.string());
  if (!lab) throw DataError("cannot write " + labels_path.string());
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(d.size()));
  write_be32(img, static_cast<std::uint32_t>(d.images.dim(2)));
  write_be32(img, static_cast<std::uint32_t>(d.images.dim(3)));
  std::vector<char> px(d.images.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(d.images[i], 0.0, 1.0);
    px[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  img.write(px.data(), static_cast<std::streamsize>(px.size()));
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw DataError("write failed for " + images_path.string());
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw FormatError("cifar: length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of 3073");
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d{Tensor({n, 3, kCifarSide, kCifarSide}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("cifar: record " + std::to_string(i) + " has label " +
                      std::to_string(rec[0]));
    d.labels[i] = rec[0];
    auto px = d.images.sample(i);
    for (std::size_t j = 0; j + 1 < kCifarRecord; ++j) px[static_cast<Eigen::Index>(j)] = rec[1 + j] / 255.0;
  }
  return d;
}

Dataset load_cifar_binary(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw DataError("cifar: no batch files given");
  Dataset out;
  for (const auto& p : paths) {
    Dataset part;
    try {
      part = parse_cifar_binary(read_file(p));
    } catch (const FormatError& e) {
      throw FormatError(p.string() + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(p.string() + ": " + e.what());
    }
    out = out.labels.empty() ? std::move(part) : concat(out, part);
  }
  return out;
}

Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t side,
                    double noise_sigma, std::uint64_t seed) {
  if (classes < 2 || n < classes || side < 4 || !(noise_sigma >= 0.0))
    throw ValidationError("synth_blobs: need classes >= 2, n >= classes, side >= 4, sigma >= 0");

  // Class centres are spread on a circle around the canvas centre.
  const double c0 = (static_cast<double>(side) - 1.0) / 2.0;
  const double ring = static_cast<double>(side) * 0.3;
  const double width = std::max(1.0, static_cast<double>(side) / 8.0);
  std::vector<Eigen::VectorXd> templates;
  for (std::size_t c = 0; c < classes; ++c) {
    const double a = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
    const double cy = c0 + ring * std::sin(a), cx = c0 + ring * std::cos(a);
    Eigen::VectorXd t(static_cast<Eigen::Index>(side * side));
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        t[static_cast<Eigen::Index>(y * side + x)] =
            std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
      }
    }
    templates.push_back(std::move(t));
  }

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d{Tensor({n, 1, side, side}), std::vector<int>(n), classes};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i % classes;
    d.labels[i] = static_cast<int>(c);
    auto px = d.images.sample(i);
    px = templates[c];
    if (noise_sigma > 0.0) {
      for (auto& v : px) v += noise_sigma * noise(rng);
    }
    px = px.cwiseMax(0.0).cwiseMin(1.0);
  }
  return d;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend
  // on the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::vector<Dataset> split(const Dataset& d, std::span<const double> fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) throw ValidationError("split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ValidationError("split: fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw ValidationError("split: fractions sum above 1");

  // A fraction total below one leaves an implicit discarded remainder part.
  std::vector<double> fr(fractions.begin(), fractions.end());
  const bool rest = total < 1.0 - 1e-12;
  if (rest) fr.push_back(1.0 - total);
  const std::size_t np = fr.size();

  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

  const auto perm = seeded_permutation(d.size(), seed);
  std::vector<std::size_t> rank(d.size());
  for (std::size_t i = 0; i < perm.size(); ++i) rank[perm[i]] = i;

  // Floor each share of n; `left` members remain for the largest remainders.
  struct Shares {
    std::vector<std::size_t> counts;
    std::vector<double> rem;
    std::size_t left = 0;
  };
  auto apportion = [&](std::size_t n) {
    Shares sh{std::vector<std::size_t>(np), std::vector<double>(np), 0};
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < np; ++p) {
      const double want = fr[p] * static_cast<double>(n);
      sh.counts[p] = static_cast<std::size_t>(std::floor(want + 1e-9));
      sh.rem[p] = want - static_cast<double>(sh.counts[p]);
      assigned += sh.counts[p];
    }
    sh.left = n - std::min(n, assigned);
    return sh;
  };
  auto by_remainder = [&](const std::vector<double>& rem) {
    std::vector<std::size_t> order(np);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    return order;
  };

  // Overall part sizes, then what each part still needs beyond the
  // per-class floors.
  Shares global = apportion(d.size());
  std::vector<std::size_t> deficit = global.counts;
  const auto global_order = by_remainder(global.rem);
  for (std::size_t r = 0; r < global.left; ++r) ++deficit[global_order[r % np]];
  std::vector<Shares> per_class;
  for (const auto& members : by_class) {
    per_class.push_back(apportion(members.size()));
    for (std::size_t p = 0; p < np; ++p)
      deficit[p] -= std::min(deficit[p], per_class.back().counts[p]);
  }

  // Each class's leftovers go to distinct parts, preferring parts still
  // short of their overall size, so per-class counts stay within one of
  // proportional and part sizes match the overall apportionment.
  std::vector<std::vector<std::size_t>> parts(np);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
    Shares& sh = per_class[c];
    auto order = by_remainder(sh.rem);
    std::stable_partition(order.begin(), order.end(), [&](std::size_t p) { return deficit[p] > 0; });
    for (std::size_t r = 0; r < sh.left; ++r) {
      const std::size_t p = order[r % np];
      ++sh.counts[p];
      if (deficit[p] > 0) --deficit[p];
    }
    std::size_t at = 0;
    for (std::size_t p = 0; p < np; ++p) {
      parts[p].insert(parts[p].end(), members.begin() + static_cast<std::ptrdiff_t>(at),
                      members.begin() + static_cast<std::ptrdiff_t>(at + sh.counts[p]));
      at += sh.counts[p];
    }
  }
  if (rest) parts.pop_back();

  std::vector<Dataset> out;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].empty())
      throw ValidationError("split: part " + std::to_string(p) + " is empty");
    std::sort(parts[p].begin(), parts[p].end(),
              [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
    out.push_back(d.subset(parts[p]));
  }
  return out;
}

}  // namespace bsb
