#include "bsb/model_zoo.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace bsb {
namespace {

constexpr char kMagic[4] = {'B', 'S', 'B', 'M'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kMcChunkRows = 512;

class Builder {
 public:
  Builder(const ModelSpec& spec) : spec_(spec) {}

  void weight(std::vector<Layer>& into, Layer layer) {
    into.push_back(std::move(layer));
    if (spec_.bayesian) into.push_back(dropout(spec_.dropout_rate));
  }

 private:
  const ModelSpec& spec_;
};

std::vector<Layer> lenet5(const ModelSpec& spec) {
  const std::size_t ch = spec.input_shape[0];
  const std::size_t h = spec.input_shape[1], w = spec.input_shape[2];
  const std::size_t fh = (h / 2 - 4) / 2, fw = (w / 2 - 4) / 2;
  Builder b(spec);
  std::vector<Layer> l;
  b.weight(l, conv2d(ch, 6, 5, 1, 2));
  l.push_back(relu());
  l.push_back(max_pool(2));
  b.weight(l, conv2d(6, 16, 5));
  l.push_back(relu());
  l.push_back(max_pool(2));
  l.push_back(flatten());
  b.weight(l, dense(16 * fh * fw, 120));
  l.push_back(relu());
  b.weight(l, dense(120, 84));
  l.push_back(relu());
  b.weight(l, dense(84, spec.num_classes));
  return l;
}

std::vector<Layer> resnet_small(const ModelSpec& spec) {
  constexpr std::size_t kWidth = 16;
  const std::size_t ch = spec.input_shape[0];
  const std::size_t h = (spec.input_shape[1] + 1) / 2, w = (spec.input_shape[2] + 1) / 2;
  Builder b(spec);
  std::vector<Layer> l;
  b.weight(l, conv2d(ch, kWidth, 3, 2, 1));
  l.push_back(relu());
  for (int block = 0; block < 3; ++block) {
    std::vector<Layer> inner;
    b.weight(inner, conv2d(kWidth, kWidth, 3, 1, 1));
    inner.push_back(relu());
    b.weight(inner, conv2d(kWidth, kWidth, 3, 1, 1));
    l.push_back(residual(std::move(inner)));
    l.push_back(relu());
  }
  l.push_back(max_pool(2));
  l.push_back(flatten());
  b.weight(l, dense(kWidth * (h / 2) * (w / 2), spec.num_classes));
  return l;
}

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little ||
                std::endian::native == std::endian::big);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (at_ + sizeof(T) > bytes_.size())
      throw FormatError(path_ + ": truncated model file");
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + at_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    at_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  void expect_magic() {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), kMagic, 4) != 0)
      throw FormatError(path_ + ": not a BSBM model file");
    at_ = 4;
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t at_ = 0;
};

}  // namespace

std::string family_name(Family f) {
  return f == Family::lenet5 ? "lenet5" : "resnet-small";
}

Family parse_family(const std::string& name) {
  if (name == "lenet5" || name == "lenet-5") return Family::lenet5;
  if (name == "resnet-small" || name == "resnet_small") return Family::resnet_small;
  throw ValidationError("unknown model family '" + name + "'");
}

void ModelSpec::validate() const {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ValidationError("dropout rate must lie in [0, 1)");
  if (mc_samples == 0) throw ValidationError("mc_samples must be positive");
  if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
  if (input_shape.size() != 3 || (input_shape[0] != 1 && input_shape[0] != 3))
    throw ValidationError("unsupported input shape " + shape_string(input_shape) +
                          ": expected [1 or 3, height, width]");
  const std::size_t min_side = family == Family::lenet5 ? 12 : 3;
  if (input_shape[1] < min_side || input_shape[2] < min_side)
    throw ValidationError("unsupported input shape " + shape_string(input_shape) + " for " +
                          family_name(family));
}

std::string ModelSpec::label() const {
  return (bayesian ? "bayesian-" : "") + family_name(family);
}

Network build(const ModelSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  auto layers = spec.family == Family::lenet5 ? lenet5(spec) : resnet_small(spec);
  Network net(std::move(layers), spec.input_shape, spec.num_classes);
  init_he_uniform(net, init_seed);
  return net;
}

Tensor mc_predict(const Network& net, const Tensor& x, std::size_t samples, Rng& rng) {
  if (samples == 0) throw ValidationError("mc_predict: sample count must be at least 1");
  if (!net.has_dropout()) return predict_proba(net, x);

  const std::size_t n = x.batch();
  const std::size_t k = net.num_classes();
  Tensor out({n, k});
  // Rows are replicated `samples` times so the dropout passes share GEMMs.
  const std::size_t per_chunk = std::max<std::size_t>(1, kMcChunkRows / samples);
  for (std::size_t b = 0; b < n; b += per_chunk) {
    const std::size_t e = std::min(n, b + per_chunk);
    Shape s = x.shape();
    s[0] = (e - b) * samples;
    Tensor rep(std::move(s));
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t t = 0; t < samples; ++t) rep.sample((i - b) * samples + t) = x.sample(i);
    const Tensor probs = softmax(forward(net, rep, Mode::train, &rng));
    for (std::size_t i = b; i < e; ++i) {
      auto acc = out.sample(i);
      acc.setZero();
      for (std::size_t t = 0; t < samples; ++t) acc += probs.sample((i - b) * samples + t);
      acc /= static_cast<double>(samples);
    }
  }
  return out;
}

double confidence_gap(const Network& net, std::size_t samples,
                      const Dataset& members, const Dataset& non_members,
                      std::uint64_t seed) {
  if (members.size() == 0 || non_members.size() == 0)
    throw ValidationError("confidence_gap: empty member or non-member set");
  // Both sets replay the same mask stream, so equal sets give a zero gap.
  auto mean_max = [&](const Dataset& d) {
    Rng rng(seed);
    const Tensor p = mc_predict(net, d.images, samples, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < p.batch(); ++i) s += p.sample(i).maxCoeff();
    return s / static_cast<double>(p.batch());
  };
  return mean_max(members) - mean_max(non_members);
}

void save_model(const std::filesystem::path& path, const ModelSpec& spec,
                const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(spec.family));
  put<std::uint8_t>(out, spec.bayesian ? 1 : 0);
  put<double>(out, spec.dropout_rate);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.mc_samples));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.num_classes));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.input_shape.size()));
  for (auto d : spec.input_shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  const auto params = net.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->rank()));
    for (auto d : p->shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p->data()) put<double>(out, v);
  }
  if (!out) throw DataError("write failed for " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()},
           path.string());
  r.expect_magic();
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw FormatError(path.string() + ": unsupported model format version " +
                      std::to_string(version));
  LoadedModel m;
  const auto family = r.get<std::uint8_t>();
  if (family > 1) throw FormatError(path.string() + ": unknown family code");
  m.spec.family = static_cast<Family>(family);
  m.spec.bayesian = r.get<std::uint8_t>() != 0;
  m.spec.dropout_rate = r.get<double>();
  m.spec.mc_samples = r.get<std::uint32_t>();
  m.spec.num_classes = r.get<std::uint32_t>();
  m.spec.input_shape.resize(r.get<std::uint32_t>());
  for (auto& d : m.spec.input_shape) d = r.get<std::uint32_t>();
  m.net = build(m.spec, 0);

  auto params = m.net.parameters();
  if (r.get<std::uint32_t>() != params.size())
    throw FormatError(path.string() + ": parameter count does not match the architecture");
  for (auto* p : params) {
    Shape s(r.get<std::uint32_t>());
    for (auto& d : s) d = r.get<std::uint32_t>();
    if (s != p->shape())
      throw FormatError(path.string() + ": parameter shape " + shape_string(s) +
                        " does not match " + shape_string(p->shape()));
    for (auto& v : p->data()) v = r.get<double>();
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after parameters");
  return m;
}

}  // namespace bsb
