#include "bsb/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsb {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                        std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Unfolds one [C, H, W] sample into a [C*k*k, OH*OW] row-major matrix.
RowMatrix<double> im2col(const double* img, std::size_t channels,
                         std::size_t height, std::size_t width,
                         const Conv2d& c, std::size_t oh, std::size_t ow) {
  const std::size_t k = c.kernel;
  RowMatrix<double> cols(static_cast<Eigen::Index>(channels * k * k),
                         static_cast<Eigen::Index>(oh * ow));
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((ch * k + ky) * k + kx);
        double* dst = cols.row(row).data();
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * c.stride + ky) -
                                    static_cast<std::ptrdiff_t>(c.pad);
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * c.stride + kx) -
                                      static_cast<std::ptrdiff_t>(c.pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            dst[y * ow + x] =
                inside ? img[(ch * height + static_cast<std::size_t>(iy)) * width +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix<double>& cols, double* img, std::size_t channels,
            std::size_t height, std::size_t width, const Conv2d& c,
            std::size_t oh, std::size_t ow) {
  const std::size_t k = c.kernel;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((ch * k + ky) * k + kx);
        const double* src = cols.row(row).data();
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * c.stride + ky) -
                                    static_cast<std::ptrdiff_t>(c.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * c.stride + kx) -
                                      static_cast<std::ptrdiff_t>(c.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            img[(ch * height + static_cast<std::size_t>(iy)) * width +
                static_cast<std::size_t>(ix)] += src[y * ow + x];
          }
        }
      }
    }
  }
}

Shape with_batch(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void require_rank(const Layer& layer, const Shape& in, std::size_t rank) {
  if (in.size() != rank) {
    throw DimensionError(layer_name(layer) + ": expected rank-" +
                         std::to_string(rank) + " sample, got " +
                         shape_string(in));
  }
}

Tensor forward_layers(const std::vector<Layer>& layers, Tensor x, Mode mode,
                      Rng* rng, std::vector<LayerTrace>* traces);

Tensor forward_layer(const Layer& layer, const Tensor& x, Mode mode, Rng* rng,
                     LayerTrace* trace) {
  const Shape out_sample = output_shape(layer, x.sample_shape());
  const std::size_t n = x.batch();
  if (trace) trace->input = x;

  return std::visit(
      Overloaded{
          [&](const Dense& d) {
            Tensor y(with_batch(n, out_sample));
            auto w = d.weight.matrix();
            y.matrix().noalias() = x.matrix() * w.transpose();
            y.matrix().rowwise() += d.bias.data().transpose();
            return y;
          },
          [&](const Conv2d& c) {
            const std::size_t h = x.dim(2), wd = x.dim(3);
            const std::size_t oh = out_sample[1], ow = out_sample[2];
            Tensor y(with_batch(n, out_sample));
            auto w = c.weight.matrix();
            for (std::size_t i = 0; i < n; ++i) {
              const RowMatrix<double> cols =
                  im2col(x.sample(i).data(), c.in_ch, h, wd, c, oh, ow);
              Eigen::Map<RowMatrix<double>> out(
                  y.sample(i).data(), static_cast<Eigen::Index>(c.out_ch),
                  static_cast<Eigen::Index>(oh * ow));
              out.noalias() = w * cols;
              out.colwise() += c.bias.data();
            }
            return y;
          },
          [&](const MaxPool& p) {
            const std::size_t ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
            const std::size_t oh = out_sample[1], ow = out_sample[2];
            Tensor y(with_batch(n, out_sample));
            std::vector<std::uint32_t> arg(y.size());
            const double* src = x.raw();
            double* dst = y.raw();
            std::size_t o = 0;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t cc = 0; cc < ch; ++cc) {
                const std::size_t plane = (i * ch + cc) * h * wd;
                for (std::size_t yy = 0; yy < oh; ++yy) {
                  for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
                    std::size_t best = plane + (yy * p.k) * wd + xx * p.k;
                    for (std::size_t ky = 0; ky < p.k; ++ky) {
                      for (std::size_t kx = 0; kx < p.k; ++kx) {
                        const std::size_t idx =
                            plane + (yy * p.k + ky) * wd + xx * p.k + kx;
                        if (src[idx] > src[best]) best = idx;
                      }
                    }
                    dst[o] = src[best];
                    arg[o] = static_cast<std::uint32_t>(best);
                  }
                }
              }
            }
            if (trace) trace->argmax = std::move(arg);
            return y;
          },
          [&](const ReLU&) {
            Tensor y = x;
            y.data() = y.data().cwiseMax(0.0);
            return y;
          },
          [&](const Flatten&) { return x.reshaped(with_batch(n, out_sample)); },
          [&](const Dropout& d) {
            if (mode == Mode::eval || d.rate == 0.0) {
              if (trace) trace->mask = Tensor();
              return x;
            }
            if (!rng) throw ValidationError("dropout in train mode needs a random stream");
            Tensor mask(x.shape());
            std::bernoulli_distribution keep(1.0 - d.rate);
            const double scale = 1.0 / (1.0 - d.rate);
            for (auto& m : mask.data()) m = keep(*rng) ? scale : 0.0;
            Tensor y(x.shape(), x.data().cwiseProduct(mask.data()));
            if (trace) trace->mask = std::move(mask);
            return y;
          },
          [&](const ResidualBlock& r) {
            Tensor inner = forward_layers(r.inner, x, mode, rng,
                                          trace ? &trace->inner : nullptr);
            inner.data() += x.data();
            return inner;
          },
      },
      layer.kind);
}

Tensor forward_layers(const std::vector<Layer>& layers, Tensor x, Mode mode,
                      Rng* rng, std::vector<LayerTrace>* traces) {
  if (traces) traces->assign(layers.size(), LayerTrace{});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = forward_layer(layers[i], x, mode, rng, traces ? &(*traces)[i] : nullptr);
  }
  return x;
}

// Walks layers in reverse, writing parameter gradients into `grads`
// starting at `offset` (the index of the first parameter of `layers`).
Tensor backward_layers(const std::vector<Layer>& layers,
                       const std::vector<LayerTrace>& traces, Tensor grad,
                       std::vector<Tensor>& grads, std::size_t offset);

std::size_t count_params(const std::vector<Layer>& layers);

std::size_t count_params(const Layer& layer) {
  if (layer.is<Dense>() || layer.is<Conv2d>()) return 2;
  if (layer.is<ResidualBlock>()) return count_params(layer.as<ResidualBlock>().inner);
  return 0;
}

std::size_t count_params(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += count_params(l);
  return n;
}

Tensor backward_layer(const Layer& layer, const LayerTrace& trace,
                      const Tensor& g, std::vector<Tensor>& grads,
                      std::size_t offset) {
  const Tensor& x = trace.input;
  const std::size_t n = x.batch();
  return std::visit(
      Overloaded{
          [&](const Dense& d) {
            Tensor& gw = grads[offset];
            Tensor& gb = grads[offset + 1];
            gw.matrix().noalias() += g.matrix().transpose() * x.matrix();
            gb.data() += g.matrix().colwise().sum().transpose();
            Tensor gx(x.shape());
            gx.matrix().noalias() = g.matrix() * d.weight.matrix();
            return gx;
          },
          [&](const Conv2d& c) {
            Tensor& gw = grads[offset];
            Tensor& gb = grads[offset + 1];
            const std::size_t h = x.dim(2), wd = x.dim(3);
            const std::size_t oh = g.dim(2), ow = g.dim(3);
            Tensor gx(x.shape());
            auto w = c.weight.matrix();
            auto gwm = gw.matrix();
            for (std::size_t i = 0; i < n; ++i) {
              const RowMatrix<double> cols =
                  im2col(x.sample(i).data(), c.in_ch, h, wd, c, oh, ow);
              Eigen::Map<const RowMatrix<double>> go(
                  g.sample(i).data(), static_cast<Eigen::Index>(c.out_ch),
                  static_cast<Eigen::Index>(oh * ow));
              gwm.noalias() += go * cols.transpose();
              gb.data() += go.rowwise().sum();
              const RowMatrix<double> gcols = w.transpose() * go;
              col2im(gcols, gx.sample(i).data(), c.in_ch, h, wd, c, oh, ow);
            }
            return gx;
          },
          [&](const MaxPool&) {
            Tensor gx(x.shape());
            for (std::size_t o = 0; o < g.size(); ++o) gx[trace.argmax[o]] += g[o];
            return gx;
          },
          [&](const ReLU&) {
            Tensor gx = g;
            gx.data() = (x.data().array() > 0.0).select(g.data(), 0.0);
            return gx;
          },
          [&](const Flatten&) { return g.reshaped(x.shape()); },
          [&](const Dropout&) {
            if (trace.mask.empty()) return g;
            return Tensor(g.shape(), g.data().cwiseProduct(trace.mask.data()));
          },
          [&](const ResidualBlock& r) {
            Tensor gx = backward_layers(r.inner, trace.inner, g, grads, offset);
            gx.data() += g.data();
            return gx;
          },
      },
      layer.kind);
}

Tensor backward_layers(const std::vector<Layer>& layers,
                       const std::vector<LayerTrace>& traces, Tensor grad,
                       std::vector<Tensor>& grads, std::size_t offset) {
  std::vector<std::size_t> offsets(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    offsets[i] = offset;
    offset += count_params(layers[i]);
  }
  for (std::size_t i = layers.size(); i-- > 0;) {
    grad = backward_layer(layers[i], traces[i], grad, grads, offsets[i]);
  }
  return grad;
}

void collect(std::vector<Layer>& layers, std::vector<Tensor*>& out) {
  for (auto& l : layers) {
    std::visit(Overloaded{
                   [&](Dense& d) { out.push_back(&d.weight); out.push_back(&d.bias); },
                   [&](Conv2d& c) { out.push_back(&c.weight); out.push_back(&c.bias); },
                   [&](ResidualBlock& r) { collect(r.inner, out); },
                   [](auto&) {},
               },
               l.kind);
  }
}

bool any_dropout(const std::vector<Layer>& layers) {
  for (const auto& l : layers) {
    if (l.is<Dropout>()) return true;
    if (l.is<ResidualBlock>() && any_dropout(l.as<ResidualBlock>().inner)) return true;
  }
  return false;
}

void validate_layer(const Layer& layer) {
  std::visit(Overloaded{
                 [&](const Dense& d) {
                   if (d.weight.shape() != Shape{d.out, d.in} || d.bias.shape() != Shape{d.out})
                     throw DimensionError(layer_name(layer) + ": parameter shapes inconsistent");
                 },
                 [&](const Conv2d& c) {
                   if (c.weight.shape() != Shape{c.out_ch, c.in_ch * c.kernel * c.kernel} ||
                       c.bias.shape() != Shape{c.out_ch})
                     throw DimensionError(layer_name(layer) + ": parameter shapes inconsistent");
                 },
                 [&](const Dropout& d) {
                   if (!(d.rate >= 0.0 && d.rate < 1.0))
                     throw ValidationError("dropout rate must lie in [0, 1)");
                 },
                 [&](const ResidualBlock& r) {
                   for (const auto& l : r.inner) validate_layer(l);
                 },
                 [](const auto&) {},
             },
             layer.kind);
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Dense& d) {
            return "Dense(" + std::to_string(d.in) + "->" + std::to_string(d.out) + ")";
          },
          [](const Conv2d& c) {
            return "Conv2d(" + std::to_string(c.in_ch) + "->" + std::to_string(c.out_ch) +
                   ", k" + std::to_string(c.kernel) + ", s" + std::to_string(c.stride) +
                   ", p" + std::to_string(c.pad) + ")";
          },
          [](const MaxPool& p) { return "MaxPool(" + std::to_string(p.k) + ")"; },
          [](const ReLU&) { return std::string("ReLU"); },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const Dropout& d) { return "Dropout(" + std::to_string(d.rate) + ")"; },
          [](const ResidualBlock& r) {
            return "ResidualBlock(" + std::to_string(r.inner.size()) + " layers)";
          },
      },
      layer.kind);
}

bool is_weight_layer(const Layer& layer) {
  return layer.is<Dense>() || layer.is<Conv2d>();
}

Layer dense(std::size_t in, std::size_t out) {
  return Dense{in, out, Tensor({out, in}), Tensor({out})};
}

Layer conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
             std::size_t stride, std::size_t pad) {
  if (kernel == 0 || stride == 0) throw ValidationError("conv2d: kernel and stride must be positive");
  return Conv2d{in_ch, out_ch, kernel, stride, pad,
                Tensor({out_ch, in_ch * kernel * kernel}), Tensor({out_ch})};
}

Layer max_pool(std::size_t k) {
  if (k == 0) throw ValidationError("max_pool: window must be positive");
  return MaxPool{k};
}
Layer relu() { return ReLU{}; }
Layer flatten() { return Flatten{}; }
Layer dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
  return Dropout{rate};
}
Layer residual(std::vector<Layer> inner) { return ResidualBlock{std::move(inner)}; }

Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Dense& d) {
            require_rank(layer, in, 1);
            if (in[0] != d.in)
              throw DimensionError(layer_name(layer) + ": input has " +
                                   std::to_string(in[0]) + " features");
            return Shape{d.out};
          },
          [&](const Conv2d& c) {
            require_rank(layer, in, 3);
            if (in[0] != c.in_ch)
              throw DimensionError(layer_name(layer) + ": input has " +
                                   std::to_string(in[0]) + " channels");
            const auto oh = conv_extent(in[1], c.kernel, c.stride, c.pad);
            const auto ow = conv_extent(in[2], c.kernel, c.stride, c.pad);
            if (oh == 0 || ow == 0)
              throw DimensionError(layer_name(layer) + ": input " + shape_string(in) +
                                   " is smaller than the kernel");
            return Shape{c.out_ch, oh, ow};
          },
          [&](const MaxPool& p) {
            require_rank(layer, in, 3);
            if (in[1] < p.k || in[2] < p.k)
              throw DimensionError(layer_name(layer) + ": input " + shape_string(in) +
                                   " is smaller than the window");
            return Shape{in[0], in[1] / p.k, in[2] / p.k};
          },
          [&](const ReLU&) { return in; },
          [&](const Flatten&) { return Shape{shape_size(in)}; },
          [&](const Dropout&) { return in; },
          [&](const ResidualBlock& r) {
            Shape s = in;
            for (const auto& l : r.inner) s = output_shape(l, s);
            if (s != in)
              throw DimensionError(layer_name(layer) + ": inner stack maps " +
                                   shape_string(in) + " to " + shape_string(s));
            return s;
          },
      },
      layer.kind);
}

Network::Network(std::vector<Layer> layers, Shape input_shape,
                 std::size_t num_classes)
    : layers_(std::move(layers)),
      input_shape_(std::move(input_shape)),
      num_classes_(num_classes) {
  if (num_classes_ < 2) throw ValidationError("network needs at least two classes");
  Shape s = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    validate_layer(layers_[i]);
    try {
      s = output_shape(layers_[i], s);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " " + e.what());
    }
  }
  if (s != Shape{num_classes_}) {
    throw DimensionError("network output " + shape_string(s) +
                         " is not a logit vector of length " +
                         std::to_string(num_classes_));
  }
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  collect(layers_, out);
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

bool Network::has_dropout() const { return any_dropout(layers_); }

void init_he_uniform(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  auto visit = [&](auto&& self, std::vector<Layer>& layers) -> void {
    for (auto& l : layers) {
      std::visit(Overloaded{
                     [&](Dense& d) {
                       const double lim = std::sqrt(6.0 / static_cast<double>(d.in));
                       d.weight = uniform<double>(d.weight.shape(), -lim, lim, rng);
                       d.bias.data().setZero();
                     },
                     [&](Conv2d& c) {
                       const double fan_in = static_cast<double>(c.in_ch * c.kernel * c.kernel);
                       const double lim = std::sqrt(6.0 / fan_in);
                       c.weight = uniform<double>(c.weight.shape(), -lim, lim, rng);
                       c.bias.data().setZero();
                     },
                     [&](ResidualBlock& r) { self(self, r.inner); },
                     [](auto&) {},
                 },
                 l.kind);
    }
  };
  visit(visit, net.layers());
}

namespace {

void check_batch(const Network& net, const Tensor& batch) {
  if (batch.rank() != net.input_shape().size() + 1 ||
      batch.sample_shape() != net.input_shape()) {
    throw DimensionError("input batch " + shape_string(batch.shape()) +
                         " does not match network input " +
                         shape_string(net.input_shape()));
  }
}

}  // namespace

Tensor forward(const Network& net, const Tensor& batch, Mode mode, Rng* rng) {
  check_batch(net, batch);
  return forward_layers(net.layers(), batch, mode, rng, nullptr);
}

ForwardPass forward_traced(const Network& net, const Tensor& batch, Mode mode,
                           Rng* rng) {
  check_batch(net, batch);
  ForwardPass pass;
  pass.logits = forward_layers(net.layers(), batch, mode, rng, &pass.traces);
  return pass;
}

Tensor predict_proba(const Network& net, const Tensor& batch) {
  return softmax(forward(net, batch, Mode::eval));
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.batch();
  const std::size_t k = logits.sample_size();
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
    auto row = logits.sample(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row[labels[i]];
  }
  return total / static_cast<double>(n);
}

Gradients backward(const Network& net, const ForwardPass& pass,
                   std::span<const int> labels) {
  const Tensor& logits = pass.logits;
  const std::size_t n = logits.batch();
  Gradients out;
  out.loss = cross_entropy(logits, labels);

  Tensor g = softmax(logits);
  for (std::size_t i = 0; i < n; ++i) g.sample(i)[labels[i]] -= 1.0;
  g.data() /= static_cast<double>(n);

  for (const auto* p : net.parameters()) out.params.emplace_back(p->shape());
  backward_layers(net.layers(), pass.traces, std::move(g), out.params, 0);
  return out;
}

Gradients loss_and_gradients(const Network& net, const Tensor& batch,
                             std::span<const int> labels, Mode mode, Rng* rng) {
  return backward(net, forward_traced(net, batch, mode, rng), labels);
}

void sgd_step(Network& net, const Gradients& grads, double lr) {
  auto params = net.parameters();
  if (params.size() != grads.params.size())
    throw DimensionError("sgd_step: " + std::to_string(grads.params.size()) +
                         " gradients for " + std::to_string(params.size()) +
                         " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads.params[i].shape())
      throw DimensionError("sgd_step: gradient " + std::to_string(i) + " has shape " +
                           shape_string(grads.params[i].shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->data() -= lr * grads.params[i].data();
  }
}

}  // namespace bsb
