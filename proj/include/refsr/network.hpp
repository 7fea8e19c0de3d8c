#ifndef REFSR_NETWORK_HPP_
#define REFSR_NETWORK_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "refsr/binary_io.hpp"
#include "refsr/error.hpp"

namespace refsr {

// Channel-major (C, H, W) activation volume.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  T at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  std::span<T> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class Activation : std::uint8_t { linear = 0, relu = 1 };
enum class NetworkTag : std::uint8_t { ihn = 0, ehn = 1 };

inline const char* to_string(NetworkTag t) { return t == NetworkTag::ihn ? "IHN" : "EHN"; }

template <typename T>
struct ConvLayer {
  int out_ch = 0;
  int in_ch = 0;
  int kh = 3;
  int kw = 3;
  Activation activation = Activation::relu;
  std::vector<T> weights;  // (out_ch, in_ch, kh, kw) row-major
  std::vector<T> bias;     // out_ch

  ConvLayer() = default;
  ConvLayer(int out, int in, int k_h, int k_w, Activation act)
      : out_ch(out), in_ch(in), kh(k_h), kw(k_w), activation(act),
        weights(static_cast<std::size_t>(out) * in * k_h * k_w, T(0)), bias(static_cast<std::size_t>(out), T(0)) {}

  int patch_size() const { return in_ch * kh * kw; }
  T& w(int o, int i, int y, int x) { return weights[((static_cast<std::size_t>(o) * in_ch + i) * kh + y) * kw + x]; }
  T w(int o, int i, int y, int x) const {
    return weights[((static_cast<std::size_t>(o) * in_ch + i) * kh + y) * kw + x];
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
struct NetworkParams {
  NetworkTag tag = NetworkTag::ihn;
  std::vector<ConvLayer<T>> layers;

  int input_channels() const { return layers.empty() ? 0 : layers.front().in_ch; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.tag = tag;
    for (const auto& l : layers) {
      ConvLayer<U> c(l.out_ch, l.in_ch, l.kh, l.kw, l.activation);
      std::transform(l.weights.begin(), l.weights.end(), c.weights.begin(), [](T v) { return static_cast<U>(v); });
      std::transform(l.bias.begin(), l.bias.end(), c.bias.begin(), [](T v) { return static_cast<U>(v); });
      out.layers.push_back(std::move(c));
    }
    return out;
  }

  // Same shapes, all zeros.
  NetworkParams zeros_like() const {
    NetworkParams z;
    z.tag = tag;
    for (const auto& l : layers) z.layers.emplace_back(l.out_ch, l.in_ch, l.kh, l.kw, l.activation);
    return z;
  }

  // Visits every parameter in storage order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& l : layers) {
      for (auto& v : l.weights) fn(v);
      for (auto& v : l.bias) fn(v);
    }
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

// Throws unless the channel chain is consistent, kernels odd, the last
// layer linear with one output channel and all parameters finite.
template <typename T>
void validate(const NetworkParams<T>& net) {
  if (net.layers.empty()) throw InvalidArgument("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (l.out_ch < 1 || l.in_ch < 1 || l.kh % 2 == 0 || l.kw % 2 == 0 || l.kh < 1 || l.kw < 1)
      throw InvalidArgument("layer " + std::to_string(i) + ": invalid shape");
    if (l.weights.size() != static_cast<std::size_t>(l.out_ch) * l.patch_size() ||
        l.bias.size() != static_cast<std::size_t>(l.out_ch))
      throw InvalidArgument("layer " + std::to_string(i) + ": parameter count mismatch");
    if (i > 0 && l.in_ch != net.layers[i - 1].out_ch)
      throw InvalidArgument("layer " + std::to_string(i) + ": channel chain broken");
    for (T v : l.weights)
      if (!std::isfinite(static_cast<double>(v))) throw InvalidArgument("non-finite weight");
    for (T v : l.bias)
      if (!std::isfinite(static_cast<double>(v))) throw InvalidArgument("non-finite bias");
  }
  if (net.layers.back().out_ch != 1 || net.layers.back().activation != Activation::linear)
    throw InvalidArgument("network head must be a linear single-channel layer");
}

struct Architecture {
  int layers = 5;
  int channels = 32;
  int kernel = 3;
};

// Hidden layers He-normal, biases zero, residual head zero so a fresh
// network outputs an all-zero map.
template <typename T = float>
NetworkParams<T> make_network(NetworkTag tag, int input_channels, const Architecture& arch, std::uint64_t seed) {
  if (arch.layers < 1 || arch.channels < 1 || arch.kernel % 2 == 0)
    throw InvalidArgument("invalid architecture");
  std::mt19937_64 rng(seed);
  NetworkParams<T> net;
  net.tag = tag;
  int in = input_channels;
  for (int i = 0; i < arch.layers; ++i) {
    const bool head = i + 1 == arch.layers;
    ConvLayer<T> l(head ? 1 : arch.channels, in, arch.kernel, arch.kernel, head ? Activation::linear : Activation::relu);
    if (!head) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / l.patch_size()));
      for (auto& v : l.weights) v = static_cast<T>(dist(rng));
    }
    in = l.out_ch;
    net.layers.push_back(std::move(l));
  }
  return net;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column matrix (in_ch*kh*kw, rows*W) for output rows [y0, y0+rows), zero padded.
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int y0, int rows, RowMat<T>& col) {
  const int w = x.width, h = x.height, ph = kh / 2, pw = kw / 2;
  const int p = rows * w;
  col.resize(static_cast<Eigen::Index>(x.channels) * kh * kw, p);
  int r = 0;
  for (int c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++r) {
        T* dst = col.row(r).data();
        for (int yy = 0; yy < rows; ++yy) {
          const int sy = y0 + yy + ky - ph;
          T* d = dst + static_cast<std::size_t>(yy) * w;
          if (sy < 0 || sy >= h) {
            std::fill(d, d + w, T(0));
            continue;
          }
          const T* src = x.data.data() + c * x.plane() + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pw;
            d[xx] = (sx >= 0 && sx < w) ? src[sx] : T(0);
          }
        }
      }
}

// Scatter-add of a column-gradient matrix back into an input-shaped tensor.
template <typename T>
void col2im_add(const RowMat<T>& col, int kh, int kw, Tensor<T>& gx) {
  const int w = gx.width, h = gx.height, ph = kh / 2, pw = kw / 2;
  int r = 0;
  for (int c = 0; c < gx.channels; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx, ++r) {
        const T* src = col.row(r).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - ph;
          if (sy < 0 || sy >= h) continue;
          T* d = gx.data.data() + c * gx.plane() + static_cast<std::size_t>(sy) * w;
          const T* s = src + static_cast<std::size_t>(y) * w;
          const int x_lo = std::max(0, pw - kx), x_hi = std::min(w, w + pw - kx);
          for (int xx = x_lo; xx < x_hi; ++xx) d[xx + kx - pw] += s[xx];
        }
      }
}

template <typename T>
void apply_activation(Activation a, std::span<T> v) {
  if (a == Activation::relu)
    for (T& x : v) x = x > T(0) ? x : T(0);
}

}  // namespace detail

// Same-padding convolution + bias + activation. Large inputs are processed
// in row bands to bound the column buffer.
template <typename T>
Tensor<T> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& x) {
  if (x.channels != layer.in_ch)
    throw DimensionError("conv_forward: input has " + std::to_string(x.channels) + " channels, layer expects " +
                         std::to_string(layer.in_ch));
  Tensor<T> out(layer.out_ch, x.height, x.width);
  const Eigen::Map<const detail::RowMat<T>> wm(layer.weights.data(), layer.out_ch, layer.patch_size());
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(layer.bias.data(), layer.out_ch);
  constexpr std::size_t kMaxColumnElems = std::size_t{1} << 22;
  const std::size_t per_row = static_cast<std::size_t>(layer.patch_size()) * x.width;
  const int band = std::max(1, static_cast<int>(std::min<std::size_t>(x.height, kMaxColumnElems / std::max<std::size_t>(1, per_row))));
  detail::RowMat<T> col;
  detail::RowMat<T> res;
  for (int y0 = 0; y0 < x.height; y0 += band) {
    const int rows = std::min(band, x.height - y0);
    detail::im2col(x, layer.kh, layer.kw, y0, rows, col);
    res.noalias() = wm * col;
    res.colwise() += bias;
    const std::size_t p = static_cast<std::size_t>(rows) * x.width;
    for (int o = 0; o < layer.out_ch; ++o)
      std::copy_n(res.row(o).data(), p, out.data.data() + o * out.plane() + static_cast<std::size_t>(y0) * x.width);
  }
  detail::apply_activation(layer.activation, std::span<T>(out.data));
  return out;
}

template <typename T>
Tensor<T> forward(const NetworkParams<T>& net, const Tensor<T>& x) {
  Tensor<T> a = x;
  for (const auto& l : net.layers) a = conv_forward(l, a);
  return a;
}

template <typename T>
double mse(const Tensor<T>& out, const Tensor<T>& target) {
  if (out.data.size() != target.data.size()) throw DimensionError("mse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) - static_cast<double>(target.data[i]);
    s += d * d;
  }
  return s / static_cast<double>(out.data.size());
}

// Adds scale * dLoss/dParams into `grads` (shaped like `net`) and returns
// the loss, MSE between the network output and `target`.
template <typename T>
double accumulate_gradients(const NetworkParams<T>& net, const Tensor<T>& x, const Tensor<T>& target,
                            NetworkParams<T>& grads, T scale = T(1)) {
  if (net.layers.empty()) throw InvalidArgument("backward: empty network");
  if (x.channels != net.input_channels()) throw DimensionError("backward: input channel mismatch");
  if (target.channels != net.layers.back().out_ch || target.height != x.height || target.width != x.width)
    throw DimensionError("backward: target shape mismatch");
  const std::size_t n_layers = net.layers.size();
  std::vector<Tensor<T>> acts;
  acts.reserve(n_layers + 1);
  acts.push_back(x);
  for (const auto& l : net.layers) acts.push_back(conv_forward(l, acts.back()));

  const Tensor<T>& out = acts.back();
  const double loss = mse(out, target);
  Tensor<T> g(out.channels, out.height, out.width);
  const T k = static_cast<T>(2.0 / static_cast<double>(out.data.size()));
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = k * (out.data[i] - target.data[i]);

  detail::RowMat<T> col, gcol;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& l = net.layers[li];
    auto& gl = grads.layers[li];
    if (l.activation == Activation::relu) {
      const auto& post = acts[li + 1].data;
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if (!(post[i] > T(0))) g.data[i] = T(0);
    }
    const Tensor<T>& in = acts[li];
    const Eigen::Index p = static_cast<Eigen::Index>(in.plane());
    const Eigen::Map<const detail::RowMat<T>> gm(g.data.data(), l.out_ch, p);
    detail::im2col(in, l.kh, l.kw, 0, in.height, col);
    Eigen::Map<detail::RowMat<T>> gw(gl.weights.data(), l.out_ch, l.patch_size());
    gw.noalias() += scale * (gm * col.transpose());
    // plain loop: Eigen's vectorized sum peels by address, so its order
    // would follow heap alignment
    for (int o = 0; o < l.out_ch; ++o) {
      const T* row = g.data.data() + static_cast<std::size_t>(o) * in.plane();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < p; ++i) acc += row[i];
      gl.bias[o] += scale * static_cast<T>(acc);
    }
    if (li == 0) break;
    const Eigen::Map<const detail::RowMat<T>> wm(l.weights.data(), l.out_ch, l.patch_size());
    gcol.noalias() = wm.transpose() * gm;
    Tensor<T> gin(in.channels, in.height, in.width);
    detail::col2im_add(gcol, l.kh, l.kw, gin);
    g = std::move(gin);
  }
  return loss;
}

template <typename T>
struct BackwardResult {
  double loss = 0.0;
  NetworkParams<T> gradients;
};

template <typename T>
BackwardResult<T> backward(const NetworkParams<T>& net, const Tensor<T>& x, const Tensor<T>& target) {
  BackwardResult<T> r;
  r.gradients = net.zeros_like();
  r.loss = accumulate_gradients(net, x, target, r.gradients);
  return r;
}

// ---------------------------------------------------------------------------
// Weights file: "DHN1", u32 version, u8 tag, u32 layer count, per layer
// (u32 out_ch, u32 in_ch, u32 kh, u32 kw, u8 activation, f32 weights, f32 biases).

inline constexpr std::uint32_t kParamsVersion = 1;

template <typename T>
void save_params(std::ostream& os, const NetworkParams<T>& net) {
  validate(net);
  binary::write_magic(os, "DHN1");
  binary::write_u32(os, kParamsVersion);
  binary::write_u8(os, static_cast<std::uint8_t>(net.tag));
  binary::write_u32(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    binary::write_u32(os, static_cast<std::uint32_t>(l.out_ch));
    binary::write_u32(os, static_cast<std::uint32_t>(l.in_ch));
    binary::write_u32(os, static_cast<std::uint32_t>(l.kh));
    binary::write_u32(os, static_cast<std::uint32_t>(l.kw));
    binary::write_u8(os, static_cast<std::uint8_t>(l.activation));
    for (T v : l.weights) binary::write_f32(os, static_cast<float>(v));
    for (T v : l.bias) binary::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("weights: write failed");
}

template <typename T = float>
NetworkParams<T> load_params(std::istream& is) {
  constexpr const char* what = "weights";
  binary::expect_magic(is, "DHN1", what);
  const auto version = binary::read_u32(is, what);
  if (version != kParamsVersion) throw FormatError("weights: unsupported version " + std::to_string(version));
  const auto tag = binary::read_u8(is, what);
  if (tag > 1) throw FormatError("weights: unknown network tag");
  const auto count = binary::read_u32(is, what);
  if (count == 0 || count > 1024) throw FormatError("weights: invalid layer count");
  NetworkParams<T> net;
  net.tag = static_cast<NetworkTag>(tag);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto out = binary::read_u32(is, what), in = binary::read_u32(is, what);
    const auto kh = binary::read_u32(is, what), kw = binary::read_u32(is, what);
    const auto act = binary::read_u8(is, what);
    if (out == 0 || in == 0 || out > 4096 || in > 4096 || kh == 0 || kw == 0 || kh > 63 || kw > 63 || act > 1)
      throw FormatError("weights: invalid layer header");
    ConvLayer<T> l(static_cast<int>(out), static_cast<int>(in), static_cast<int>(kh), static_cast<int>(kw),
                   static_cast<Activation>(act));
    for (T& v : l.weights) v = static_cast<T>(binary::read_f32(is, what));
    for (T& v : l.bias) v = static_cast<T>(binary::read_f32(is, what));
    net.layers.push_back(std::move(l));
  }
  try {
    validate(net);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }
  return net;
}

template <typename T>
void save_params(const std::filesystem::path& path, const NetworkParams<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  save_params(os, net);
}

template <typename T = float>
NetworkParams<T> load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return load_params<T>(is);
}

}  // namespace refsr

#endif  // REFSR_NETWORK_HPP_
