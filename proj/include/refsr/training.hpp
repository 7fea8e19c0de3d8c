#ifndef REFSR_TRAINING_HPP_
#define REFSR_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/image.hpp"
#include "refsr/network.hpp"
#include "refsr/parallel.hpp"
#include "refsr/seed.hpp"

namespace refsr {

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::vector<double> trace)
      : Error(what), loss_trace(std::move(trace)) {}
  std::vector<double> loss_trace;
};

struct PerturbRange {
  double gain_lo = 0.7;
  double gain_hi = 1.3;
  double bias_lo = -0.1;
  double bias_hi = 0.1;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int iterations = 2000;
  std::uint64_t seed = 0;
  PerturbRange perturb{};
  Optimizer optimizer = Optimizer::adam;
  Architecture architecture{};
  double blur_sigma = -1.0;    // < 0 selects the scale-dependent default
  int perturb_variants = 4;    // contrast-perturbed references per training image (EHN)
  std::function<void(int, double)> on_iteration;  // optional progress hook
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
    throw InvalidArgument("learning rate must be finite and non-negative");
  if (cfg.batch_size < 1 || cfg.iterations < 0) throw InvalidArgument("invalid batch size or iteration count");
  if (!(cfg.perturb.gain_lo <= cfg.perturb.gain_hi) || !(cfg.perturb.bias_lo <= cfg.perturb.bias_hi))
    throw InvalidArgument("perturbation ranges are not well ordered");
}

inline double blur_sigma_for(const TrainConfig& cfg, ScaleFactor s) {
  return cfg.blur_sigma >= 0.0 ? cfg.blur_sigma : default_blur_sigma(s);
}

// ---------------------------------------------------------------------------
// Plane <-> tensor

inline Tensor<float> to_tensor(std::initializer_list<const ImagePlane*> planes) {
  const ImagePlane& first = **planes.begin();
  Tensor<float> t(static_cast<int>(planes.size()), first.height(), first.width());
  int c = 0;
  for (const ImagePlane* p : planes) {
    require_same_size(first, *p, "to_tensor");
    std::copy(p->samples().begin(), p->samples().end(), t.channel(c++).begin());
  }
  return t;
}

inline ImagePlane to_plane(const Tensor<float>& t, int channel = 0) {
  std::vector<float> v(t.channel(channel).begin(), t.channel(channel).end());
  return ImagePlane(t.width, t.height, std::move(v));
}

inline Tensor<float> crop_tensor(const Tensor<float>& t, int x0, int y0, int size) {
  Tensor<float> out(t.channels, size, size);
  for (int c = 0; c < t.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
  return out;
}

// ---------------------------------------------------------------------------
// Inference

inline void require_tag(const NetworkParams<float>& net, NetworkTag tag, int channels) {
  if (net.tag != tag) throw InvalidArgument(std::string("expected an ") + to_string(tag) + " network, got " + to_string(net.tag));
  if (net.input_channels() != channels)
    throw InvalidArgument(std::string(to_string(tag)) + " network must take " + std::to_string(channels) + " input channels");
}

// Internal HF map of the replicate-upsampled image, from [upsampled, edges].
inline ImagePlane ihn_infer(const NetworkParams<float>& net, const ImagePlane& lr, ScaleFactor s) {
  require_tag(net, NetworkTag::ihn, 2);
  const ImagePlane up = upsample_replicate(lr, s);
  const ImagePlane edges = edge_map(up);
  return to_plane(forward(net, to_tensor({&up, &edges})));
}

// I_t = upsample_replicate(lr) + ihn_infer(lr).
inline ImagePlane intermediate_image(const NetworkParams<float>& net, const ImagePlane& lr, ScaleFactor s) {
  return add_maps(upsample_replicate(lr, s), ihn_infer(net, lr, s));
}

// Degrade the (cropped) reference and super-resolve it again with the IHN.
inline ImagePlane reference_intermediate(const NetworkParams<float>& ihn, const ImagePlane& ref_hr, ScaleFactor s,
                                         double blur_sigma) {
  const ImagePlane ref = crop_to_multiple(ref_hr, s);
  return intermediate_image(ihn, degrade(ref, s, blur_sigma), s);
}

inline ImagePlane reference_intermediate(const NetworkParams<float>& ihn, const ImagePlane& ref_hr, ScaleFactor s) {
  return reference_intermediate(ihn, ref_hr, s, default_blur_sigma(s));
}

// External HF map from the difference between the aligned reference and its
// intermediate reconstruction.
inline ImagePlane ehn_extract(const NetworkParams<float>& net, const ImagePlane& ref_aligned,
                              const ImagePlane& ref_intermediate) {
  require_tag(net, NetworkTag::ehn, 1);
  const ImagePlane diff = subtract_maps(ref_aligned, ref_intermediate);
  return to_plane(forward(net, to_tensor({&diff})));
}

// ---------------------------------------------------------------------------
// Data

inline constexpr int kSampleSize = 32;
inline constexpr int kSampleStride = 16;

// The network is trained to produce target - base.
struct SamplePair {
  Tensor<float> input;   // c x 32 x 32
  Tensor<float> base;    // 1 x 32 x 32 image the residual is added to
  Tensor<float> target;  // 1 x 32 x 32 ground truth
  int scale = 0;

  Tensor<float> residual_target() const {
    Tensor<float> r = target;
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= base.data[i];
    return r;
  }
};

// Top-left origins of 32x32 crops on the stride-16 grid.
inline std::vector<int> crop_origins(int extent) {
  std::vector<int> o;
  for (int v = 0; v + kSampleSize <= extent; v += kSampleStride) o.push_back(v);
  return o;
}

inline void append_crops(const Tensor<float>& input, const ImagePlane& base, const ImagePlane& target, int scale,
                         std::vector<SamplePair>& out) {
  const Tensor<float> b = to_tensor({&base});
  const Tensor<float> t = to_tensor({&target});
  for (int y : crop_origins(target.height()))
    for (int x : crop_origins(target.width()))
      out.push_back({crop_tensor(input, x, y, kSampleSize), crop_tensor(b, x, y, kSampleSize),
                     crop_tensor(t, x, y, kSampleSize), scale});
}

// IHN samples: input [upsampled, edges] of the degraded image, base the
// upsampled image, target the HR crop.
inline std::vector<SamplePair> make_dataset(std::span<const ImagePlane> hr_images, ScaleFactor s, double blur_sigma) {
  std::vector<SamplePair> out;
  for (const auto& img : hr_images) {
    if (img.width() < kSampleSize || img.height() < kSampleSize)
      throw DimensionError("make_dataset: training images must be at least 32x32");
    const ImagePlane gt = crop_to_multiple(img, s);
    const ImagePlane up = upsample_replicate(degrade(gt, s, blur_sigma), s);
    const ImagePlane edges = edge_map(up);
    append_crops(to_tensor({&up, &edges}), up, gt, s, out);
  }
  return out;
}

inline std::vector<SamplePair> make_dataset(std::span<const ImagePlane> hr_images, ScaleFactor s) {
  return make_dataset(hr_images, s, default_blur_sigma(s));
}

// clamp(gain * (img - mean) + mean + bias, 0, 1)
inline ImagePlane apply_contrast(const ImagePlane& img, double gain, double bias) {
  const double m = mean(img);
  ImagePlane out = img;
  for (float& v : out.samples()) v = static_cast<float>(std::clamp(gain * (v - m) + m + bias, 0.0, 1.0));
  return out;
}

struct ContrastDraw {
  double gain;
  double bias;
};

inline ContrastDraw draw_contrast(std::uint64_t seed, const PerturbRange& r) {
  std::mt19937_64 rng(seed);
  const double gain = std::uniform_real_distribution<double>(r.gain_lo, r.gain_hi)(rng);
  const double bias = std::uniform_real_distribution<double>(r.bias_lo, r.bias_hi)(rng);
  return {gain, bias};
}

inline ImagePlane contrast_perturb(const ImagePlane& img, std::uint64_t seed, const PerturbRange& range) {
  const auto d = draw_contrast(seed, range);
  return apply_contrast(img, d.gain, d.bias);
}

inline ImagePlane contrast_perturb(const ImagePlane& img, std::uint64_t seed, const TrainConfig& cfg) {
  return contrast_perturb(img, seed, cfg.perturb);
}

// EHN samples: input is the perturbed reference minus its IHN
// reconstruction, base the IHN intermediate of the true image, target the
// raw ground truth.
inline std::vector<SamplePair> make_ehn_dataset(std::span<const ImagePlane> hr_images, ScaleFactor s,
                                                const TrainConfig& cfg, const NetworkParams<float>& ihn) {
  const double sigma = blur_sigma_for(cfg, s);
  std::vector<SamplePair> out;
  for (std::size_t i = 0; i < hr_images.size(); ++i) {
    if (hr_images[i].width() < kSampleSize || hr_images[i].height() < kSampleSize)
      throw DimensionError("make_ehn_dataset: training images must be at least 32x32");
    const ImagePlane gt = crop_to_multiple(hr_images[i], s);
    const ImagePlane inter = intermediate_image(ihn, degrade(gt, s, sigma), s);
    for (int v = 0; v < std::max(1, cfg.perturb_variants); ++v) {
      const std::uint64_t stream = (static_cast<std::uint64_t>(i) << 16) | static_cast<std::uint64_t>(v);
      const ImagePlane ref = contrast_perturb(gt, derive_seed(cfg.seed ^ 0xe4f1ULL, stream), cfg.perturb);
      const ImagePlane diff = subtract_maps(ref, reference_intermediate(ihn, ref, s, sigma));
      append_crops(to_tensor({&diff}), inter, gt, s, out);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename T>
class OptimizerState {
 public:
  OptimizerState(Optimizer kind, const NetworkParams<T>& shape) : kind_(kind) {
    if (kind_ == Optimizer::adam) {
      m_.assign(shape.parameter_count(), 0.0);
      v_.assign(shape.parameter_count(), 0.0);
    }
  }

  void step(NetworkParams<T>& net, NetworkParams<T>& grads, double lr) {
    ++t_;
    if (kind_ == Optimizer::sgd) {
      std::vector<T*> params;
      net.for_each([&](T& p) { params.push_back(&p); });
      std::size_t i = 0;
      grads.for_each([&](T& g) { *params[i++] -= static_cast<T>(lr * g); });
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    std::vector<T*> params;
    params.reserve(m_.size());
    net.for_each([&](T& p) { params.push_back(&p); });
    std::size_t i = 0;
    grads.for_each([&](T& g) {
      m_[i] = b1 * m_[i] + (1 - b1) * g;
      v_[i] = b2 * v_[i] + (1 - b2) * g * g;
      const double mh = m_[i] / c1, vh = v_[i] / c2;
      *params[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
      ++i;
    });
  }

 private:
  Optimizer kind_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

template <typename T>
struct TrainResult {
  NetworkParams<T> params;
  std::vector<double> loss_trace;  // minibatch loss per iteration
};

// Mean per-sample MSE of (base + net(input)) against target.
inline double dataset_loss(const NetworkParams<float>& net, std::span<const SamplePair> samples) {
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    losses[i] = mse(forward(net, samples[i].input), samples[i].residual_target());
  });
  double s = 0.0;
  for (double l : losses) s += l;
  return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
}

// Minibatch descent over epoch-wise shuffles. Per-sample gradients land in
// their own buffers and are reduced in batch order, so the result does not
// depend on the thread count.
inline TrainResult<float> train_network(NetworkParams<float> net, std::span<const SamplePair> samples,
                                        const TrainConfig& cfg) {
  validate(cfg);
  validate(net);
  if (samples.empty()) throw InvalidArgument("training set is empty");
  std::vector<Tensor<float>> residuals(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) residuals[i] = samples[i].residual_target();

  TrainResult<float> result;
  OptimizerState<float> opt(cfg.optimizer, net);
  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<NetworkParams<float>> per_sample(batch, net.zeros_like());
  std::vector<double> losses(batch);
  std::vector<std::size_t> picked(batch);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, epoch++));
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picked[b] = order[cursor++];
    }
    parallel_for(batch, [&](std::size_t b) {
      for (auto& l : per_sample[b].layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0f);
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
      }
      losses[b] = accumulate_gradients(net, samples[picked[b]].input, residuals[picked[b]], per_sample[b]);
    });
    NetworkParams<float> grads = net.zeros_like();
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      loss += losses[b];
      for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        auto& gl = grads.layers[l];
        const auto& sl = per_sample[b].layers[l];
        for (std::size_t k = 0; k < gl.weights.size(); ++k) gl.weights[k] += sl.weights[k];
        for (std::size_t k = 0; k < gl.bias.size(); ++k) gl.bias[k] += sl.bias[k];
      }
    }
    loss /= static_cast<double>(batch);
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss))
      throw TrainingError("training diverged at iteration " + std::to_string(it), result.loss_trace);
    const float inv = 1.0f / static_cast<float>(batch);
    grads.for_each([inv](float& g) { g *= inv; });
    opt.step(net, grads, cfg.learning_rate);
    if (cfg.on_iteration) cfg.on_iteration(it, loss);
  }
  result.params = std::move(net);
  return result;
}

inline TrainResult<float> train_ihn(std::span<const ImagePlane> hr_images, ScaleFactor s, const TrainConfig& cfg) {
  validate(cfg);
  const auto samples = make_dataset(hr_images, s, blur_sigma_for(cfg, s));
  auto net = make_network<float>(NetworkTag::ihn, 2, cfg.architecture, derive_seed(cfg.seed, 0x1a1ULL));
  return train_network(std::move(net), samples, cfg);
}

// The IHN is only read.
inline TrainResult<float> train_ehn(std::span<const ImagePlane> hr_images, ScaleFactor s, const TrainConfig& cfg,
                                    const NetworkParams<float>& ihn) {
  validate(cfg);
  require_tag(ihn, NetworkTag::ihn, 2);
  const auto samples = make_ehn_dataset(hr_images, s, cfg, ihn);
  auto net = make_network<float>(NetworkTag::ehn, 1, cfg.architecture, derive_seed(cfg.seed, 0xe1eULL));
  return train_network(std::move(net), samples, cfg);
}

}  // namespace refsr

#endif  // REFSR_TRAINING_HPP_
