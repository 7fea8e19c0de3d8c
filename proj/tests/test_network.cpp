#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "refsr/metrics.hpp"
#include "refsr/network.hpp"
#include "refsr/parallel.hpp"
#include "refsr/training.hpp"

using namespace refsr;

namespace {

template <typename T>
Tensor<T> random_tensor(int c, int h, int w, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(c, h, w);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
void randomize(NetworkParams<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& l : net.layers) {
    for (auto& w : l.weights) w = static_cast<T>(u(rng));
    for (auto& b : l.bias) b = static_cast<T>(0.2 + 0.3 * u(rng));
  }
}

}  // namespace

TEST(Conv, IdentityKernelAndBiasOnly) {
  ConvLayer<float> id(1, 1, 1, 1, Activation::linear);
  id.weights[0] = 1.0f;
  const auto x = random_tensor<float>(1, 5, 6, 1);
  EXPECT_EQ(conv_forward(id, x), x);
  ConvLayer<float> z(2, 1, 3, 3, Activation::relu);
  z.bias = {0.7f, -0.3f};
  const auto y = conv_forward(z, x);
  for (int i = 0; i < 30; ++i) {
    EXPECT_FLOAT_EQ(y.channel(0)[i], 0.7f);
    EXPECT_FLOAT_EQ(y.channel(1)[i], 0.0f);
  }
  EXPECT_THROW(conv_forward(z, random_tensor<float>(2, 5, 5, 2)), DimensionError);
}

TEST(Conv, MatchesNestedLoopOracle) {
  for (auto act : {Activation::linear, Activation::relu}) {
    ConvLayer<double> l(3, 2, 3, 3, act);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& w : l.weights) w = u(rng);
    for (auto& b : l.bias) b = u(rng);
    const auto x = random_tensor<double>(2, 5, 5, 3);
    const auto fast = conv_forward(l, x), slow = oracles::naive_conv(l, x);
    for (std::size_t i = 0; i < fast.data.size(); ++i) EXPECT_NEAR(fast.data[i], slow.data[i], 1e-12);
  }
}

TEST(Conv, LargeInputsUseBandsConsistently) {
  // wide enough to split the column buffer into several bands
  ConvLayer<float> l(4, 32, 3, 3, Activation::relu);
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0, 0.1f);
  for (auto& w : l.weights) w = n(rng);
  const auto x = random_tensor<float>(32, 150, 130, 9);
  const auto fast = conv_forward(l, x), slow = oracles::naive_conv(l, x);
  double m = 0;
  for (std::size_t i = 0; i < fast.data.size(); ++i) m = std::max(m, double(std::abs(fast.data[i] - slow.data[i])));
  EXPECT_LT(m, 1e-4);
}

TEST(Backward, GradientsMatchCentralDifferences) {
  Architecture arch{3, 4, 3};
  auto net = make_network<double>(NetworkTag::ihn, 2, arch, 1);
  randomize(net, 2);
  const auto x = random_tensor<double>(2, 6, 6, 3, 0, 1);
  const auto target = random_tensor<double>(1, 6, 6, 4);
  // keep every relu away from its kink so the difference quotient is smooth
  {
    Tensor<double> a = x;
    for (std::size_t li = 0; li + 1 < net.layers.size(); ++li) {
      auto lin = net.layers[li];
      lin.activation = Activation::linear;
      const auto pre = conv_forward(lin, a);
      for (double v : pre.data) ASSERT_GT(std::abs(v), 1e-3);
      a = conv_forward(net.layers[li], a);
    }
  }
  const auto r = backward(net, x, target);
  const double h = 1e-4;
  double worst = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto check = [&](auto member) {
      for (std::size_t k = 0; k < (net.layers[li].*member).size(); ++k) {
        auto plus = net, minus = net;
        (plus.layers[li].*member)[k] += h;
        (minus.layers[li].*member)[k] -= h;
        const double num = (mse(forward(plus, x), target) - mse(forward(minus, x), target)) / (2 * h);
        const double ana = (r.gradients.layers[li].*member)[k];
        const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
        worst = std::max(worst, rel);
        EXPECT_LT(rel, 1e-4) << "layer " << li << " index " << k << " analytic " << ana << " numeric " << num;
      }
    };
    check(&ConvLayer<double>::weights);
    check(&ConvLayer<double>::bias);
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Backward, ZeroAtTargetAndQuadraticInError) {
  auto net = make_network<double>(NetworkTag::ehn, 1, Architecture{2, 3, 3}, 3);
  randomize(net, 4);
  const auto x = random_tensor<double>(1, 5, 5, 5);
  const auto out = forward(net, x);
  const auto r0 = backward(net, x, out);
  EXPECT_EQ(r0.loss, 0.0);
  for (const auto& l : r0.gradients.layers)
    for (double g : l.weights) EXPECT_EQ(g, 0.0);
  Tensor<double> t1 = out, t2 = out;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    t1.data[i] -= 0.1 * (i % 3);
    t2.data[i] -= 0.2 * (i % 3);
  }
  EXPECT_NEAR(mse(out, t2), 4 * mse(out, t1), 1e-12);
  EXPECT_THROW(backward(net, x, Tensor<double>(1, 4, 5)), DimensionError);
}

TEST(Params, ValidationAndFreshNetworkIsZeroResidual) {
  auto net = make_network<float>(NetworkTag::ihn, 2, {}, 9);
  EXPECT_EQ(net.layers.size(), 5u);
  EXPECT_EQ(net.input_channels(), 2);
  const auto y = forward(net, random_tensor<float>(2, 8, 8, 1));
  for (float v : y.data) EXPECT_EQ(v, 0.0f);
  auto bad = net;
  bad.layers.back().activation = Activation::relu;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad = net;
  bad.layers[2].in_ch = 7;
  EXPECT_THROW(validate(bad), InvalidArgument);
}

TEST(Params, SaveLoadRoundTripAndCorruption) {
  auto net = make_network<float>(NetworkTag::ehn, 1, Architecture{3, 5, 3}, 4);
  randomize(net, 5);
  std::stringstream ss;
  save_params(ss, net);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "DHN1");
  EXPECT_EQ(load_params<float>(ss), net);
  std::stringstream cut(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_params<float>(cut), FormatError);
  std::string b2 = bytes;
  b2[3] = '2';
  std::stringstream bad(b2);
  EXPECT_THROW(load_params<float>(bad), FormatError);
}

// ---------------------------------------------------------------------------

TEST(Dataset, GridCountsAndSlicing) {
  const std::vector<ImagePlane> a{fixtures::scene(64, 64, 1)};
  const auto ds = make_dataset(a, ScaleFactor(2));
  EXPECT_EQ(ds.size(), 9u);
  const std::vector<ImagePlane> b{fixtures::scene(32, 32, 2)};
  EXPECT_EQ(make_dataset(b, ScaleFactor(2)).size(), 1u);
  EXPECT_THROW(make_dataset(std::vector<ImagePlane>{ImagePlane(31, 40)}, ScaleFactor(2)), DimensionError);
  // sample 5 is origin (16, 16)
  const auto up = upsample_replicate(degrade(a[0], ScaleFactor(2)), ScaleFactor(2));
  const auto edges = edge_map(up);
  const auto& s = ds[4];
  EXPECT_EQ(s.input.channels, 2);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      EXPECT_EQ(s.target.at(0, y, x), a[0](16 + x, 16 + y));
      EXPECT_EQ(s.input.at(0, y, x), up(16 + x, 16 + y));
      EXPECT_EQ(s.input.at(1, y, x), edges(16 + x, 16 + y));
      EXPECT_EQ(s.base.at(0, y, x), up(16 + x, 16 + y));
    }
}

TEST(Contrast, IdentityDeterminismAndMeanShift) {
  const auto img = fixtures::smooth_texture(20, 20, 3);
  EXPECT_EQ(apply_contrast(img, 1.0, 0.0), img);
  TrainConfig cfg;
  EXPECT_EQ(contrast_perturb(img, 42, cfg), contrast_perturb(img, 42, cfg));
  EXPECT_NE(contrast_perturb(img, 42, cfg), contrast_perturb(img, 43, cfg));
  // smooth_texture lies in [0.1, 0.9]: small perturbations never clip
  for (double gain : {0.8, 1.05}) {
    const auto out = apply_contrast(img, gain, 0.03);
    EXPECT_NEAR(mean(out) - mean(img), 0.03, 1e-6);
  }
  for (int s = 0; s < 50; ++s) {
    const auto d = draw_contrast(s, cfg.perturb);
    EXPECT_GE(d.gain, 0.7);
    EXPECT_LE(d.gain, 1.3);
    EXPECT_GE(d.bias, -0.1);
    EXPECT_LE(d.bias, 0.1);
  }
}

TEST(Inference, ZeroNetworksAndTagChecks) {
  const auto ihn = make_network<float>(NetworkTag::ihn, 2, Architecture{3, 4, 3}, 1);
  const auto ehn = make_network<float>(NetworkTag::ehn, 1, Architecture{3, 4, 3}, 1);
  const auto lr = fixtures::smooth_texture(10, 8, 1);
  const auto hf = ihn_infer(ihn, lr, ScaleFactor(3));
  EXPECT_EQ(hf.width(), 30);
  EXPECT_EQ(hf.height(), 24);
  for (float v : hf.samples()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(intermediate_image(ihn, lr, ScaleFactor(3)), upsample_replicate(lr, ScaleFactor(3)));
  EXPECT_THROW(ihn_infer(ehn, lr, ScaleFactor(3)), InvalidArgument);
  const auto ref = fixtures::smooth_texture(30, 24, 2);
  const auto ref_int = reference_intermediate(ihn, ref, ScaleFactor(3));
  EXPECT_TRUE(ref_int.same_size(ref));
  const auto m = ehn_extract(ehn, ref, ref);
  for (float v : m.samples()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(ehn_extract(ihn, ref, ref), InvalidArgument);
  EXPECT_THROW(ehn_extract(ehn, ref, lr), DimensionError);
  const auto flat = reference_intermediate(ihn, ImagePlane(30, 24, 0.4f), ScaleFactor(3));
  for (float v : flat.samples()) EXPECT_NEAR(v, 0.4f, 1e-6);
}

TEST(Inference, ReferenceDifferenceHasSmallMean) {
  const auto ihn = make_network<float>(NetworkTag::ihn, 2, {}, 1);
  for (int i = 0; i < 4; ++i) {
    const auto ref = fixtures::scene(60, 60, 70 + i);
    EXPECT_LT(std::abs(mean(subtract_maps(ref, reference_intermediate(ihn, ref, ScaleFactor(3))))), 0.02);
  }
}

namespace {

TrainConfig tiny_config(int iterations) {
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.batch_size = 4;
  cfg.seed = 5;
  cfg.architecture = Architecture{3, 8, 3};
  cfg.perturb_variants = 2;
  return cfg;
}

std::vector<ImagePlane> tiny_set() {
  std::vector<ImagePlane> v;
  for (int i = 0; i < 3; ++i) v.push_back(fixtures::scene(48, 48, 20 + i));
  return v;
}

}  // namespace

TEST(Training, ZeroLearningRateKeepsInitialParams) {
  auto cfg = tiny_config(5);
  cfg.learning_rate = 0.0;
  const auto r = train_ihn(tiny_set(), ScaleFactor(3), cfg);
  EXPECT_EQ(r.params,
            make_network<float>(NetworkTag::ihn, 2, cfg.architecture, derive_seed(cfg.seed, 0x1a1ULL)));
  EXPECT_EQ(r.loss_trace.size(), 5u);
  cfg.optimizer = Optimizer::sgd;
  const auto s = train_ihn(tiny_set(), ScaleFactor(3), cfg);
  EXPECT_EQ(s.params, r.params);
}

TEST(Training, BitIdenticalAcrossRunsAndThreadCounts) {
  const auto cfg = tiny_config(12);
  set_thread_count(1);
  const auto a = train_ihn(tiny_set(), ScaleFactor(3), cfg);
  set_thread_count(3);
  const auto b = train_ihn(tiny_set(), ScaleFactor(3), cfg);
  set_thread_count(0);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Training, DivergenceAbortsWithTrace) {
  auto cfg = tiny_config(200);
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e8;
  try {
    train_ihn(tiny_set(), ScaleFactor(3), cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.loss_trace.empty());
    EXPECT_FALSE(std::isfinite(e.loss_trace.back()));
  }
}

TEST(Training, RejectsInvalidConfig) {
  auto cfg = tiny_config(1);
  cfg.perturb.gain_lo = 2.0;
  EXPECT_THROW(train_ihn(tiny_set(), ScaleFactor(3), cfg), InvalidArgument);
  cfg = tiny_config(1);
  cfg.batch_size = 0;
  EXPECT_THROW(train_ihn(tiny_set(), ScaleFactor(3), cfg), InvalidArgument);
  EXPECT_THROW(train_ihn(std::vector<ImagePlane>{}, ScaleFactor(3), tiny_config(1)), InvalidArgument);
}

TEST(Training, ToyNetworksImproveAndIhnStaysFrozen) {
  auto cfg = tiny_config(400);
  cfg.learning_rate = 1e-3;
  std::vector<ImagePlane> train;
  for (int i = 0; i < 4; ++i) train.push_back(fixtures::scene(63, 63, 200 + i));
  const ScaleFactor s(3);
  const auto samples = make_dataset(train, s);
  const auto ihn = train_ihn(train, s, cfg);
  const auto fresh = make_network<float>(NetworkTag::ihn, 2, cfg.architecture, 0);
  EXPECT_LT(dataset_loss(ihn.params, samples), dataset_loss(fresh, samples));

  const auto held = fixtures::scene(63, 63, 999);
  const auto lr = degrade(held, s);
  EXPECT_GT(psnr(clamp01(intermediate_image(ihn.params, lr, s)), held), psnr(upsample_replicate(lr, s), held));

  const auto before = ihn.params;
  const auto ehn = train_ehn(train, s, cfg, ihn.params);
  EXPECT_EQ(ihn.params, before);
  // paired measurement on the EHN samples: compensated vs intermediate only
  const auto ehn_samples = make_ehn_dataset(train, s, cfg, ihn.params);
  const auto zero_ehn = make_network<float>(NetworkTag::ehn, 1, cfg.architecture, 0);
  EXPECT_LT(dataset_loss(ehn.params, ehn_samples), dataset_loss(zero_ehn, ehn_samples));
}
