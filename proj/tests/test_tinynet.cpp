#include "scnn/gradcheck.hpp"
#include "scnn/tinynet.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace scnn {
namespace {

InputTensor random_input(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  InputTensor t(s.channels, s.frames, s.height, s.width);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(eng);
  return t;
}

// Direct nested-loop evaluation of conv(3x3x3, same padding) -> relu -> max pool
// (2x2 spatial, temporal kernel/stride) -> fc.
Vector naive_forward(const ModelParams& p, const InputTensor& x, int tk, int ts) {
  const auto C = x.dimension(0), T = x.dimension(1), H = x.dimension(2), W = x.dimension(3);
  const auto F = p.layers[0].weight.rows();
  InputTensor conv(F, T, H, W);
  for (Eigen::Index f = 0; f < F; ++f)
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index xx = 0; xx < W; ++xx) {
          double acc = p.layers[0].bias(f);
          for (Eigen::Index c = 0; c < C; ++c)
            for (int dt = 0; dt < 3; ++dt)
              for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx) {
                  const auto st = t + dt - 1, sy = y + dy - 1, sx = xx + dx - 1;
                  if (st < 0 || st >= T || sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                  acc += p.layers[0].weight(f, ((c * 3 + dt) * 3 + dy) * 3 + dx) * x(c, st, sy, sx);
                }
          conv(f, t, y, xx) = std::max(acc, 0.0);
        }
  const auto To = (T - tk) / ts + 1, Ho = H / 2, Wo = W / 2;
  std::vector<double> flat;
  for (Eigen::Index f = 0; f < F; ++f)
    for (Eigen::Index t = 0; t < To; ++t)
      for (Eigen::Index y = 0; y < Ho; ++y)
        for (Eigen::Index xx = 0; xx < Wo; ++xx) {
          double m = -std::numeric_limits<double>::infinity();
          for (int a = 0; a < tk; ++a)
            for (int b = 0; b < 2; ++b)
              for (int d = 0; d < 2; ++d) m = std::max(m, conv(f, t * ts + a, 2 * y + b, 2 * xx + d));
          flat.push_back(m);
        }
  const auto& fc = p.layers[3];
  Vector out = fc.bias;
  for (Eigen::Index o = 0; o < fc.weight.rows(); ++o)
    for (std::size_t i = 0; i < flat.size(); ++i) out(o) += fc.weight(o, static_cast<Eigen::Index>(i)) * flat[i];
  return out;
}

TEST(Forward, ZeroNetworkGivesUniformProbabilities) {
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  auto p = init_params(arch, 1);
  for (auto& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const auto s = forward(p, random_input(arch.input, 2));
  EXPECT_TRUE(s.logits.isZero(0.0));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.probs(i), 1.0 / 3.0, 1e-15);
}

TEST(Forward, DeltaKernelConvIsIdentity) {
  const Architecture arch{{2, 4, 5, 6}, {LayerSpec::conv(2), LayerSpec::fc(2)}};
  auto p = init_params(arch, 3);
  p.layers[0].weight.setZero();
  p.layers[0].bias.setZero();
  for (int c = 0; c < 2; ++c) p.layers[0].weight(c, c * 27 + 13) = 1.0;
  const auto x = random_input(arch.input, 4);
  ForwardCache cache;
  forward(p, x, &cache);
  const Vector& conv_out = cache.activations[1];
  ASSERT_EQ(conv_out.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_EQ(conv_out(i), x.data()[i]);
}

TEST(Forward, MatchesNestedLoopOracle) {
  for (int tk : {1, 2}) {
    const Architecture arch{{2, 6, 6, 7},
                            {LayerSpec::conv(3), LayerSpec::relu(), LayerSpec::pool(tk, tk), LayerSpec::fc(4)}};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto p = init_params(arch, seed);
      std::mt19937_64 eng(seed + 100);
      std::uniform_real_distribution<double> u(-0.2, 0.2);
      for (auto& l : p.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(eng);
      const auto x = random_input(arch.input, seed + 7);
      const Vector want = naive_forward(p, x, tk, tk);
      const Vector got = forward(p, x).logits;
      EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  const auto p = init_params(arch, 5);
  ForwardCache cache;
  forward(p, random_input(arch.input, 6), &cache);
  auto g = zero_gradients(p);
  backward(p, cache, Vector::Zero(3), g);
  for (const auto& l : g) {
    EXPECT_TRUE(l.weight.isZero(0.0));
    EXPECT_TRUE(l.bias.isZero(0.0));
  }
}

TEST(Backward, PoolRoutesToArgmaxOnly) {
  // pool -> fc: the input gradient is nonzero only at each window's argmax and
  // sums to the pooled gradient.
  const Architecture arch{{1, 2, 4, 4}, {LayerSpec::pool(2, 2), LayerSpec::fc(2)}};
  auto p = init_params(arch, 7);
  const auto x = random_input(arch.input, 8);
  ForwardCache cache;
  forward(p, x, &cache);
  Vector dlogits(2);
  dlogits << 0.7, -0.2;
  auto g = zero_gradients(p);
  Vector dx;
  backward(p, cache, dlogits, g, &dx);
  const Vector dpool = p.layers[1].weight.transpose() * dlogits;
  EXPECT_NEAR(dx.sum(), dpool.sum(), 1e-12);
  for (Eigen::Index y = 0; y < 2; ++y)
    for (Eigen::Index xx = 0; xx < 2; ++xx) {
      Eigen::Index arg = -1;
      double best = -1e300;
      for (int t = 0; t < 2; ++t)
        for (int b = 0; b < 2; ++b)
          for (int d = 0; d < 2; ++d) {
            const Eigen::Index idx = (t * 4 + 2 * y + b) * 4 + 2 * xx + d;
            if (x.data()[idx] > best) {
              best = x.data()[idx];
              arg = idx;
            }
          }
      for (int t = 0; t < 2; ++t)
        for (int b = 0; b < 2; ++b)
          for (int d = 0; d < 2; ++d) {
            const Eigen::Index idx = (t * 4 + 2 * y + b) * 4 + 2 * xx + d;
            if (idx == arg) {
              EXPECT_NEAR(dx(idx), dpool(y * 2 + xx), 1e-15);
            } else {
              EXPECT_EQ(dx(idx), 0.0);
            }
          }
    }
}

TEST(Backward, ReluAtZeroTakesZeroSubgradient) {
  const Architecture arch{{1, 1, 1, 2}, {LayerSpec::fc(2), LayerSpec::relu(), LayerSpec::fc(2)}};
  auto p = init_params(arch, 9);
  p.layers[0].weight.setZero();
  p.layers[0].bias.setZero();
  InputTensor x(1, 1, 1, 2);
  x.setConstant(1.0);
  ForwardCache cache;
  forward(p, x, &cache);
  auto g = zero_gradients(p);
  Vector dlogits(2);
  dlogits << 1.0, -1.0;
  backward(p, cache, dlogits, g);
  EXPECT_TRUE(g[0].weight.isZero(0.0));
  EXPECT_TRUE(g[0].bias.isZero(0.0));
}

TEST(GradCheck, TinyNetworkMatchesFiniteDifferences) {
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  ASSERT_LE(arch.parameter_count(), 5000u);
  const auto r = check_network_gradients(arch, 2, 10);
  EXPECT_TRUE(r.passed()) << r.worst;
}

TEST(ArchitectureTest, ShapesAndParameterCount) {
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  const auto shapes = arch.output_shapes();
  EXPECT_EQ(shapes[2], (Shape{4, 4, 4, 4}));
  EXPECT_EQ(shapes[5], (Shape{8, 2, 2, 2}));
  // conv 4*(27+1), conv 8*(4*27+1), fc 16*(64+1), fc 3*(16+1)
  EXPECT_EQ(arch.parameter_count(), 112u + 872u + 1040u + 51u);
  EXPECT_EQ(arch.head_layer(), 8u);
}

TEST(ArchitectureTest, C3dLayoutShapes) {
  const auto arch = c3d_architecture(21);
  const auto shapes = arch.output_shapes();
  // pool5 output 512 x 1 x 4 x 5 feeds fc6.
  EXPECT_EQ(shapes[20], (Shape{512, 1, 4, 5}));
  EXPECT_EQ(arch.num_outputs(), 21);
}

TEST(ArchitectureTest, RejectsIncompatibleChains) {
  EXPECT_THROW((Architecture{{1, 1, 1, 1}, {LayerSpec::pool(2, 2), LayerSpec::fc(2)}}).validate(),
               std::invalid_argument);
  EXPECT_THROW((Architecture{{1, 4, 4, 4}, {LayerSpec::conv(2)}}).validate(), std::invalid_argument);
}

TEST(Init, DeterministicZeroBiasAndHeVariance) {
  const Architecture arch{{4, 8, 8, 8}, {LayerSpec::conv(16), LayerSpec::relu(), LayerSpec::fc(2)}};
  const auto a = init_params(arch, 11), b = init_params(arch, 11);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_TRUE((a.layers[i].weight.array() == b.layers[i].weight.array()).all());
    EXPECT_TRUE(a.layers[i].bias.isZero(0.0));
  }
  const auto& w = a.layers[0].weight;  // 16 x 108 = 1728 entries
  ASSERT_GE(w.size(), 1000);
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size());
  const double want = 2.0 / 108.0;
  EXPECT_NEAR(var, want, 0.2 * want);
}

TEST(Sgd, WeightDecayShrinksWeightsExactly) {
  const Architecture arch{{1, 1, 1, 3}, {LayerSpec::fc(2)}};
  auto p = init_params(arch, 12);
  p.layers[0].bias << 0.5, -0.5;
  const auto before = p;
  SgdConfig cfg;
  cfg.base_lr = cfg.head_lr = 1e-2;
  cfg.momentum = 0.0;
  cfg.weight_decay = 5e-4;
  SgdOptimizer opt(cfg, p);
  opt.step(p, zero_gradients(p));
  const double factor = 1.0 - 1e-2 * 5e-4;
  for (Eigen::Index i = 0; i < p.layers[0].weight.size(); ++i) {
    EXPECT_DOUBLE_EQ(p.layers[0].weight.data()[i], before.layers[0].weight.data()[i] * factor);
  }
  EXPECT_EQ(p.layers[0].bias, before.layers[0].bias);
}

TEST(Sgd, LearningRateDropSchedule) {
  SgdConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.head_lr = 1e-2;
  cfg.lr_drop_factor = 10.0;
  cfg.drop_interval = 100;
  cfg.iterations = 300;
  const Architecture arch{{1, 1, 1, 2}, {LayerSpec::fc(2)}};
  SgdOptimizer opt(cfg, init_params(arch, 1));
  EXPECT_DOUBLE_EQ(opt.learning_rate(0, false), 1e-4);
  EXPECT_DOUBLE_EQ(opt.learning_rate(99, true), 1e-2);
  EXPECT_NEAR(opt.learning_rate(100, true), 1e-3, 1e-18);
  EXPECT_NEAR(opt.learning_rate(250, false), 1e-6, 1e-20);
}

// Two Gaussian clouds separated along the first feature.
std::vector<TrainingExample> separable_data(int n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    TrainingExample ex;
    ex.label = i % 2;
    ex.input = InputTensor(1, 1, 1, 2);
    ex.input(0, 0, 0, 0) = (ex.label ? 1.5 : -1.5) + noise(eng);
    ex.input(0, 0, 0, 1) = noise(eng);
    out.push_back(std::move(ex));
  }
  return out;
}

SgdConfig toy_sgd(int iterations) {
  SgdConfig cfg;
  cfg.base_lr = cfg.head_lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.iterations = iterations;
  cfg.drop_interval = std::max(iterations, 1);
  cfg.batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

TEST(Train, LinearlySeparableConverges) {
  const auto data = separable_data(64, 13);
  const Architecture arch{{1, 1, 1, 2}, {LayerSpec::fc(2)}};
  const auto r = train(arch, data, toy_sgd(500), LossConfig{.mode = LossMode::softmax_only});
  const double final_loss = loss_and_gradients(r.params, data, LossConfig{.mode = LossMode::softmax_only}, nullptr).total;
  EXPECT_LT(final_loss, 0.1);
  for (double l : r.log.loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_EQ(r.log.loss.size(), 500u);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto data = separable_data(40, 14);
  const auto arch = Architecture{{1, 1, 1, 2}, {LayerSpec::fc(4), LayerSpec::relu(), LayerSpec::fc(2)}};
  const auto a = train(arch, data, toy_sgd(50), LossConfig{});
  const auto b = train(arch, data, toy_sgd(50), LossConfig{});
  for (std::size_t i = 0; i < a.params.layers.size(); ++i) {
    EXPECT_TRUE((a.params.layers[i].weight.array() == b.params.layers[i].weight.array()).all());
    EXPECT_TRUE((a.params.layers[i].bias.array() == b.params.layers[i].bias.array()).all());
  }
}

TEST(Train, ZeroIterationsReturnsInit) {
  const auto data = separable_data(8, 15);
  const Architecture arch{{1, 1, 1, 2}, {LayerSpec::fc(2)}};
  const auto init = init_params(arch, 99);
  const auto r = train(arch, data, toy_sgd(0), LossConfig{}, init);
  EXPECT_EQ(r.params.layers[0].weight, init.layers[0].weight);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Train, DivergenceIsNumericError) {
  const auto data = separable_data(16, 16);
  const Architecture arch{{1, 1, 1, 2}, {LayerSpec::fc(8), LayerSpec::relu(), LayerSpec::fc(2)}};
  auto cfg = toy_sgd(200);
  cfg.base_lr = cfg.head_lr = 1e6;
  EXPECT_THROW(train(arch, data, cfg, LossConfig{}), NumericError);
}

class CheckpointFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = std::filesystem::temp_directory_path() /
            ("scnn_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".json");
  }
  void TearDown() override { std::filesystem::remove(path_); }
  std::filesystem::path path_;
};

TEST_F(CheckpointFiles, RoundTripIsExact) {
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  const auto p = init_params(arch, 17);
  save_checkpoint(path_, p, SgdConfig{}, 123);
  const auto q = load_checkpoint(path_, arch);
  const auto x = random_input(arch.input, 18);
  EXPECT_TRUE((forward(p, x).logits.array() == forward(q, x).logits.array()).all());
}

TEST_F(CheckpointFiles, FingerprintMismatchIsRejected) {
  const auto p = init_params(tiny_architecture({1, 8, 8, 8}, 3), 19);
  save_checkpoint(path_, p, SgdConfig{}, 1);
  EXPECT_THROW(load_checkpoint(path_, tiny_architecture({1, 8, 8, 8}, 2)), ConfigError);
}

TEST_F(CheckpointFiles, GarbageIsConfigError) {
  std::ofstream(path_) << "{\"format\": \"other\"}";
  EXPECT_THROW(load_checkpoint(path_), ConfigError);
}

}  // namespace
}  // namespace scnn
