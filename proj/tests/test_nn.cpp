#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "deepway/datagen.hpp"
#include "deepway/nn/adam.hpp"
#include "deepway/nn/loss.hpp"
#include "deepway/nn/targets.hpp"
#include "deepway/nn/train.hpp"
#include "deepway/nn/weights.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace deepway;
using namespace deepway::nn;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Conv, MatchesDirectLoops) {
  Rng rng(1);
  for (int stride : {1, 2}) {
    auto x = oracle::random_tensor({1, 2, 6, 6}, rng);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor({3}, rng);
    EXPECT_LT(max_abs_diff(conv2d(x, w, b, stride), oracle::conv2d(x, w, b, stride)), 1e-12);
  }
  // Odd sizes and even kernels exercise the asymmetric stride-2 padding.
  auto x = oracle::random_tensor({2, 3, 9, 7}, rng);
  auto w = oracle::random_tensor({2, 3, 5, 5}, rng);
  auto b = oracle::random_tensor({2}, rng);
  EXPECT_LT(max_abs_diff(conv2d(x, w, b, 2), oracle::conv2d(x, w, b, 2)), 1e-12);
  EXPECT_LT(max_abs_diff(conv2d(x, w, b, 1), oracle::conv2d(x, w, b, 1)), 1e-12);
}

TEST(Conv, IdentityKernel) {
  Rng rng(2);
  auto x = oracle::random_tensor({1, 1, 5, 4}, rng);
  Tensor<double> w({1, 1, 1, 1}, 1.0), b({1});
  EXPECT_EQ(conv2d(x, w, b, 1), x);
}

TEST(Conv, ZeroInputGivesBias) {
  Tensor<double> x({1, 2, 4, 4});
  Rng rng(3);
  auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor<double> b({3}, std::vector<double>{0.5, -1.0, 2.0});
  const auto y = conv2d(x, w, b, 1);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(0, c, i, j), b[c]);
}

TEST(Conv, ShapeErrors) {
  Tensor<double> x({1, 2, 4, 4}), w({3, 1, 3, 3}), b({3});
  EXPECT_THROW(conv2d(x, w, b, 1), shape_error);
}

TEST(TransposeConv, DoublesSpatialSize) {
  Rng rng(4);
  auto x = oracle::random_tensor({2, 3, 5, 4}, rng);
  auto w = oracle::random_tensor({3, 2, 5, 5}, rng);
  const auto y = transpose_conv2d(x, w, Tensor<double>({2}));
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{2, 2, 10, 8}));
}

TEST(TransposeConv, IsAdjointOfStridedConv) {
  Rng rng(5);
  for (int k : {3, 5}) {
    auto x = oracle::random_tensor({2, 2, 8, 6}, rng);
    auto w = oracle::random_tensor({3, 2, std::size_t(k), std::size_t(k)}, rng);
    auto y = oracle::random_tensor({2, 3, 4, 3}, rng);
    const double lhs = inner_product(oracle::conv2d(x, w, Tensor<double>(), 2), y);
    const double rhs = inner_product(x, transpose_conv2d(y, w, Tensor<double>()));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST(TransposeConv, ZeroInputGivesBias) {
  Tensor<double> x({1, 2, 3, 3});
  Rng rng(6);
  auto w = oracle::random_tensor({2, 2, 5, 5}, rng);
  Tensor<double> b({2}, std::vector<double>{0.25, -3.0});
  const auto y = transpose_conv2d(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], i < 36 ? 0.25 : -3.0);
}

TEST(Mish, Values) {
  EXPECT_EQ(mish(0.0), 0.0);
  EXPECT_NEAR(mish(20.0), 20.0, 1e-6);
  const long double x = -1.0L;
  const long double expected = x * std::tanh(std::log1p(std::exp(x)));
  EXPECT_NEAR(mish(-1.0), double(expected), 1e-15);
  EXPECT_NEAR(mish(-1.0), -0.3034, 5e-5);
  EXPECT_TRUE(std::isfinite(mish(-800.0)));
  EXPECT_TRUE(std::isfinite(mish(800.0)));
}

TEST(Attention, ConstantInputPoolsAgree) {
  const std::size_t c = 4;
  Tensor<double> x({1, c, 3, 3});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < 9; ++i) x[ch * 9 + i] = 0.5 + ch;
  Rng rng(7);
  auto w1 = oracle::random_tensor({1, c}, rng), b1 = oracle::random_tensor({1}, rng);
  auto w2 = oracle::random_tensor({c, 1}, rng), b2 = oracle::random_tensor({c}, rng);
  ChannelAttentionCache<double> cc;
  channel_attention(x, w1, b1, w2, b2, &cc);
  for (std::size_t i = 0; i < c; ++i) EXPECT_DOUBLE_EQ(cc.avg[i], cc.max[i]);
  EXPECT_EQ(cc.hidden_avg, cc.hidden_max);

  Tensor<double> flat({1, 3, 4, 4}, 2.0);
  SpatialAttentionCache<double> sc;
  spatial_attention(flat, oracle::random_tensor({1, 2, 3, 3}, rng), &sc);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(sc.pooled[i], sc.pooled[16 + i]);
}

TEST(Attention, ReductionClamp) {
  std::ostringstream warn;
  const auto s = ChannelAttentionShape::make(8, 16, &warn);
  EXPECT_EQ(s.hidden, 8);
  EXPECT_NE(warn.str().find("warning"), std::string::npos);
  EXPECT_EQ(ChannelAttentionShape::make(32, 16, nullptr).hidden, 2);
}

TEST(Gradients, MatchFiniteDifferences) {
  for (const auto& r : gradcheck::all(11)) EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
}

TEST(ModelShape, PaperConfiguration) {
  Model<float> m(ModelConfig{}, nullptr);
  m.initialize(1);
  EXPECT_LT(m.parameter_count(), 60000u);
  EXPECT_EQ(m.config().k(), 8);
  const auto y = m.forward(Tensor<float>({1, 1, 800, 800}));
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{1, 3, 100, 100}));
}

TEST(ModelShape, DeskConfiguration) {
  ModelConfig c;
  c.input_size = 256;
  Model<float> m(c, nullptr);
  m.initialize(2);
  OccupancyGrid g(256, 256);
  const auto p = predict(m, g);
  EXPECT_EQ(p.u_h, 32);
  EXPECT_EQ(p.u_w, 32);
  for (std::size_t i = 0; i < p.p.size(); ++i) {
    EXPECT_GE(p.p[i], 0.0);
    EXPECT_LE(p.p[i], 1.0);
    EXPECT_GE(p.dx[i], -1.0);
    EXPECT_LE(p.dx[i], 1.0);
  }
  EXPECT_THROW(m.forward(Tensor<float>({1, 1, 128, 128})), shape_error);
}

TEST(ModelInit, Deterministic) {
  auto c = gradcheck::tiny_config();
  Model<float> a(c, nullptr), b(c, nullptr);
  a.initialize(9);
  b.initialize(9);
  EXPECT_EQ(a.parameters(), b.parameters());
  b.initialize(10);
  EXPECT_NE(a.parameters(), b.parameters());
}

TEST(Targets, Examples) {
  const auto t = encode_targets<double>({{28, 36}, {0, 0}}, 64, 8);
  EXPECT_EQ(t.at(0, 0, 4, 3), 1.0);
  EXPECT_NEAR(t.at(0, 1, 4, 3), 0.0, 1e-15);
  EXPECT_NEAR(t.at(0, 2, 4, 3), 0.0, 1e-15);
  EXPECT_EQ(t.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(t.at(0, 1, 0, 0), -1.0);
  EXPECT_EQ(t.at(0, 2, 0, 0), -1.0);
  double total = 0;
  for (std::size_t i = 0; i < 64; ++i) total += t[i];
  EXPECT_EQ(total, 2.0);
}

TEST(Targets, CollisionKeepsFirst) {
  std::size_t collisions = 0;
  const auto t = encode_targets<double>({{1, 1}, {6, 6}}, 16, 8, &collisions);
  EXPECT_EQ(collisions, 1u);
  EXPECT_NEAR(t.at(0, 1, 0, 0), 2 * (1 / 8.0) - 1, 1e-15);
  EXPECT_THROW(encode_targets<double>({{16, 1}}, 16, 8), bounds_error);
  EXPECT_THROW(encode_targets<double>({}, 20, 8), config_error);
}

TEST(Loss, Examples) {
  Tensor<double> y({1, 3, 1, 1}, std::vector<double>{1, 0, 0}), p({1, 3, 1, 1});
  EXPECT_NEAR(waypoint_loss(y, p, {}), 0.7, 1e-15);
  EXPECT_EQ(waypoint_loss(y, y, {}), 0.0);
  Tensor<double> e({1, 3, 1, 1}), q({1, 3, 1, 1}, std::vector<double>{0.5, 0.9, -0.9});
  EXPECT_NEAR(waypoint_loss(e, q, {}), 0.075, 1e-15);
  EXPECT_THROW(waypoint_loss(e, Tensor<double>({1, 3, 2, 1}), {}), shape_error);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto y = oracle::random_tensor({2, 3, 3, 3}, rng);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) y[n * 27 + i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  auto p = oracle::random_tensor(y.shape(), rng);
  Tensor<double> g;
  waypoint_loss(y, p, {}, &g);
  EXPECT_LT(oracle::gradient_error([&] { return waypoint_loss(y, p, {}); }, p, g, 100), 1e-6);
}

TEST(Adam, FirstStepIsLearningRate) {
  std::vector<Tensor<double>> params{Tensor<double>({1}, 0.0)}, grads{Tensor<double>({1}, 1.0)};
  auto s = AdamState<double>::for_parameters(params);
  adam_step(params, grads, s, AdamConfig{});
  EXPECT_NEAR(params[0][0], -3e-4, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<Tensor<double>> params{Tensor<double>({2}, 1.5)}, grads{Tensor<double>({2}, 1.0)};
  auto s = AdamState<double>::for_parameters(params);
  adam_step(params, grads, s, AdamConfig{});
  const auto after_one = params;
  const double m = s.m[0][0], v = s.v[0][0];
  grads[0].fill(0.0);
  adam_step(params, grads, s, AdamConfig{});
  EXPECT_NEAR(s.m[0][0], 0.9 * m, 1e-15);
  EXPECT_NEAR(s.v[0][0], 0.999 * v, 1e-15);
  // Momentum still moves the parameter; a fresh state with zero gradient does not.
  std::vector<Tensor<double>> fresh{Tensor<double>({2}, 1.5)};
  auto s2 = AdamState<double>::for_parameters(fresh);
  adam_step(fresh, grads, s2, AdamConfig{});
  EXPECT_EQ(fresh[0][0], 1.5);
  EXPECT_NE(after_one[0][0], 1.5);
}

TEST(Adam, QuadraticDecreases) {
  std::vector<Tensor<double>> w{Tensor<double>({1}, 1.0)};
  auto s = AdamState<double>::for_parameters(w);
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    std::vector<Tensor<double>> g{Tensor<double>({1}, 2 * w[0][0])};
    adam_step(w, g, s, cfg);
    const double f = w[0][0] * w[0][0];
    EXPECT_LT(f, prev);
    prev = f;
  }
}

TEST(Adam, RejectsNonFinite) {
  std::vector<Tensor<double>> w{Tensor<double>({1}, 1.0)}, g{Tensor<double>({1}, std::nan(""))};
  auto s = AdamState<double>::for_parameters(w);
  EXPECT_THROW(adam_step(w, g, s, AdamConfig{}), training_error);
  EXPECT_EQ(w[0][0], 1.0);
  EXPECT_EQ(s.step, 0);
}

namespace {

SampleSource small_fields(std::size_t n, int size, const ModelConfig& mc) {
  std::vector<Sample> samples;
  auto fp = FieldParams::for_size(size);
  for (std::size_t i = 0; i < n; ++i) samples.push_back(make_sample(generate_field(mix_seed(5, i), fp), mc));
  return in_memory_source(std::move(samples));
}

}  // namespace

TEST(Train, ZeroEpochsReturnsInitialWeights) {
  ModelConfig mc;
  mc.input_size = 64;
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 4;
  const auto r = train(small_fields(2, 64, mc), mc, tc);
  EXPECT_TRUE(r.epoch_loss.empty());
  Model<float> init(mc, nullptr);
  init.initialize(mix_seed(4, 0));
  EXPECT_EQ(r.model.parameters(), init.parameters());
}

TEST(Train, OverfitsSmallSubset) {
  ModelConfig mc;
  mc.input_size = 64;
  TrainConfig tc;
  tc.epochs = 100;
  tc.seed = 1;
  const auto r = train(small_fields(16, 64, mc), mc, tc);
  ASSERT_EQ(r.epoch_loss.size(), 100u);
  EXPECT_LE(r.epoch_loss.back(), 0.5 * r.epoch_loss.front());
}

TEST(Train, Deterministic) {
  ModelConfig mc;
  mc.input_size = 64;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  tc.seed = 8;
  const auto a = train(small_fields(5, 64, mc), mc, tc), b = train(small_fields(5, 64, mc), mc, tc);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
}

TEST(Weights, RoundTripIsByteIdentical) {
  const auto dir = fs::temp_directory_path() / "deepway_test_weights";
  fs::create_directories(dir);
  Model<float> m(gradcheck::tiny_config(), nullptr);
  m.initialize(3);
  save_weights(m, dir / "a.dway");
  const auto loaded = load_weights(dir / "a.dway", nullptr);
  EXPECT_EQ(loaded.parameters(), m.parameters());
  EXPECT_EQ(loaded.config(), m.config());
  save_weights(loaded, dir / "b.dway");
  EXPECT_EQ(slurp(dir / "a.dway"), slurp(dir / "b.dway"));
}

TEST(Weights, EmptyAndCorruptFiles) {
  const auto dir = fs::temp_directory_path() / "deepway_test_weights_bad";
  fs::create_directories(dir);
  { std::ofstream(dir / "empty.dway"); }
  EXPECT_THROW(load_weights(dir / "empty.dway", nullptr), format_error);
  EXPECT_THROW(load_weights(dir / "missing.dway", nullptr), format_error);

  Model<float> m(gradcheck::tiny_config(), nullptr);
  m.initialize(3);
  auto bytes = serialize_weights(m);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize_weights<float>(flipped, nullptr), integrity_error);
  auto bad_crc = bytes;
  bad_crc.back() ^= 0x80;
  EXPECT_THROW(deserialize_weights<float>(bad_crc, nullptr), integrity_error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_weights<float>(bad_magic, nullptr), format_error);
  bytes.resize(bytes.size() - 10);
  EXPECT_THROW(deserialize_weights<float>(bytes, nullptr), format_error);
}

TEST(Weights, DoubleCastKeepsValues) {
  Model<float> m(gradcheck::tiny_config(), nullptr);
  m.initialize(5);
  const auto d = m.cast<double>();
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    for (std::size_t j = 0; j < m.parameters()[i].size(); ++j) EXPECT_EQ(double(m.parameters()[i][j]), d.parameters()[i][j]);
}
