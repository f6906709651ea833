#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eipnet/grad_check.hpp"
#include "eipnet/synth.hpp"
#include "eipnet/trainer.hpp"

using namespace eipnet;

namespace {

ParamSet<double> single(Tensor<double> v) {
  ParamSet<double> p;
  p.add("w", std::move(v));
  return p;
}

std::vector<ImageF> toy_faces(int identities, int per_identity) {
  const auto d = synth_faces(77, identities, per_identity);
  std::vector<ImageF> out;
  for (const auto& img : d.images) out.push_back(prepare_hr(to_float(img), CropPolicy::celeba_178));
  return out;
}

TrainConfig toy_config(const std::string& out_dir) {
  TrainConfig c;
  c.width_divisor = 16;
  c.disc_width_divisor = 16;
  c.batch_size = 2;
  c.weights.alpha = 0;
  c.phase1_iters = 4;
  c.phase2_iters = 7;
  c.checkpoint_interval = 3;
  c.out_dir = out_dir;
  return c;
}

template <class T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return std::ranges::equal(a.data(), b.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("eipnet_trainer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = single(Tensor<double>({1, 1, 2, 2}, 0.5));
  AdamState<double> s(p);
  adam_step(p, {Tensor<double>({1, 1, 2, 2})}, s, AdamConfig{});
  EXPECT_EQ(s.t, 1u);
  for (double v : p.value(0).data()) EXPECT_EQ(v, 0.5);
}

TEST(Adam, FirstStepArithmetic) {
  auto p = single(Tensor<double>({1, 1, 1, 1}, 0.0));
  AdamState<double> s(p);
  adam_step(p, {Tensor<double>({1, 1, 1, 1}, 1.0)}, s, AdamConfig{});
  EXPECT_NEAR(p.value(0)[0], -1e-4 / (1 + 1e-8), 1e-18);
  EXPECT_NEAR(s.m[0][0], 0.1, 1e-15);
  EXPECT_NEAR(s.v[0][0], 0.001, 1e-15);
}

TEST(Adam, FirstStepScaleInvariant) {
  const auto g = random_tensor<double>({1, 2, 3, 3}, 3);
  auto g10 = g;
  for (auto& v : g10.data()) v *= 10;
  auto a = single(Tensor<double>({1, 2, 3, 3})), b = a;
  AdamState<double> sa(a), sb(b);
  adam_step(a, std::vector{g}, sa, AdamConfig{});
  adam_step(b, std::vector{g10}, sb, AdamConfig{});
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(a.value(0)[i], b.value(0)[i], 1e-6 * 1e-4);
}

TEST(Adam, UpdateBoundedAndSecondMomentNonNegative) {
  const AdamConfig c{1e-3, 0.9, 0.999, 1e-8};
  auto p = single(Tensor<double>({1, 1, 4, 4}));
  AdamState<double> s(p);
  Philox rng(5);
  for (int step = 0; step < 300; ++step) {
    Tensor<double> g({1, 1, 4, 4});
    // Bursts of large gradients after quiet stretches stress the bound.
    const double scale = step % 50 == 49 ? 1e3 : 1e-3;
    for (auto& v : g.data()) v = scale * rng.normal();
    const auto before = p.value(0);
    adam_step(p, {g}, s, c);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ASSERT_LE(std::abs(p.value(0)[i] - before[i]), c.lr / (1 - c.beta1));
      ASSERT_GE(s.v[0][i], 0.0);
    }
  }
}

TEST(Adam, ShapeMismatch) {
  auto p = single(Tensor<double>({1, 1, 2, 2}));
  AdamState<double> s(p);
  EXPECT_THROW(adam_step(p, {Tensor<double>({1, 1, 2, 3})}, s, AdamConfig{}), ShapeError);
  EXPECT_THROW(adam_step(p, {}, s, AdamConfig{}), ShapeError);
}

TEST(Config, DefaultsParseAndRoundtrip) {
  const TrainConfig d;
  EXPECT_EQ(d.lr, 1e-4);
  EXPECT_EQ(d.batch_size, 16);
  EXPECT_EQ(d.phase1_iters, 20000);
  EXPECT_EQ(d.phase2_iters, 22000);
  EXPECT_EQ(d.d_beta1, 0.5);
  EXPECT_EQ(d.d_beta2, 0.9);

  const TrainConfig c = parse_config(
      "# toy\n"
      "seed = 9\n"
      "lr=3e-4   # faster\n"
      "phase1_iters = 10\nphase2_iters = 12\n"
      "edge_blocks = 1,0,1\n"
      "use_lc = false\n"
      "canny_mode = fixed\ncanny_low = 20\ncanny_high = 40\n"
      "crop_policy = fraction_0.7_min_side\n"
      "element_type = float64\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.lr, 3e-4);
  EXPECT_EQ(c.edge_blocks, (std::array<bool, 3>{true, false, true}));
  EXPECT_FALSE(c.use_lc);
  EXPECT_EQ(c.canny.mode, ThresholdPolicy::Mode::fixed);
  EXPECT_EQ(c.canny.high, 40);
  EXPECT_EQ(c.crop_policy, CropPolicy::fraction_0_7);
  EXPECT_EQ(c.element_type, ElementType::float64);
  EXPECT_EQ(format_config(parse_config(format_config(c))), format_config(c));
  EXPECT_EQ(format_config(parse_config(format_config(d))), format_config(d));
}

TEST(Config, Errors) {
  try {
    parse_config("seed = 1\nlearning_rate = 2\n");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("'learning_rate'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_config("seed\n"), ValueError);
  EXPECT_THROW(parse_config("lr = fast\n"), ValueError);
  EXPECT_THROW(parse_config("lr = -1\n"), ValueError);
  EXPECT_THROW(parse_config("phase1_iters = 10\nphase2_iters = 5\n"), ValueError);
  EXPECT_THROW(parse_config("edge_blocks = 1,2,0\n"), ValueError);
  EXPECT_THROW(load_config("/nonexistent/eipnet.cfg"), Error);
}

TEST(Train, PhaseScheduleAndCheckpoints) {
  const auto dir = fresh_dir("schedule");
  const auto faces = toy_faces(2, 3);
  const TrainConfig cfg = toy_config(dir.string());
  const TrainOutcome out = train<float>(cfg, faces);
  ASSERT_EQ(out.exit_code, 0) << out.message;
  ASSERT_EQ(out.log.size(), 7u);
  for (long i = 0; i < 7; ++i) {
    const auto& r = out.log[i].report;
    EXPECT_EQ(out.log[i].iteration, i);
    if (i < cfg.phase1_iters) {
      EXPECT_EQ(r.l_ad_g, 0.0);
      EXPECT_EQ(r.l_ad_d, 0.0);
    } else {
      EXPECT_GT(r.l_ad_g, 0.0);
      EXPECT_GT(r.l_ad_d, 0.0);
    }
    const double expect = r.l_rgb + cfg.weights.gamma * r.l_e + r.l_lc + cfg.weights.alpha * r.l_id +
                          (i < cfg.phase1_iters ? 0.0 : cfg.weights.beta * r.l_ad_g);
    EXPECT_NEAR(r.total, expect, 1e-5 * expect);
  }
  for (long it : {0L, 3L, 4L, 6L, 7L}) EXPECT_TRUE(std::filesystem::exists(dir / checkpoint_name(it))) << it;
  EXPECT_FALSE(std::filesystem::exists(dir / checkpoint_name(5)));

  const DiscriminatorSpec dspec = discriminator_spec(cfg);
  const auto d0 = take_params<float>(load_checkpoint(dir / checkpoint_name(0)), "discriminator", dspec.layers());
  const auto d4 = take_params<float>(load_checkpoint(dir / checkpoint_name(4)), "discriminator", dspec.layers());
  const auto d7 = take_params<float>(load_checkpoint(dir / checkpoint_name(7)), "discriminator", dspec.layers());
  bool changed = false;
  for (std::size_t i = 0; i < d0.size(); ++i) {
    EXPECT_TRUE(same_values(d0.value(i), d4.value(i))) << d0.name(i);
    changed |= !same_values(d0.value(i), d7.value(i));
  }
  EXPECT_TRUE(changed);

  const auto g0 = load_generator<float>(load_checkpoint(dir / checkpoint_name(0)));
  const auto g4 = load_generator<float>(load_checkpoint(dir / checkpoint_name(4)));
  EXPECT_FALSE(same_values(g0.second.value(0), g4.second.value(0)));

  const std::string log = slurp(dir / "train_log.csv");
  EXPECT_EQ(log.rfind(train_log_header(), 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 8);
}

TEST(Train, DeterministicBytes) {
  const auto faces = toy_faces(2, 2);
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  train<float>(toy_config(a.string()), faces);
  train<float>(toy_config(b.string()), faces);
  for (long it : {0L, 3L, 4L, 6L, 7L}) {
    EXPECT_TRUE(slurp(a / checkpoint_name(it)) == slurp(b / checkpoint_name(it))) << it;
  }
  EXPECT_TRUE(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));

  TrainConfig other = toy_config(fresh_dir("det_c").string());
  other.seed = 2;
  train<float>(other, faces);
  EXPECT_FALSE(slurp(a / checkpoint_name(7)) == slurp(std::filesystem::path(other.out_dir) / checkpoint_name(7)));
}

TEST(Train, ToyLossDecreases) {
  const auto faces = toy_faces(8, 8);
  TrainConfig cfg = toy_config("");
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.phase1_iters = 200;
  cfg.phase2_iters = 200;
  const TrainOutcome out = train<float>(cfg, faces);
  ASSERT_EQ(out.exit_code, 0);
  auto window_mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += out.log[i].report.total;
    return s / 50;
  };
  EXPECT_LT(window_mean(150), window_mean(0));
}

TEST(Train, RejectsBadInputs) {
  TrainConfig cfg = toy_config("");
  EXPECT_THROW(train<float>(cfg, {}), ValueError);
  EXPECT_THROW(train<float>(cfg, {ImageF(64, 64)}), ShapeError);
  cfg.weights.alpha = 0.1;
  EXPECT_THROW(train<float>(cfg, toy_faces(1, 1)), ValueError);
}

TEST(Train, NonFiniteLossAborts) {
  auto faces = toy_faces(1, 2);
  faces[0].values[5] = std::numeric_limits<float>::quiet_NaN();
  faces[1].values[5] = std::numeric_limits<float>::quiet_NaN();
  const auto dir = fresh_dir("nan");
  TrainConfig cfg = toy_config(dir.string());
  cfg.weights.gamma = 0;
  const TrainOutcome out = train<float>(cfg, faces);
  EXPECT_EQ(out.exit_code, 2);
  EXPECT_EQ(out.iterations, 0);
  EXPECT_NE(out.message.find("non-finite"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / checkpoint_name(0)));
}

TEST(InitParams, HeStatistics) {
  const std::vector<LayerDesc> layers{{"big", LayerKind::conv, 512, 512, 3, 1, 4}};
  const auto p = init_params<double>(layers, 3);
  const auto& w = p.at("big.weight");
  double s = 0, ss = 0;
  for (double v : w.data()) s += v, ss += v * v;
  const double n = static_cast<double>(w.size());
  const double std = std::sqrt(ss / n - (s / n) * (s / n));
  EXPECT_NEAR(std, std::sqrt(2.0 / (512 * 9)), 0.05 * std::sqrt(2.0 / (512 * 9)));
  for (double v : p.at("big.bias").data()) EXPECT_EQ(v, 0.0);
  const auto again = init_params<double>(layers, 3);
  EXPECT_TRUE(same_values(again.at("big.weight"), w));
}
