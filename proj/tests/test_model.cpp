#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace sslb;
using sslb::testing::random_tensor;

TEST(ModelInit, SameSeedIsBitIdentical) {
  ModelConfig cfg;
  EXPECT_EQ(model_init(cfg, 7).flat_values(), model_init(cfg, 7).flat_values());
}

TEST(ModelInit, DifferentSeedsDiffer) {
  ModelConfig cfg;
  EXPECT_NE(model_init(cfg, 7).flat_values(), model_init(cfg, 8).flat_values());
}

TEST(ModelInit, BiasesStartAtZero) {
  ModelParams p = model_init(ModelConfig{}, 3);
  for (const char* name : {"fc0.bias", "fc1.bias"}) {
    for (double v : p.get(name).values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ModelInit, NonPositiveSpatialSizeIsConfigError) {
  ModelConfig cfg;
  cfg.input_size = 0;
  EXPECT_THROW(model_init(cfg, 1), ConfigError);
  ModelConfig no_classes;
  no_classes.num_classes = 0;
  EXPECT_THROW(model_init(no_classes, 1), ConfigError);
}

TEST(ModelForward, DefaultConfigHasTwoOutputs) {
  ModelParams p = model_init(ModelConfig{}, 1);
  std::mt19937_64 rng(1);
  Tensor out = model_forward(p, random_tensor({12, 3, 32, 32}, rng, 0, 1));
  EXPECT_EQ(out.shape(), (Shape{12, 2}));
}

TEST(ModelForward, SingleRowSumsToOne) {
  ModelParams p = model_init(ModelConfig{}, 2);
  std::mt19937_64 rng(2);
  Tensor out = model_forward(p, random_tensor({1, 3, 32, 32}, rng, 0, 1));
  EXPECT_NEAR(out[0] + out[1], 1.0, 1e-9);
}

TEST(ModelForward, DuplicateObservationsGiveIdenticalRows) {
  ModelParams p = model_init(ModelConfig{}, 3);
  std::mt19937_64 rng(3);
  Tensor img = random_tensor({3, 32, 32}, rng, 0, 1);
  Tensor other = random_tensor({3, 32, 32}, rng, 0, 1);
  std::vector<Tensor> batch{img, other, img};
  Tensor out = model_forward(p, stack_images(batch));
  EXPECT_EQ(out[0], out[4]);
  EXPECT_EQ(out[1], out[5]);
}

TEST(ModelForward, WrongSpatialSizeNamesExpected) {
  ModelParams p = model_init(ModelConfig{}, 1);
  try {
    model_forward(p, Tensor::zeros({1, 3, 28, 28}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("32"), std::string::npos) << e.what();
  }
}

TEST(ModelForward, LargeInputIsSupported) {
  ModelConfig cfg;
  cfg.input_size = 110;
  ModelParams p = model_init(cfg, 1);
  Tensor out = model_forward(p, Tensor::filled({2, 3, 110, 110}, 0.5));
  EXPECT_EQ(out.shape(), (Shape{2, 2}));
}

TEST(ModelForward, FrozenModeLeavesStatsUntouched) {
  ModelParams p = model_init(sslb::testing::tiny_config(8), 1);
  std::mt19937_64 rng(9);
  const auto before = p.stats[0].mean;
  model_forward(p, random_tensor({4, 3, 8, 8}, rng), ForwardMode::kFrozen);
  EXPECT_EQ(p.stats[0].mean, before);
  model_forward(p, random_tensor({4, 3, 8, 8}, rng), ForwardMode::kUpdateStats);
  EXPECT_NE(p.stats[0].mean, before);
}

TEST(ModelForward, GradientMatchesFiniteDifferences) {
  ModelParams p = model_init(sslb::testing::tiny_config(), 5);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 3, 4, 4}, rng, 0, 1);
  Tensor t = sslb::testing::random_labels(3, 2, rng);
  auto params = p.trainable();
  auto fn = [&](Tape* tape) { return ops::cross_entropy(t, model_forward(p, x, tape), {}, tape); };
  EXPECT_LE(gradient_check(fn, params, 1e-6), 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelParams p = model_init(ModelConfig{}, 4);
  std::mt19937_64 rng(4);
  model_forward(p, random_tensor({6, 3, 32, 32}, rng, 0, 1), ForwardMode::kUpdateStats);
  std::stringstream buf;
  save_checkpoint(p, buf);
  ModelParams q = model_init(ModelConfig{}, 99);
  load_checkpoint(q, buf);
  EXPECT_EQ(q.flat_values(), p.flat_values());
  for (std::size_t i = 0; i < p.stats.size(); ++i) {
    EXPECT_EQ(q.stats[i].mean, p.stats[i].mean);
    EXPECT_EQ(q.stats[i].var, p.stats[i].var);
  }
  Tensor x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  Tensor a = model_forward(p, x), b = model_forward(q, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  std::stringstream buf;
  save_checkpoint(model_init(ModelConfig{}, 1), buf);
  ModelConfig other;
  other.hidden_units = 16;
  ModelParams q = model_init(other, 1);
  EXPECT_ANY_THROW(load_checkpoint(q, buf));
}

// Capacity sanity: 12 labelled observations are memorized within 200 epochs.
TEST(ModelTraining, OverfitsTwelveObservations) {
  ImageDataset ds = generate_synthetic(5, 6, 32, 0.5);
  std::vector<Tensor> images;
  std::vector<std::vector<double>> labels;
  for (const auto& o : ds.observations) {
    images.push_back(o.image);
    labels.push_back(one_hot(static_cast<std::size_t>(o.label), 2));
  }
  Tensor x = stack_images(images), y = rows_to_tensor(labels);
  ModelParams p = model_init(ModelConfig{}, 1);
  auto params = p.trainable();
  OptimizerConfig opt;
  opt.max_lr = 3e-3;
  opt.weight_decay = 0.0;
  OptimizerState state;
  double acc = 0.0;
  for (int epoch = 0; epoch < 200 && acc < 1.0; ++epoch) {
    Tape tape;
    Tensor loss = ops::cross_entropy(y, model_forward(p, x, ForwardMode::kUpdateStats, &tape), {}, &tape);
    tape.backward(loss);
    adam_step(params, state, opt.max_lr, opt);
    const auto pred = predicted_classes(model_forward(p, x));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == static_cast<std::size_t>(ds.observations[i].label);
    acc = static_cast<double>(hits) / static_cast<double>(pred.size());
  }
  EXPECT_EQ(acc, 1.0);
}
