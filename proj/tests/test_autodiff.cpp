#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace sslb;
using sslb::testing::random_tensor;

namespace {

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

}  // namespace

TEST(Dense, IdentityWeights) {
  Tensor y = ops::dense(row({1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}));
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
}

TEST(Dense, HandArithmetic) {
  Tensor y = ops::dense(row({1, 1}), Tensor({2, 2}, {2, 3, 4, 5}), Tensor({2}, {1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 7.0);
  EXPECT_DOUBLE_EQ(y[1], 9.0);
}

TEST(Dense, ZeroInputGivesBias) {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor y = ops::dense(Tensor::zeros({5, 3}), w, Tensor({4}, {0.5, -1, 2, 0}));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(y[i * 4 + 0], 0.5);
    EXPECT_EQ(y[i * 4 + 1], -1.0);
    EXPECT_EQ(y[i * 4 + 2], 2.0);
    EXPECT_EQ(y[i * 4 + 3], 0.0);
  }
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  try {
    ops::dense(row({1, 2, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, ScalarKernel) {
  Tensor y = ops::conv2d(Tensor::filled({1, 1, 3, 3}, 1.0), Tensor({1, 1, 1, 1}, {2.0}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (double v : y.values()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, HandSum) {
  Tensor y = ops::conv2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), Tensor::filled({1, 1, 2, 2}, 1.0), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 10.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 1, 5, 5}, rng);
  Tensor k = Tensor::zeros({1, 1, 3, 3});
  k[4] = 1.0;
  Tensor y = ops::conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 1),
               DimensionError);
}

TEST(Conv2d, OutputExtent) {
  EXPECT_EQ(ops::conv_output_extent(32, 3, 2, 1), 16u);
  EXPECT_EQ(ops::conv_output_extent(110, 3, 2, 1), 55u);
  EXPECT_EQ(ops::conv_output_extent(5, 3, 1, 1), 5u);
}

TEST(Relu, Examples) {
  Tensor y = ops::relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Relu, AllNegativeHasZeroGradient) {
  Tensor x({4}, {-1, -2, -0.5, -3}, true);
  Tape tape;
  Tensor y = ops::relu(x, &tape);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  tape.backward(ops::sum(y, &tape));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Relu, GradientAtThree) {
  Tensor x({1}, {3.0}, true);
  Tape tape;
  tape.backward(ops::sum(ops::relu(x, &tape), &tape));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  const double h = 1e-6;
  const double fd = (std::max(3.0 + h, 0.0) - std::max(3.0 - h, 0.0)) / (2 * h);
  EXPECT_NEAR(x.grad()[0], fd, 1e-8);
}

TEST(Softmax, Examples) {
  Tensor a = ops::softmax(row({0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  Tensor b = ops::softmax(row({std::log(2.0), 0}));
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
  Tensor c = ops::softmax(row({1000, 0}));
  EXPECT_TRUE(std::isfinite(c[0]) && std::isfinite(c[1]));
  EXPECT_NEAR(c[0], 1.0, 1e-12);
  EXPECT_NEAR(c[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = dim(rng) - 1, cols = dim(rng);
    Tensor p = ops::softmax(random_tensor({rows, cols}, rng, -1e4, 1e4));
    for (std::size_t i = 0; i < rows; ++i) {
      double total = 0.0;
      for (std::size_t k = 0; k < cols; ++k) {
        const double v = p[i * cols + k];
        ASSERT_TRUE(std::isfinite(v));
        ASSERT_GE(v, 0.0);
        total += v;
      }
      ASSERT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_LE(ops::cross_entropy(row({1, 0}), row({1, 0})).item(), 1e-11);
  EXPECT_NEAR(ops::cross_entropy(row({1, 0}), row({0.5, 0.5})).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(ops::cross_entropy(row({0.5, 0.5}), row({0.5, 0.5})).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, GibbsInequalityProperty) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 6;
    Tensor t = row(sslb::testing::random_simplex(n, rng));
    Tensor p = row(sslb::testing::random_simplex(n, rng));
    ASSERT_LE(ops::cross_entropy(t, t).item(), ops::cross_entropy(t, p).item() + 1e-9);
  }
}

TEST(CrossEntropy, ShapeMismatch) {
  EXPECT_THROW(ops::cross_entropy(row({1, 0}), row({0.2, 0.3, 0.5})), DimensionError);
}

TEST(MseDistance, Examples) {
  EXPECT_EQ(ops::mse_distance(row({0.3, 0.7}), row({0.3, 0.7})).item(), 0.0);
  EXPECT_NEAR(ops::mse_distance(row({1, 0}), row({0, 1})).item(), 2.0, 1e-15);
  EXPECT_NEAR(ops::mse_distance(row({0.6, 0.4}), row({0.5, 0.5})).item(), 0.02, 1e-15);
}

TEST(MseDistance, ShapeMismatch) {
  EXPECT_THROW(ops::mse_distance(row({1, 0}), Tensor({2, 1}, {1, 0})), DimensionError);
}

TEST(Backward, SumGradientIsOnes) {
  Tensor x({3}, {1, -2, 5}, true);
  Tape tape;
  tape.backward(ops::sum(x, &tape));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareAtThree) {
  Tensor x({1}, {3.0}, true);
  Tape tape;
  tape.backward(ops::sum(ops::mul(x, x, &tape), &tape));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsContractViolation) {
  Tensor x({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor y = ops::scale(x, 2.0, &tape);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, UnusedInputGetsZeroGradient) {
  Tensor x({2}, {1, 2}, true);
  Tensor unused({2}, {3, 4}, true);
  Tape tape;
  Tensor both = ops::add(x, unused, &tape);
  (void)both;
  tape.backward(ops::sum(x, &tape));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RepeatedPassesAreBitIdentical) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  w.set_requires_grad(true);
  Tensor b = Tensor::zeros({2}, true);
  auto grads = [&] {
    Tape tape;
    Tensor p = ops::softmax(ops::dense(x, w, b, &tape), &tape);
    tape.backward(ops::cross_entropy(Tensor({3, 2}, {1, 0, 0, 1, 1, 0}), p, {}, &tape));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(grads(), grads());
}

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor t = sslb::testing::random_labels(4, 2, rng);
  std::vector<Tensor> params{random_tensor({3, 5}, rng), random_tensor({5}, rng),
                             random_tensor({5, 2}, rng), random_tensor({2}, rng)};
  for (auto& p : params) p.set_requires_grad(true);
  auto fn = [&](Tape* tape) {
    Tensor h = ops::relu(ops::dense(x, params[0], params[1], tape), tape);
    Tensor p = ops::softmax(ops::dense(h, params[2], params[3], tape), tape);
    return ops::cross_entropy(t, p, {}, tape);
  };
  EXPECT_LE(gradient_check(fn, params, 1e-6), 1e-4);
}

TEST(FiniteDifferenceCheck, Linear) {
  Tensor x({4}, {0.3, -1.2, 2.0, 0.7}, true);
  Tensor a({4}, {1.5, -2.0, 0.25, 3.0});
  auto fn = [&](Tape* tape) { return ops::sum(ops::mul(a, x, tape), tape); };
  EXPECT_LE(finite_difference_check(fn, x, 1e-3), 1e-10);
}

TEST(FiniteDifferenceCheck, Quadratic) {
  Tensor x({3}, {0.4, -1.1, 2.5}, true);
  auto fn = [&](Tape* tape) { return ops::sum(ops::mul(x, x, tape), tape); };
  EXPECT_LE(finite_difference_check(fn, x, 1e-4), 1e-6);
}

TEST(FiniteDifferenceCheck, ReluAwayFromZero) {
  Tensor x({3}, {1.5, -2.0, 0.8}, true);
  auto fn = [&](Tape* tape) { return ops::sum(ops::relu(x, tape), tape); };
  EXPECT_LE(finite_difference_check(fn, x, 1e-4), 1e-6);
}

// Random compositions over the whole op set on inputs of at most 64
// elements.
TEST(Backward, RandomCompositionsMatchFiniteDifferences) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t batch = small(rng), ch = small(rng);
    const std::size_t side = batch * ch <= 4 ? 2 + small(rng) % 2 : 2;
    const std::size_t oc = small(rng), classes = 2 + small(rng) % 2;
    ASSERT_LE(batch * ch * side * side, 64u);
    Tensor x = random_tensor({batch, ch, side, side}, rng);
    Tensor kern = random_tensor({oc, ch, 3, 3}, rng);
    Tensor gain = random_tensor({oc}, rng, 0.5, 1.5);
    Tensor shift = random_tensor({oc}, rng);
    Tensor w = random_tensor({oc, classes}, rng);
    Tensor b = random_tensor({classes}, rng);
    Tensor target = sslb::testing::random_labels(batch, classes, rng);
    std::vector<double> mean(oc), var(oc);
    for (std::size_t c = 0; c < oc; ++c) {
      mean[c] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      var[c] = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    }
    std::vector<double> row_w(batch);
    for (double& v : row_w) v = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    const int variant = pick(rng);
    std::vector<Tensor> wrt{x, kern, gain, shift, w, b};
    for (auto& t : wrt) t.set_requires_grad(true);
    auto fn = [&](Tape* tape) {
      Tensor h = ops::conv2d(x, kern, 1 + variant % 2, 1, tape);
      h = ops::normalize_channels(h, mean, var, 1e-5, tape);
      h = ops::channel_affine(h, gain, shift, tape);
      if (variant >= 2) h = ops::mul(h, h, tape);
      h = ops::global_avg_pool(h, tape);
      Tensor logits = ops::dense(h, w, b, tape);
      Tensor p = ops::softmax(logits, tape);
      Tensor ce = ops::cross_entropy(target, p, row_w, tape);
      Tensor sq = ops::mse_distance(target, ops::scale_rows(p, row_w, tape), {}, tape);
      return ops::add(ce, ops::scale(sq, 0.7, tape), tape);
    };
    ASSERT_LE(gradient_check(fn, wrt, 1e-6), 1e-4) << "trial " << trial;
  }
}

TEST(SliceRows, GradientOnlyReachesSlice) {
  Tensor x({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  Tensor s = ops::slice_rows(x, 1, 2, &tape);
  EXPECT_EQ(s.shape(), (Shape{1, 2}));
  EXPECT_EQ(s[0], 3.0);
  tape.backward(ops::sum(s, &tape));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0, 0, 1, 1, 0, 0}));
}
