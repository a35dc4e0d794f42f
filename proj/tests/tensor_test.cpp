// Tensor engine tests. The reference implementations at the top (direct
// padded-buffer convolution, recomputed batch moments, long-double cross
// entropy) are deliberately independent of the library code paths.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sagan/tensor.hpp"
#include "testutil.hpp"

using namespace sagan;

namespace {

// Direct convolution over an explicitly zero-padded copy of the input.
std::vector<double> conv1d_reference(const std::vector<double>& x, std::size_t B,
                                     std::size_t Ci, std::size_t L,
                                     const std::vector<double>& w, std::size_t Co,
                                     std::size_t K, const std::vector<double>& bias,
                                     Padding padding, std::size_t stride,
                                     std::size_t* out_len_out) {
  std::size_t out_len, pad_left = 0, pad_right = 0;
  if (padding == Padding::Same) {
    out_len = (L + stride - 1) / stride;
    const std::size_t span = (out_len - 1) * stride + K;
    const std::size_t total = span > L ? span - L : 0;
    pad_left = total / 2;
    pad_right = total - pad_left;
  } else {
    out_len = (L - K) / stride + 1;
  }
  const std::size_t Lp = L + pad_left + pad_right;
  std::vector<double> padded(B * Ci * Lp, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t l = 0; l < L; ++l)
        padded[(b * Ci + c) * Lp + pad_left + l] = x[(b * Ci + c) * L + l];
  std::vector<double> out(B * Co * out_len, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t o = 0; o < out_len; ++o) {
        double acc = bias[co];
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t j = 0; j < K; ++j)
            acc += w[(co * Ci + ci) * K + j] *
                   padded[(b * Ci + ci) * Lp + o * stride + j];
        out[(b * Co + co) * out_len + o] = acc;
      }
  *out_len_out = out_len;
  return out;
}

double cross_entropy_reference(const std::vector<double>& logits,
                               const std::vector<double>& onehot, std::size_t B,
                               std::size_t K) {
  long double total = 0.0L;
  for (std::size_t b = 0; b < B; ++b) {
    long double z = 0.0L;
    for (std::size_t k = 0; k < K; ++k)
      z += expl(static_cast<long double>(logits[b * K + k]));
    for (std::size_t k = 0; k < K; ++k)
      total += static_cast<long double>(onehot[b * K + k]) *
               (logl(z) - static_cast<long double>(logits[b * K + k]));
  }
  return static_cast<double>(total / static_cast<long double>(B));
}

Tensor rand_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST(Tensor, ConstructionAndInvariants) {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  EXPECT_THROW(Tensor::from_data({2, 3}, {1, 2}), TensorError);
  EXPECT_THROW(Tensor::from_data({0, 3}, {}), TensorError);
  EXPECT_THROW(t.item(), TensorError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
}

TEST(Tensor, ElementwiseForward) {
  Tensor a = Tensor::from_data({3}, {1, -2, 3});
  Tensor b = Tensor::from_data({3}, {4, 5, -6});
  EXPECT_EQ(add(a, b).data(), (std::vector<double>{5, 3, -3}));
  EXPECT_EQ(sub(a, b).data(), (std::vector<double>{-3, -7, 9}));
  EXPECT_EQ(mul(a, b).data(), (std::vector<double>{4, -10, -18}));
  EXPECT_EQ(scale(a, 2.0).data(), (std::vector<double>{2, -4, 6}));
  EXPECT_DOUBLE_EQ(sum(a).item(), 2.0);
  EXPECT_NEAR(mean(a).item(), 2.0 / 3.0, 1e-15);
}

TEST(Tensor, ShapeMismatchNamesAxis) {
  Tensor a(Shape{2, 3});
  Tensor b(Shape{2, 4});
  const std::string msg = testutil::message_of<TensorError>(
      [&] { add(a, b); });
  EXPECT_NE(msg.find("axis 1"), std::string::npos) << msg;
}

TEST(Tensor, Reshape) {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = reshape(a, {3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.data(), a.data());
  EXPECT_THROW(reshape(a, {4, 2}), TensorError);
}

TEST(Tensor, LeakyRelu) {
  Tensor a = Tensor::from_data({4}, {3.0, -1.0, 0.0, -2.5});
  Tensor r = leaky_relu(a);  // default alpha 0.2
  EXPECT_DOUBLE_EQ(r.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(r.data()[1], -0.2);
  EXPECT_DOUBLE_EQ(r.data()[2], 0.0);
  EXPECT_DOUBLE_EQ(r.data()[3], -0.5);
  EXPECT_THROW(leaky_relu(a, 0.0), TensorError);
  EXPECT_THROW(leaky_relu(a, 1.0), TensorError);
}

TEST(Tensor, LeakyReluGradientAtNegative) {
  Tensor x = Tensor::from_data({1}, {-0.7});
  x.set_requires_grad(true);
  sum(leaky_relu(x, 0.2)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.2);
}

TEST(Tensor, TanhBasics) {
  EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
  Rng rng(3);
  Tensor a = rand_tensor({50}, rng, 5.0);
  Tensor r = tanh(a);
  for (double v : r.data()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Tensor, TanhDerivative) {
  // d/dx tanh = 1 - tanh^2, checked against central differences at 1e-6.
  for (double x0 : {-1.3, -0.2, 0.0, 0.4, 2.1}) {
    Tensor x = Tensor::scalar(x0);
    x.set_requires_grad(true);
    tanh(x).backward();
    const double h = 1e-6;
    const double fd = (std::tanh(x0 + h) - std::tanh(x0 - h)) / (2 * h);
    EXPECT_NEAR(x.grad()[0], fd, 1e-6);
  }
}

TEST(Conv1d, IdentityKernelSamePadding) {
  Tensor x = Tensor::from_data({1, 1, 5}, {1, 2, 3, 4, 5});
  Tensor w = Tensor::from_data({1, 1, 1}, {1});
  Tensor b = Tensor::from_data({1}, {0});
  Tensor y = conv1d(x, w, b, Padding::Same);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 5}));
  EXPECT_EQ(y.data(), x.data());
}

TEST(Conv1d, ZeroInput) {
  Rng rng(1);
  Tensor x(Shape{2, 3, 6}, 0.0);
  Tensor w = rand_tensor({4, 3, 3}, rng);
  Tensor b = Tensor(Shape{4}, 0.0);
  for (Padding p : {Padding::Same, Padding::Valid}) {
    Tensor y = conv1d(x, w, b, p);
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  }
}

TEST(Conv1d, HandComputedCases) {
  Tensor x = Tensor::from_data({1, 1, 4}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({1}, {0});
  {
    Tensor w = Tensor::from_data({1, 1, 2}, {1, 1});
    EXPECT_EQ(conv1d(x, w, b, Padding::Valid).data(),
              (std::vector<double>{3, 5, 7}));
    EXPECT_EQ(conv1d(x, w, b, Padding::Same).data(),
              (std::vector<double>{3, 5, 7, 4}));
  }
  {
    Tensor w = Tensor::from_data({1, 1, 3}, {1, 1, 1});
    EXPECT_EQ(conv1d(x, w, b, Padding::Same).data(),
              (std::vector<double>{3, 6, 9, 7}));
  }
}

TEST(Conv1d, OutputLengths) {
  Rng rng(2);
  Tensor w = rand_tensor({2, 1, 3}, rng);
  Tensor b = rand_tensor({2}, rng);
  Tensor x = rand_tensor({1, 1, 10}, rng);
  EXPECT_EQ(conv1d(x, w, b, Padding::Same).dim(2), 10u);
  EXPECT_EQ(conv1d(x, w, b, Padding::Valid).dim(2), 8u);
  EXPECT_EQ(conv1d(x, w, b, Padding::Same, 2).dim(2), 5u);
  EXPECT_EQ(conv1d(x, w, b, Padding::Valid, 2).dim(2), 4u);
}

TEST(Conv1d, MatchesDirectOracleOnRandomCase) {
  Rng rng(7);
  Tensor x = rand_tensor({2, 3, 7}, rng);
  Tensor w = rand_tensor({4, 3, 3}, rng);
  Tensor b = rand_tensor({4}, rng);
  for (Padding p : {Padding::Same, Padding::Valid}) {
    Tensor y = conv1d(x, w, b, p);
    std::size_t out_len = 0;
    auto ref = conv1d_reference(x.data(), 2, 3, 7, w.data(), 4, 3, b.data(), p,
                                1, &out_len);
    ASSERT_EQ(y.dim(2), out_len);
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv1d, MatchesDirectOracleAcrossShapeGrid) {
  Rng rng(11);
  for (std::size_t B : {1, 2, 3})
    for (std::size_t Ci : {1, 2, 3})
      for (std::size_t Co : {1, 2, 4})
        for (std::size_t L : {1, 2, 3, 5, 8})
          for (std::size_t K : {1, 2, 3, 4, 5}) {
            for (std::size_t stride : {1, 2, 3})
              for (Padding p : {Padding::Same, Padding::Valid}) {
                if (p == Padding::Valid && K > L) continue;
                Tensor x = rand_tensor({B, Ci, L}, rng);
                Tensor w = rand_tensor({Co, Ci, K}, rng);
                Tensor b = rand_tensor({Co}, rng);
                Tensor y = conv1d(x, w, b, p, stride);
                std::size_t out_len = 0;
                auto ref = conv1d_reference(x.data(), B, Ci, L, w.data(), Co, K,
                                            b.data(), p, stride, &out_len);
                ASSERT_EQ(y.dim(2), out_len);
                for (std::size_t i = 0; i < ref.size(); ++i)
                  ASSERT_NEAR(y.data()[i], ref[i], 1e-12)
                      << "B=" << B << " Ci=" << Ci << " Co=" << Co << " L=" << L
                      << " K=" << K << " stride=" << stride;
              }
          }
}

TEST(Conv1d, ShapeDiagnosticsNameAxis) {
  Tensor x(Shape{1, 3, 5});
  Tensor w(Shape{2, 4, 3});
  Tensor b(Shape{2});
  std::string msg =
      testutil::message_of<TensorError>([&] { conv1d(x, w, b, Padding::Same); });
  EXPECT_NE(msg.find("channel"), std::string::npos) << msg;
  Tensor w2(Shape{2, 3, 3});
  Tensor b2(Shape{3});
  msg = testutil::message_of<TensorError>(
      [&] { conv1d(x, w2, b2, Padding::Same); });
  EXPECT_NE(msg.find("bias"), std::string::npos) << msg;
  Tensor w3(Shape{2, 3, 9});
  EXPECT_THROW(conv1d(x, w3, b, Padding::Valid), TensorError);
}

TEST(BatchNorm, ConstantChannelMapsToBeta) {
  Tensor x(Shape{3, 2, 4}, 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i)
    x.data()[i] = (i / 4) % 2 == 0 ? 5.0 : -2.0;  // constant per channel
  Tensor gamma = Tensor::from_data({2}, {1.7, 0.3});
  Tensor beta = Tensor::from_data({2}, {0.25, -1.5});
  Tensor rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
  Tensor y = batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double expect = (i / 4) % 2 == 0 ? 0.25 : -1.5;
    EXPECT_NEAR(y.data()[i], expect, 1e-9);
  }
}

TEST(BatchNorm, StandardizedInputIsFixedPoint) {
  // Build an input whose per-channel batch moments are exactly (0, 1).
  Rng rng(5);
  const std::size_t B = 4, C = 3, L = 5;
  Tensor x = rand_tensor({B, C, L}, rng);
  const double n = B * L;
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0, var = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) mu += x.data()[(b * C + c) * L + l];
    mu /= n;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        double& v = x.data()[(b * C + c) * L + l];
        v -= mu;
        var += v * v;
      }
    var /= n;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l)
        x.data()[(b * C + c) * L + l] /= std::sqrt(var);
  }
  Tensor gamma(Shape{C}, 1.0), beta(Shape{C}, 0.0);
  Tensor rm(Shape{C}, 0.0), rv(Shape{C}, 1.0);
  Tensor y = batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train);
  for (std::size_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y.data()[i], x.data()[i], 1e-4);
}

TEST(BatchNorm, OutputMomentsMatchOracle) {
  Rng rng(6);
  const std::size_t B = 5, C = 4, L = 6;
  Tensor x = rand_tensor({B, C, L}, rng, 3.0);
  Tensor gamma(Shape{C}, 1.0), beta(Shape{C}, 0.0);
  Tensor rm(Shape{C}, 0.0), rv(Shape{C}, 1.0);
  Tensor y = batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train);
  const double n = B * L;
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0, var = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) mu += y.data()[(b * C + c) * L + l];
    mu /= n;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const double d = y.data()[(b * C + c) * L + l] - mu;
        var += d * d;
      }
    var /= n;
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-3);  // epsilon shrinks variance slightly
  }
}

TEST(BatchNorm, RunningStatUpdateRule) {
  Rng rng(8);
  const std::size_t B = 3, C = 2, L = 4;
  Tensor x = rand_tensor({B, C, L}, rng, 2.0);
  Tensor gamma(Shape{C}, 1.0), beta(Shape{C}, 0.0);
  Tensor rm = Tensor::from_data({2}, {0.5, -0.25});
  Tensor rv = Tensor::from_data({2}, {2.0, 0.75});
  const std::vector<double> rm0 = rm.data(), rv0 = rv.data();
  batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train);
  const double n = B * L;
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0, var = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) mu += x.data()[(b * C + c) * L + l];
    mu /= n;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const double d = x.data()[(b * C + c) * L + l] - mu;
        var += d * d;
      }
    var /= n;
    EXPECT_NEAR(rm.data()[c], 0.9 * rm0[c] + 0.1 * mu, 1e-12);
    EXPECT_NEAR(rv.data()[c], 0.9 * rv0[c] + 0.1 * var, 1e-12);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatsWithoutMutating) {
  Rng rng(9);
  Tensor x = rand_tensor({2, 2, 3}, rng);
  Tensor gamma = Tensor::from_data({2}, {2.0, 0.5});
  Tensor beta = Tensor::from_data({2}, {1.0, -1.0});
  Tensor rm = Tensor::from_data({2}, {0.3, -0.4});
  Tensor rv = Tensor::from_data({2}, {1.5, 0.8});
  const std::vector<double> rm0 = rm.data(), rv0 = rv.data();
  Tensor y = batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Eval);
  EXPECT_EQ(rm.data(), rm0);
  EXPECT_EQ(rv.data(), rv0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t l = 0; l < 3; ++l) {
        const std::size_t i = (b * 2 + c) * 3 + l;
        const double expect =
            gamma.data()[c] * (x.data()[i] - rm0[c]) /
                std::sqrt(rv0[c] + 1e-5) +
            beta.data()[c];
        EXPECT_NEAR(y.data()[i], expect, 1e-12);
      }
}

TEST(BatchNorm, BatchOfOneRejectedInTrainMode) {
  Tensor x(Shape{1, 2, 4});
  Tensor gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  Tensor rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
  EXPECT_THROW(batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train),
               TensorError);
  EXPECT_NO_THROW(batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Eval));
}

TEST(BatchNorm, BatchStatsWithoutRunningUpdate) {
  // The extended entry point can normalize with batch statistics while
  // leaving the running buffers untouched (needed when another component's
  // training step routes data through a frozen network).
  Rng rng(10);
  Tensor x = rand_tensor({3, 2, 4}, rng);
  Tensor gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  Tensor rm = Tensor::from_data({2}, {0.1, 0.2});
  Tensor rv = Tensor::from_data({2}, {1.1, 1.2});
  const std::vector<double> rm0 = rm.data(), rv0 = rv.data();
  Tensor y_frozen = batchnorm1d_ex(x, gamma, beta, rm, rv, true, false);
  EXPECT_EQ(rm.data(), rm0);
  EXPECT_EQ(rv.data(), rv0);
  Tensor y_train = batchnorm1d(x, gamma, beta, rm, rv, BatchNormMode::Train);
  EXPECT_EQ(y_frozen.data(), y_train.data());
  EXPECT_NE(rm.data(), rm0);  // the plain train call did update
}

TEST(Pooling, GlobalAveragePool) {
  Tensor x = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = global_avg_pool1d(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 5.0);
}

TEST(Linear, ForwardAndDiagnostics) {
  Tensor x = Tensor::from_data({1, 2}, {1, 2});
  Tensor w = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor b = Tensor::from_data({3}, {0.5, -0.5, 0});
  Tensor y = linear(x, w, b);
  EXPECT_EQ(y.data(), (std::vector<double>{1.5, 1.5, 3.0}));
  Tensor wbad(Shape{3, 4});
  EXPECT_THROW(linear(x, wbad, b), TensorError);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(12);
  Tensor logits = rand_tensor({6, 5}, rng, 4.0);
  Tensor p = softmax(logits);
  for (std::size_t b = 0; b < 6; ++b) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) s += p.data()[b * 5 + k];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, StableUnderLargeLogits) {
  Tensor logits = Tensor::from_data({1, 3}, {1000.0, 1001.0, 999.0});
  Tensor p = softmax(logits);
  EXPECT_TRUE(p.all_finite());
  EXPECT_GT(p.data()[1], p.data()[0]);
  EXPECT_GT(p.data()[0], p.data()[2]);
}

TEST(CrossEntropy, UniformLogitsSixClasses) {
  Tensor logits(Shape{2, 6}, 0.0);
  Tensor onehot(Shape{2, 6}, 0.0);
  onehot.data()[0] = 1.0;
  onehot.data()[6 + 3] = 1.0;
  EXPECT_NEAR(softmax_cross_entropy(logits, onehot).item(), std::log(6.0),
              1e-12);
}

TEST(CrossEntropy, ConfidentCorrectApproachesZero) {
  Tensor logits = Tensor::from_data({1, 3}, {50.0, 0.0, 0.0});
  Tensor onehot = Tensor::from_data({1, 3}, {1.0, 0.0, 0.0});
  EXPECT_LT(softmax_cross_entropy(logits, onehot).item(), 1e-12);
}

TEST(CrossEntropy, MatchesHighPrecisionOracle) {
  Rng rng(13);
  const std::size_t B = 4, K = 6;
  Tensor logits = rand_tensor({B, K}, rng, 3.0);
  Tensor onehot(Shape{B, K}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    onehot.data()[b * K + rng.integer(K)] = 1.0;
  const double ref = cross_entropy_reference(logits.data(), onehot.data(), B, K);
  EXPECT_NEAR(softmax_cross_entropy(logits, onehot).item(), ref, 1e-10);
}

TEST(CrossEntropy, RejectsMalformedLabelRows) {
  Tensor logits(Shape{2, 3}, 0.0);
  Tensor bad1 = Tensor::from_data({2, 3}, {1, 0, 0, 0.5, 0.2, 0.2});
  std::string msg = testutil::message_of<TensorError>(
      [&] { softmax_cross_entropy(logits, bad1); });
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
  Tensor bad2 = Tensor::from_data({2, 3}, {2.0, -1.0, 0.0, 1, 0, 0});
  msg = testutil::message_of<TensorError>(
      [&] { softmax_cross_entropy(logits, bad2); });
  EXPECT_NE(msg.find("row 0"), std::string::npos) << msg;
}

TEST(Mse, ForwardValues) {
  Tensor a = Tensor::from_data({2}, {0.0, 0.0});
  Tensor b = Tensor::from_data({2}, {1.0, -1.0});
  EXPECT_DOUBLE_EQ(mse(a, b).item(), 1.0);
  EXPECT_DOUBLE_EQ(mse(a, a).item(), 0.0);
  Tensor c(Shape{3});
  EXPECT_THROW(mse(a, c), TensorError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, UnusedParameterGetsNoGradient) {
  Tensor x = Tensor::scalar(1.0);
  Tensor unused = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  sum(scale(x, 3.0)).backward();
  EXPECT_FALSE(unused.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Backward, NonScalarRejected) {
  Tensor x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.backward(), TensorError);
}

TEST(Backward, SecondCallWithoutRebuildRejected) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), TensorError);
}

TEST(Backward, GradientsAccumulateAcrossGraphs) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  sum(scale(x, 2.0)).backward();
  sum(scale(x, 5.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NoGradGuardSuppressesRecording) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  Tensor y;
  {
    NoGradGuard ng;
    y = mul(x, x);
  }
  y.backward();  // nothing recorded, so nothing propagates
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, FreezeCapturedAtRecordTimeNotBackwardTime) {
  // An op recorded while the tensor was frozen must not deposit gradient
  // into it even when backward() runs after the freeze is lifted.
  ParamSet ps;
  ps.register_parameter("w", Tensor::scalar(2.0));
  Tensor loss;
  {
    FreezeGuard freeze({&ps});
    loss = sum(mul(ps.at("w"), ps.at("w")));
  }
  EXPECT_TRUE(ps.at("w").requires_grad());  // restored by the guard
  loss.backward();
  EXPECT_FALSE(ps.at("w").has_grad());

  // Same graph built without the guard does receive gradient.
  sum(mul(ps.at("w"), ps.at("w"))).backward();
  ASSERT_TRUE(ps.at("w").has_grad());
  EXPECT_DOUBLE_EQ(ps.at("w").grad()[0], 4.0);
}

TEST(Backward, DiamondGraphAccumulates) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  Tensor a = scale(x, 2.0);
  Tensor b = mul(x, x);
  sum(add(a, b)).backward();  // d/dx (2x + x^2) = 2 + 2x = 8
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

// Per-op gradient sweep: 100 seeded configurations across the op set, each
// checked against central finite differences.
TEST(Gradients, PerOpFiniteDifferenceSweep) {
  int failures = 0;
  std::string first_failure;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    ParamSet ps;
    std::function<Tensor()> loss_fn;
    switch (seed % 10) {
      case 0: {  // elementwise chain
        ps.register_parameter("a", rand_tensor({3, 4}, rng));
        ps.register_parameter("b", rand_tensor({3, 4}, rng));
        loss_fn = [&ps] {
          return mean(mul(add(ps.at("a"), ps.at("b")),
                          sub(ps.at("a"), ps.at("b"))));
        };
        break;
      }
      case 1: {  // leaky relu
        ps.register_parameter("a", rand_tensor({2, 5}, rng));
        loss_fn = [&ps] { return sum(leaky_relu(ps.at("a"), 0.2)); };
        break;
      }
      case 2: {  // tanh
        ps.register_parameter("a", rand_tensor({2, 3}, rng));
        loss_fn = [&ps] { return mean(tanh(ps.at("a"))); };
        break;
      }
      case 3: {  // conv1d same
        ps.register_parameter("x", rand_tensor({2, 2, 6}, rng));
        ps.register_parameter("w", rand_tensor({3, 2, 3}, rng));
        ps.register_parameter("b", rand_tensor({3}, rng));
        loss_fn = [&ps] {
          return mean(conv1d(ps.at("x"), ps.at("w"), ps.at("b"), Padding::Same));
        };
        break;
      }
      case 4: {  // conv1d valid, stride 2
        ps.register_parameter("x", rand_tensor({1, 3, 9}, rng));
        ps.register_parameter("w", rand_tensor({2, 3, 4}, rng));
        ps.register_parameter("b", rand_tensor({2}, rng));
        loss_fn = [&ps] {
          return sum(
              conv1d(ps.at("x"), ps.at("w"), ps.at("b"), Padding::Valid, 2));
        };
        break;
      }
      case 5: {  // batchnorm train
        ps.register_parameter("x", rand_tensor({3, 2, 4}, rng));
        ps.register_parameter("gamma", rand_tensor({2}, rng, 0.3));
        ps.register_parameter("beta", rand_tensor({2}, rng, 0.3));
        ps.register_buffer("rm", Tensor(Shape{2}, 0.0));
        ps.register_buffer("rv", Tensor(Shape{2}, 1.0));
        loss_fn = [&ps] {
          Tensor y = batchnorm1d(ps.at("x"), ps.at("gamma"), ps.at("beta"),
                                 ps.at("rm"), ps.at("rv"), BatchNormMode::Train);
          return mean(mul(y, y));
        };
        break;
      }
      case 6: {  // batchnorm eval
        ps.register_parameter("x", rand_tensor({2, 3, 3}, rng));
        ps.register_parameter("gamma", rand_tensor({3}, rng, 0.3));
        ps.register_parameter("beta", rand_tensor({3}, rng, 0.3));
        ps.register_buffer("rm", rand_tensor({3}, rng, 0.2));
        Tensor rv(Shape{3}, 0.0);
        for (double& v : rv.data()) v = 0.5 + rng.uniform();
        ps.register_buffer("rv", rv);
        loss_fn = [&ps] {
          Tensor y = batchnorm1d(ps.at("x"), ps.at("gamma"), ps.at("beta"),
                                 ps.at("rm"), ps.at("rv"), BatchNormMode::Eval);
          return sum(tanh(y));
        };
        break;
      }
      case 7: {  // pool + linear
        ps.register_parameter("x", rand_tensor({2, 3, 5}, rng));
        ps.register_parameter("w", rand_tensor({4, 3}, rng));
        ps.register_parameter("b", rand_tensor({4}, rng));
        loss_fn = [&ps] {
          return mean(
              linear(global_avg_pool1d(ps.at("x")), ps.at("w"), ps.at("b")));
        };
        break;
      }
      case 8: {  // softmax cross entropy
        ps.register_parameter("logits", rand_tensor({3, 4}, rng, 2.0));
        Tensor onehot(Shape{3, 4}, 0.0);
        for (std::size_t b = 0; b < 3; ++b)
          onehot.data()[b * 4 + rng.integer(4)] = 1.0;
        ps.register_buffer("onehot", onehot);
        loss_fn = [&ps] {
          return softmax_cross_entropy(ps.at("logits"), ps.at("onehot"));
        };
        break;
      }
      default: {  // mse + softmax
        ps.register_parameter("pred", rand_tensor({2, 3}, rng));
        ps.register_buffer("target", rand_tensor({2, 3}, rng));
        loss_fn = [&ps] {
          return add(mse(ps.at("pred"), ps.at("target")),
                     sum(mul(softmax(ps.at("pred")), ps.at("pred"))));
        };
        break;
      }
    }
    auto result = testutil::check_gradients(ps, loss_fn);
    if (!result.ok) {
      ++failures;
      if (first_failure.empty())
        first_failure = "seed " + std::to_string(seed) + ": " + result.detail;
    }
  }
  EXPECT_EQ(failures, 0) << first_failure;
}

TEST(ParamSet, RegistrationRules) {
  ParamSet ps;
  ps.register_parameter("w", Tensor(Shape{2, 2}, 1.0));
  ps.register_buffer("stats", Tensor(Shape{2}, 0.0));
  EXPECT_THROW(ps.register_parameter("w", Tensor(Shape{1})), TensorError);
  EXPECT_EQ(ps.names(), (std::vector<std::string>{"w", "stats"}));
  EXPECT_TRUE(ps.at("w").requires_grad());
  EXPECT_FALSE(ps.at("stats").requires_grad());
  EXPECT_TRUE(ps.is_buffer("stats"));
  EXPECT_THROW(ps.at("missing"), TensorError);
  EXPECT_EQ(ps.parameter_elements(), 4u);
}

TEST(ParamSet, DigestTracksEveryByte) {
  ParamSet ps;
  ps.register_parameter("w", Tensor(Shape{3}, 0.5));
  ps.register_buffer("rm", Tensor(Shape{3}, 0.0));
  const std::uint64_t d0 = ps.byte_digest();
  EXPECT_EQ(ps.byte_digest(), d0);  // stable when untouched
  ps.at("w").data()[1] += 1e-16;
  const std::uint64_t d1 = ps.byte_digest();
  EXPECT_NE(d1, d0);
  ps.at("rm").data()[0] = 1.0;  // buffers count too
  EXPECT_NE(ps.byte_digest(), d1);
}

TEST(ParamSet, CloneAndCopyFrom) {
  ParamSet ps;
  ps.register_parameter("w", Tensor::from_data({2}, {1.0, 2.0}));
  ps.increment_step();
  ParamSet copy = ps.clone();
  EXPECT_EQ(copy.step_count(), 1u);
  copy.at("w").data()[0] = 9.0;
  EXPECT_DOUBLE_EQ(ps.at("w").data()[0], 1.0);  // deep copy
  ps.copy_from(copy);
  EXPECT_DOUBLE_EQ(ps.at("w").data()[0], 9.0);

  ParamSet wrong;
  wrong.register_parameter("w", Tensor(Shape{3}, 0.0));
  EXPECT_THROW(ps.copy_from(wrong), TensorError);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersUnchanged) {
  ParamSet ps;
  ps.register_parameter("p", Tensor::from_data({2}, {1.0, -2.0}));
  OptimizerState opt(OptimizerConfig::sgd_momentum(0.0, 0.9));
  sum(mul(ps.at("p"), ps.at("p"))).backward();
  opt.step(ps);
  EXPECT_EQ(ps.at("p").data(), (std::vector<double>{1.0, -2.0}));
}

TEST(Optimizer, SgdSingleStepAnalytic) {
  // mu = 0, lr 0.1, gradient 2 -> parameter decreases by 0.2.
  ParamSet ps;
  ps.register_parameter("p", Tensor::scalar(1.0));
  OptimizerState opt(OptimizerConfig::sgd_momentum(0.1, 0.0));
  sum(scale(ps.at("p"), 2.0)).backward();
  opt.step(ps);
  EXPECT_NEAR(ps.at("p").data()[0], 0.8, 1e-15);
}

TEST(Optimizer, SgdMomentumTwoStepHandComputed) {
  // v1 = g1, p1 = p0 - lr*v1; v2 = mu*v1 + g2, p2 = p1 - lr*v2.
  ParamSet ps;
  ps.register_parameter("p", Tensor::scalar(0.0));
  OptimizerState opt(OptimizerConfig::sgd_momentum(0.1, 0.9));
  sum(scale(ps.at("p"), 1.0)).backward();  // g = 1
  opt.step(ps);
  EXPECT_NEAR(ps.at("p").data()[0], -0.1, 1e-15);
  sum(scale(ps.at("p"), 1.0)).backward();  // g = 1 again
  opt.step(ps);
  // v2 = 0.9*1 + 1 = 1.9 -> p = -0.1 - 0.19 = -0.29
  EXPECT_NEAR(ps.at("p").data()[0], -0.29, 1e-12);
}

TEST(Optimizer, AdamFirstStepIsSignedLearningRate) {
  ParamSet ps;
  ps.register_parameter("p", Tensor::from_data({2}, {1.0, 1.0}));
  OptimizerState opt(OptimizerConfig::adaptive_moments(0.01));
  Tensor dir = Tensor::from_data({2}, {3.0, -7.0});
  sum(mul(ps.at("p"), dir)).backward();  // grads 3 and -7
  opt.step(ps);
  // After bias correction the first update is lr * g/|g| up to epsilon.
  EXPECT_NEAR(ps.at("p").data()[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(ps.at("p").data()[1], 1.0 + 0.01, 1e-6);
}

TEST(Optimizer, GradsClearedAfterStep) {
  ParamSet ps;
  ps.register_parameter("p", Tensor::scalar(1.0));
  OptimizerState opt(OptimizerConfig::sgd_momentum());
  sum(ps.at("p")).backward();
  ASSERT_TRUE(ps.at("p").has_grad());
  opt.step(ps);
  EXPECT_FALSE(ps.at("p").has_grad());
  EXPECT_EQ(ps.step_count(), 1u);
}

TEST(Optimizer, MissingGradRejected) {
  ParamSet ps;
  ps.register_parameter("used", Tensor::scalar(1.0));
  ps.register_parameter("skipped", Tensor::scalar(1.0));
  OptimizerState opt(OptimizerConfig::sgd_momentum());
  sum(ps.at("used")).backward();
  const std::string msg =
      testutil::message_of<TensorError>([&] { opt.step(ps); });
  EXPECT_NE(msg.find("skipped"), std::string::npos) << msg;
}

TEST(Optimizer, QuadraticBowlConvergesBothKinds) {
  // f(p) = mean(w*(p-t)^2) with mixed curvatures; closed-form minimum t.
  const std::vector<double> target = {1.0, -2.0, 0.5, 3.0, -0.25};
  const std::vector<double> curv = {0.5, 1.0, 2.0, 0.75, 1.5};
  for (OptimizerKind kind :
       {OptimizerKind::SgdMomentum, OptimizerKind::AdaptiveMoments}) {
    ParamSet ps;
    ps.register_parameter("p", Tensor(Shape{5}, 0.0));
    OptimizerConfig cfg = kind == OptimizerKind::SgdMomentum
                              ? OptimizerConfig::sgd_momentum(0.05, 0.9)
                              : OptimizerConfig::adaptive_moments(0.05);
    OptimizerState opt(cfg);
    Tensor t = Tensor::from_data({5}, target);
    Tensor w = Tensor::from_data({5}, curv);
    double final_loss = 1e9;
    for (int step = 0; step < 500; ++step) {
      Tensor d = sub(ps.at("p"), t);
      Tensor loss = mean(mul(w, mul(d, d)));
      final_loss = loss.item();
      if (final_loss < 1e-6) break;
      loss.backward();
      opt.step(ps);
    }
    EXPECT_LT(final_loss, 1e-6) << optimizer_kind_name(kind);
  }
}

TEST(Determinism, ForwardAndRngReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  Rng r1(7), r2(7);
  Tensor x1 = randn_tensor({2, 3, 4}, r1);
  Tensor x2 = randn_tensor({2, 3, 4}, r2);
  EXPECT_EQ(x1.data(), x2.data());
  Tensor w = Tensor(Shape{2, 3, 3}, 0.5);
  Tensor bias(Shape{2}, 0.1);
  Tensor y1 = conv1d(x1, w, bias, Padding::Same);
  Tensor y2 = conv1d(x2, w, bias, Padding::Same);
  EXPECT_EQ(y1.data(), y2.data());
}

TEST(Determinism, SeedDerivationIsStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, "train"), derive_seed(1, "eval"));
}
