#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "s2s/gradcheck.hpp"
#include "s2s/ops.hpp"

using namespace s2s;

namespace {

Tensor<double> from_rows(std::size_t h, std::size_t w, std::vector<double> v) { return {{1, h, w}, std::move(v)}; }

// Brute-force oracle: explicit reflect-padded array, then the textbook convolution sum.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& wt, const Tensor<double>& b) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = wt.dim(0), k = wt.dim(2), pad = k / 2;
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  std::vector<double> padded(cin * ph * pw);
  auto refl = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx)
        padded[(c * ph + y) * pw + xx] =
            x.at(c, refl(long(y) - long(pad), long(h)), refl(long(xx) - long(pad), long(w)));
  Tensor<double> out({cout, h, w});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = b[co];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              acc += wt[((co * cin + c) * k + dy) * k + dx] * padded[(c * ph + y + dy) * pw + xx + dx];
        out.at(co, y, xx) = acc;
      }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernelReproducesInput) {
  Tensor<float> x({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i) * 0.5f - 3.0f;
  Tensor<float> w({1, 1, 3, 3});
  w[4] = 1.0f;
  EXPECT_EQ(kernels::conv2d_forward(x, w, Tensor<float>({1})), x);
}

TEST(Conv2d, AllOnesKernelOnReflectedWindow) {
  const auto x = from_rows(2, 2, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 3, 3}, 1.0);
  const auto out = kernels::conv2d_forward(x, w, Tensor<double>({1}));
  // Reflect pad of [[1,2],[3,4]] by one: rows (4 3 4 / 2 1 2 / 4 3 4) around (0,0).
  const double window = 4 + 3 + 4 + 2 + 1 + 2 + 4 + 3 + 4;
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), window);
  EXPECT_EQ(out, naive_conv(x, w, Tensor<double>({1})));
}

TEST(Conv2d, MatchesNaiveOracleOnRandomInputs) {
  const RngStream r(11, 0);
  for (std::size_t k : {1u, 3u, 5u}) {
    const auto x = gradcheck::random_tensor({3, 7, 9}, r.child(k));
    const auto w = gradcheck::random_tensor({4, 3, k, k}, r.child(k + 10));
    const auto b = gradcheck::random_tensor({4}, r.child(k + 20));
    const auto got = kernels::conv2d_forward(x, w, b);
    const auto want = naive_conv(x, w, b);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, PreservesSpatialSizeForOddKernels) {
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    Tensor<float> x({2, 8, 5}, 1.0f);
    const auto out = kernels::conv2d_forward(x, Tensor<float>({3, 2, k, k}), Tensor<float>({3}));
    EXPECT_EQ(out.shape(), (Shape{3, 8, 5})) << "k=" << k;
  }
}

TEST(Conv2d, RejectsBadShapes) {
  Tensor<float> x({2, 4, 4});
  EXPECT_THROW(kernels::conv2d_forward(x, Tensor<float>({1, 2, 2, 2}), Tensor<float>({1})), ContractError);
  EXPECT_THROW(kernels::conv2d_forward(x, Tensor<float>({1, 3, 3, 3}), Tensor<float>({1})), ContractError);
  EXPECT_THROW(kernels::conv2d_forward(x, Tensor<float>({1, 2, 3, 3}), Tensor<float>({2})), ContractError);
  // A 5x5 kernel needs extent >= 3 to reflect by 2.
  EXPECT_THROW(kernels::conv2d_forward(Tensor<float>({1, 2, 2}), Tensor<float>({1, 1, 5, 5}), Tensor<float>({1})),
               ContractError);
}

TEST(Conv2d, WeightGradientMatchesFiniteDifferences) {
  const RngStream r(4, 4);
  const auto x = gradcheck::random_tensor({2, 5, 6}, r.child(0));
  const auto res = gradcheck::check_inputs(
      "conv weight", {gradcheck::random_tensor({3, 2, 3, 3}, r.child(1)), gradcheck::random_tensor({3}, r.child(2))},
      [&x](Tape<double>& t, std::span<const Var> v) {
        return ops::sum(t, ops::conv2d(t, t.constant(x), v[0], v[1]));
      });
  EXPECT_TRUE(res.passed) << res.max_rel_error;
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(LeakyRelu, Values) {
  Tensor<double> x({3}, std::vector<double>{2.0, -1.0, 0.0});
  const auto y = kernels::leaky_relu_forward(x, 0.2);
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], -0.2);
  EXPECT_DOUBLE_EQ(y[2], 0.0);
}

TEST(LeakyRelu, SubgradientAtZeroIsSlope) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({1}, 0.0));
  t.backward(ops::sum(t, ops::leaky_relu(t, x)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 0.2);
}

TEST(Sigmoid, ValuesAndSaturation) {
  EXPECT_FLOAT_EQ(kernels::sigmoid(0.0f), 0.5f);
  EXPECT_EQ(kernels::sigmoid(40.0f), 1.0f);
  EXPECT_TRUE(std::isfinite(kernels::sigmoid(-100.0f)));
  EXPECT_GE(kernels::sigmoid(-100.0f), 0.0f);
}

TEST(Sigmoid, DerivativeAtZero) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({1}, 0.0));
  t.backward(ops::sum(t, ops::sigmoid(t, x)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 0.25);
  const double h = 1e-5;
  const double fd = (kernels::sigmoid(h) - kernels::sigmoid(-h)) / (2 * h);
  EXPECT_NEAR(t.grad(x)[0], fd, 1e-9);
}

TEST(MaxPool, SmallWindow) {
  const auto out = kernels::max_pool2_forward(from_rows(2, 2, {1, 2, 3, 4}), nullptr);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], 4.0);
}

TEST(MaxPool, RampHandEnumeration) {
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
  const auto out = kernels::max_pool2_forward(from_rows(4, 4, ramp), nullptr);
  EXPECT_EQ(out, from_rows(2, 2, {5, 7, 13, 15}));
}

TEST(MaxPool, TiesRouteGradientToFirstElement) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({1, 4, 4}, 3.0));
  Var y = ops::max_pool2(t, x);
  for (double v : t.value(y).data()) EXPECT_EQ(v, 3.0);
  t.backward(ops::sum(t, y));
  const auto& g = t.grad(x);
  for (std::size_t yy = 0; yy < 4; ++yy)
    for (std::size_t xx = 0; xx < 4; ++xx)
      EXPECT_EQ(g.at(0, yy, xx), (yy % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0);
}

TEST(MaxPool, RejectsOddDims) {
  EXPECT_THROW(kernels::max_pool2_forward(Tensor<float>({1, 3, 4}), nullptr), ContractError);
}

TEST(Upsample, ReplicatesBlocks) {
  const auto out = kernels::upsample_nearest2_forward(from_rows(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(out, from_rows(4, 4, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, PoolThenUpsampleIsNotIdentity) {
  const auto x = from_rows(2, 2, {1, 2, 3, 4});
  const auto round_trip = kernels::upsample_nearest2_forward(kernels::max_pool2_forward(x, nullptr));
  EXPECT_NE(round_trip, x);
}

TEST(Upsample, GradientOfSumIsFour) {
  Tape<double> t;
  Var x = t.variable(gradcheck::random_tensor({2, 3, 3}, RngStream(1, 1)));
  t.backward(ops::sum(t, ops::upsample_nearest2(t, x)));
  for (double g : t.grad(x).data()) EXPECT_EQ(g, 4.0);
}

TEST(Concat, ChannelOrderAndIdentity) {
  Tensor<double> a({1, 2, 2}, 1.0), b({2, 2, 2}, 2.0);
  b[4] = 5.0;
  const auto c = kernels::concat_channels_forward(a, b);
  EXPECT_EQ(c.shape(), (Shape{3, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c[i], 1.0);
  EXPECT_EQ(c[8], 5.0);
  EXPECT_EQ(kernels::concat_channels_forward(a, Tensor<double>()), a);
  EXPECT_THROW(kernels::concat_channels_forward(a, Tensor<double>({1, 3, 2})), ContractError);
}

TEST(Concat, BackwardSplitsOnes) {
  Tape<double> t;
  Var a = t.variable(Tensor<double>({1, 2, 2}, 1.0));
  Var b = t.variable(Tensor<double>({2, 2, 2}, 2.0));
  t.backward(ops::sum(t, ops::concat_channels(t, a, b)));
  for (double g : t.grad(a).data()) EXPECT_EQ(g, 1.0);
  for (double g : t.grad(b).data()) EXPECT_EQ(g, 1.0);
}

TEST(Dropout, IdentityCases) {
  Tape<float> t;
  Var x = t.variable(Tensor<float>({1, 4, 4}, 0.7f));
  EXPECT_EQ(t.value(ops::dropout(t, x, 0.0, RngStream(1, 1), true)), t.value(x));
  EXPECT_EQ(t.value(ops::dropout(t, x, 0.9, RngStream(1, 1), false)), t.value(x));
  EXPECT_THROW(ops::dropout(t, x, 1.0, RngStream(1, 1), true), ContractError);
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  const std::size_t n = 1000000;
  const auto s = kernels::dropout_scales<double>(n, 0.5, RngStream(8, 3));
  double mean = 0.0;
  for (double v : s) {
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= n;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
  // Each scale is Bernoulli(0.5) * 2: standard deviation 1.
  EXPECT_LE(std::abs(mean - 1.0), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Dropout, MeanWithinThreeStandardErrorsOnRandomInput) {
  for (double p : {0.2, 0.4, 0.7}) {
    const auto x = gradcheck::random_tensor({1, 200, 200}, RngStream(2, 2), 0.0, 1.0);
    const auto s = kernels::dropout_scales<double>(x.size(), p, RngStream(5, std::uint64_t(p * 10)));
    double in = 0.0, out = 0.0, out_sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      in += x[i];
      out += x[i] * s[i];
      out_sq += x[i] * s[i] * x[i] * s[i];
    }
    const double n = static_cast<double>(x.size());
    const double se = std::sqrt((out_sq / n - (out / n) * (out / n)) / n);
    EXPECT_LE(std::abs(out / n - in / n), 3.0 * se) << "p=" << p;
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4}));
  t.backward(ops::sum(t, x));
  for (double g : t.grad(x).data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesX) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({2}, std::vector<double>{1, -2}));
  t.backward(ops::scale(t, ops::sum(t, ops::mul(t, x, x)), 0.5));
  EXPECT_EQ(t.grad(x)[0], 1.0);
  EXPECT_EQ(t.grad(x)[1], -2.0);
}

TEST(Backward, RepeatedCallsAccumulateLeafGradients) {
  Tape<double> t;
  Var x = t.variable(Tensor<double>({3}, 1.0));
  Var loss = ops::sum(t, ops::scale(t, x, 2.0));
  t.backward(loss);
  t.backward(loss);
  for (double g : t.grad(x).data()) EXPECT_EQ(g, 4.0);
}

TEST(Backward, RejectsNonScalarAndForeignVars) {
  Tape<double> t, other;
  Var x = t.variable(Tensor<double>({2}, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
  Var y = other.variable(Tensor<double>({1}, 1.0));
  EXPECT_THROW(t.backward(y), ContractError);
  EXPECT_THROW(t.backward(Var{}), ContractError);
}

TEST(Backward, NonFiniteValuesAreRejected) {
  Tape<double> t;
  t.set_check_finite(true);
  Var x = t.variable(Tensor<double>({1}, std::numeric_limits<double>::infinity()));
  EXPECT_THROW(ops::scale(t, x, 1.0), NumericError);
}

TEST(Backward, ParameterGradientsAccumulateUntilReset) {
  Parameter<double> p{"p", Tensor<double>({2}, 3.0), {}};
  for (int k = 0; k < 2; ++k) {
    Tape<double> t;
    t.backward(ops::sum(t, t.parameter(p)));
  }
  EXPECT_EQ(p.grad[0], 2.0);
  p.zero_grad();
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(GradCheck, EveryPrimitivePasses) {
  for (const auto& r : gradcheck::run_suite(0)) {
    EXPECT_TRUE(r.passed) << r.name << " max_rel_err=" << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately wrong backward rule (factor 2 off) must fail the check.
  const auto res = gradcheck::check_inputs(
      "bad", {gradcheck::random_tensor({4}, RngStream(1, 2))}, [](Tape<double>& t, std::span<const Var> v) {
        const Var x = v[0];
        Tensor<double> out({1}, 0.0);
        for (double e : t.value(x).data()) out[0] += e * e;
        return t.record(
            std::move(out), {x},
            [x](Tape<double>& tt, const Tensor<double>& g) {
              if (auto* gx = tt.grad_sink(x))
                for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g[0] * tt.value(x)[i];
            },
            "bad_square");
      });
  EXPECT_FALSE(res.passed);
}

TEST(Tape, ReplayWithSameSeedIsBitIdentical) {
  auto run = [] {
    Tape<float> t;
    Var x = t.variable(Tensor<float>({1, 8, 8}, 0.25f));
    Var y = ops::dropout(t, ops::leaky_relu(t, x), 0.5, RngStream(17, 3), true);
    t.backward(ops::sum(t, ops::mul(t, y, y)));
    return std::pair{t.value(y), t.grad(x)};
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bit_identical(a.first, b.first));
  EXPECT_TRUE(bit_identical(a.second, b.second));
}
