#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "s2s/s2s.hpp"

using namespace s2s;

namespace {

Image textured(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Image img(h, w, c);
  const RngStream r(seed, 99);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = r.uniform(i);
  return img;
}

TrainConfig quick_config(std::size_t steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.scorer = "null";
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("s2s_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Adam, FirstStepHandValue) {
  Parameter<double> p{"theta", Tensor<double>({1}, 1.0), Tensor<double>({1}, 1.0)};
  AdamState<double> state;
  std::vector<Parameter<double>*> params{&p};
  adam_step<double>(params, state, 4e-4);
  // m̂ = 1, v̂ = 1 after bias correction.
  EXPECT_NEAR(p.value[0], 1.0 - 4e-4 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[0], 0.9996, 1e-9);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<float> p{"w", Tensor<float>({3}, 0.25f), Tensor<float>({3})};
  AdamState<float> state;
  std::vector<Parameter<float>*> params{&p};
  for (int i = 0; i < 5; ++i) adam_step<float>(params, state, 4e-4);
  for (float v : p.value.data()) EXPECT_EQ(v, 0.25f);
  for (const auto& v : state.v)
    for (float e : v.data()) EXPECT_GE(e, 0.0f);
}

TEST(Adam, RejectsShapeMismatch) {
  Parameter<float> p{"w", Tensor<float>({3}), Tensor<float>({4})};
  AdamState<float> state;
  std::vector<Parameter<float>*> params{&p};
  EXPECT_THROW(adam_step<float>(params, state, 4e-4), ContractError);
  EXPECT_THROW(adam_step<float>(params, state, 0.0), ContractError);
}

TEST(Padding, Multiple32Cases) {
  const Image a = textured(64, 64, 3, 1);
  const auto pa = pad_to_multiple32(a);
  EXPECT_EQ(pa.image, a);
  EXPECT_EQ(pa.crop.height, 64u);

  const Image b = textured(65, 70, 3, 2);
  const auto pb = pad_to_multiple32(b);
  EXPECT_EQ(pb.image.height, 96u);
  EXPECT_EQ(pb.image.width, 96u);
  EXPECT_EQ(pb.crop.height, 65u);
  EXPECT_EQ(pb.crop.width, 70u);
  EXPECT_EQ(crop(pb.image, pb.crop), b);
  // Right/bottom padding mirrors the last rows and columns.
  EXPECT_EQ(pb.image.at(0, 65, 3), b.at(0, 63, 3));
  EXPECT_EQ(pb.image.at(1, 2, 70), b.at(1, 2, 68));

  const Image tiny = textured(1, 3, 1, 3);
  const auto pt = pad_to_multiple32(tiny);
  EXPECT_EQ(pt.image.height, 32u);
  EXPECT_EQ(crop(pt.image, pt.crop), tiny);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto net = build_network<float>(3, 0.4, true, RngStream(5, streams::kInit));
  const Checkpoint ckpt = make_checkpoint(net, 0.4, 5, 10);
  const auto path = temp_path("ckpt.s2sp");
  save_checkpoint(ckpt, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back, ckpt);
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i)
    EXPECT_TRUE(bit_identical(back.tensors[i].second, ckpt.tensors[i].second));
  EXPECT_EQ(restore_network<float>(back).manifest(), net.manifest());
  EXPECT_EQ(serialize(back), serialize(ckpt));
}

TEST(Checkpoint, HeaderLayout) {
  const auto net = build_network<float>(1, 0.4, false, RngStream(5, streams::kInit));
  const std::string bytes = serialize(make_checkpoint(net, 0.4, 5, 10));
  EXPECT_EQ(bytes.substr(0, 4), "S2SP");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
  EXPECT_EQ(bytes[5], 0);
}

TEST(Checkpoint, RejectsCorruptOrMismatchedData) {
  const auto net = build_network<float>(1, 0.4, true, RngStream(5, streams::kInit));
  Checkpoint ckpt = make_checkpoint(net, 0.4, 5, 10);
  std::string bytes = serialize(ckpt);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 3)), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), IoError);
  ckpt.network.channels = 3;
  EXPECT_THROW(restore_network<float>(ckpt), ContractError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.s2sp"), IoError);
}

TEST(Train, LossDecreasesOnConstantImage) {
  const Image gray(64, 64, 3, 0.5f);
  const TrainResult r = train(gray, quick_config(200));
  ASSERT_EQ(r.loss_trace.size(), 200u);
  for (double v : r.loss_trace) ASSERT_TRUE(std::isfinite(v));
  const double lead = std::accumulate(r.loss_trace.begin(), r.loss_trace.begin() + 50, 0.0) / 50;
  const double trail = std::accumulate(r.loss_trace.end() - 50, r.loss_trace.end(), 0.0) / 50;
  EXPECT_LT(trail, lead);
}

TEST(Train, IdenticalSeedsGiveBitIdenticalCheckpoints) {
  const Image y = textured(32, 32, 1, 4);
  TrainConfig cfg = quick_config(5);
  cfg.scorer = "smoothtv";
  const TrainResult a = train(y, cfg), b = train(y, cfg);
  EXPECT_EQ(serialize(a.checkpoint), serialize(b.checkpoint));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  cfg.seed = 1;
  EXPECT_NE(serialize(train(y, cfg).checkpoint), serialize(a.checkpoint));
}

TEST(Train, ValidatesConfiguration) {
  const Image y(32, 32, 1, 0.5f);
  TrainConfig cfg = quick_config(0);
  EXPECT_THROW(train(y, cfg), ContractError);
  cfg = quick_config(1);
  cfg.lr = 0.0;
  EXPECT_THROW(train(y, cfg), ContractError);
  cfg = quick_config(1);
  cfg.p_mask = 1.0;
  EXPECT_THROW(train(y, cfg), ContractError);
  cfg = quick_config(1);
  cfg.scorer = "unknown";
  EXPECT_THROW(train(y, cfg), ContractError);
  EXPECT_THROW(train(Image(32, 32, 2, 0.5f), quick_config(1)), ContractError);
}

TEST(Train, HandlesSizesThatNeedPadding) {
  const TrainResult r = train(textured(40, 33, 3, 6), quick_config(2));
  EXPECT_EQ(r.loss_trace.size(), 2u);
  const Image out = denoise_ensemble(r.checkpoint, textured(40, 33, 3, 6), EnsembleConfig{2, std::nullopt, 0, 1});
  EXPECT_EQ(out.height, 40u);
  EXPECT_EQ(out.width, 33u);
}

class EnsembleTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    y_ = new Image(textured(32, 32, 3, 8));
    ckpt_ = new Checkpoint(train(*y_, quick_config(3)).checkpoint);
  }
  static void TearDownTestSuite() {
    delete y_;
    delete ckpt_;
  }
  static Image* y_;
  static Checkpoint* ckpt_;
};
Image* EnsembleTest::y_ = nullptr;
Checkpoint* EnsembleTest::ckpt_ = nullptr;

TEST_F(EnsembleTest, SingleMemberEqualsOneForwardPass) {
  const Image mean = ensemble_mean(*ckpt_, *y_, EnsembleConfig{1, std::nullopt, 4, 1});
  auto net = restore_network<float>(*ckpt_);
  EXPECT_EQ(mean, ensemble_member(net, pad_to_multiple32(*y_), ckpt_->p_mask, 4, 0));
}

TEST_F(EnsembleTest, DegenerateEnsembleAveragesToEachMember) {
  Checkpoint ckpt = *ckpt_;
  ckpt.network.p_drop = 0.0;
  const EnsembleConfig cfg{6, 0.0, 2, 1};
  const Image mean = ensemble_mean(ckpt, *y_, cfg);
  auto net = restore_network<float>(ckpt);
  const Image one = ensemble_member(net, pad_to_multiple32(*y_), 0.0, 2, 3);
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(mean.data[i], one.data[i], 1e-6);
}

TEST_F(EnsembleTest, ThreadCountDoesNotChangeTheResult) {
  const Image a = ensemble_mean(*ckpt_, *y_, EnsembleConfig{5, std::nullopt, 1, 1});
  const Image b = ensemble_mean(*ckpt_, *y_, EnsembleConfig{5, std::nullopt, 1, 3});
  EXPECT_EQ(a, b);
}

TEST_F(EnsembleTest, PermutationInvariantWithinTolerance) {
  const std::size_t n = 6;
  const Image canonical = ensemble_mean(*ckpt_, *y_, EnsembleConfig{n, std::nullopt, 3, 1});
  auto net = restore_network<float>(*ckpt_);
  const auto padded = pad_to_multiple32(*y_);
  std::vector<double> acc(canonical.size(), 0.0);
  for (std::size_t k = n; k-- > 0;) {
    const Image m = ensemble_member(net, padded, ckpt_->p_mask, 3, k);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.data[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(acc[i] / n, canonical.data[i], 1e-5);
}

TEST_F(EnsembleTest, OutputIsClampedAndDeterministic) {
  const EnsembleConfig cfg{3, std::nullopt, 9, 1};
  const Image a = denoise_ensemble(*ckpt_, *y_, cfg);
  EXPECT_EQ(a, denoise_ensemble(*ckpt_, *y_, cfg));
  for (float v : a.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST_F(EnsembleTest, VarianceShrinksWithEnsembleSize) {
  // Per-pixel variance across repeated ensembles, averaged over pixels.
  auto spread = [&](std::size_t n) {
    const std::size_t reps = 8;
    std::vector<Image> runs;
    for (std::size_t r = 0; r < reps; ++r)
      runs.push_back(ensemble_mean(*ckpt_, *y_, EnsembleConfig{n, std::nullopt, 1000 + r, 1}));
    double total = 0.0;
    for (std::size_t i = 0; i < runs[0].size(); ++i) {
      double m = 0.0, s = 0.0;
      for (const auto& im : runs) m += im.data[i];
      m /= reps;
      for (const auto& im : runs) s += (im.data[i] - m) * (im.data[i] - m);
      total += s / (reps - 1);
    }
    return total / runs[0].size();
  };
  EXPECT_LT(spread(16), spread(2));
}

TEST_F(EnsembleTest, RejectsChannelMismatchAndEmptyEnsemble) {
  EXPECT_THROW(ensemble_mean(*ckpt_, Image(32, 32, 1, 0.5f), EnsembleConfig{}), ContractError);
  EXPECT_THROW(ensemble_mean(*ckpt_, *y_, EnsembleConfig{0}), ContractError);
}
