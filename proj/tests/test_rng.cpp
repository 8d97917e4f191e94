#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "s2s/rng.hpp"

using s2s::RngStream;

// Known-answer vectors of the Random123 reference implementation (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswerZero) {
  const auto out = s2s::philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = s2s::philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
}

TEST(Philox, KnownAnswerPi) {
  const auto out = s2s::philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0});
  EXPECT_EQ(out, (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, Deterministic) {
  const RngStream a(42, 7), b(42, 7);
  for (std::uint64_t i = 0; i < 100; ++i) EXPECT_EQ(a.word(i), b.word(i));
  EXPECT_EQ(a.child(3).word(0), b.child(3).word(0));
}

TEST(RngStream, SeedsStreamsAndChildrenDiffer) {
  const RngStream base(1, 1);
  std::set<std::uint32_t> firsts{base.word(0), RngStream(2, 1).word(0), RngStream(1, 2).word(0),
                                 base.child(0).word(0), base.child(1).word(0)};
  EXPECT_EQ(firsts.size(), 5u);
}

TEST(RngStream, UniformRangeAndMoments) {
  const RngStream r(9, 9);
  const std::size_t n = 200000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float u = r.uniform(i);
    ASSERT_GE(u, 0.0f);
    ASSERT_LT(u, 1.0f);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(var, 1.0 / 12.0, 2e-3);
}

TEST(RngStream, NormalMoments) {
  const RngStream r(3, 4);
  const std::size_t n = 200000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = r.normal(i);
    ASSERT_TRUE(std::isfinite(z));
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(RngStream, FillUniformMatchesScalarDraws) {
  const RngStream r(5, 6);
  std::vector<float> buf(37);
  r.fill_uniform(buf, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_EQ(buf[i], r.uniform(3 + i));
}
