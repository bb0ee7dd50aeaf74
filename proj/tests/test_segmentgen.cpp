#include "oracles.hpp"

#include "scnn/segmentgen.hpp"

#include <gtest/gtest.h>

namespace scnn {
namespace {

WindowConfig windows(std::vector<FrameIndex> lengths, double overlap = 0.75) {
  WindowConfig cfg;
  cfg.lengths = std::move(lengths);
  cfg.overlap = overlap;
  return cfg;
}

TEST(GenerateWindows, SingleExactFit) {
  const auto w = generate_windows(16, windows({16}));
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], TemporalInterval(0, 16));
}

TEST(GenerateWindows, ThreeScalesOn64Frames) {
  // Strides 4, 8, 16 give 13 + 5 + 1 windows.
  const auto w = generate_windows(64, windows({16, 32, 64}));
  EXPECT_EQ(w.size(), 19u);
}

TEST(GenerateWindows, PartialStrideDropsTail) {
  const auto w = generate_windows(20, windows({16}));
  EXPECT_EQ(w, (std::vector<TemporalInterval>{{0, 16}, {4, 20}}));
}

TEST(GenerateWindows, VideoShorterThanEveryWindowThrows) {
  EXPECT_THROW(generate_windows(10, windows({16, 32})), std::invalid_argument);
}

TEST(GenerateWindows, LongerScalesAreSkipped) {
  const auto w = generate_windows(40, windows({16, 64}));
  for (const auto& iv : w) EXPECT_EQ(iv.length(), 16);
}

TEST(WindowConfigTest, ViolationsListEveryProblem) {
  WindowConfig cfg;
  cfg.lengths = {};
  cfg.overlap = 1.0;
  cfg.sample_count = 0;
  EXPECT_GE(cfg.violations().size(), 3u);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(WindowProperty, BoundsOverlapAndClosedFormCount) {
  oracle::Gen gen(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<FrameIndex> lengths;
    const int n = gen.integer(1, 4);
    for (int i = 0; i < n; ++i) lengths.push_back(gen.integer(2, 70));
    auto cfg = windows(lengths, gen.integer(0, 9) / 10.0);
    cfg.sample_count = 1;
    const FrameIndex min_len = *std::min_element(lengths.begin(), lengths.end());
    const FrameIndex T = gen.integer(static_cast<int>(min_len), 300);
    const auto w = generate_windows(T, cfg);

    std::set<FrameIndex> unique(lengths.begin(), lengths.end());
    std::size_t expected = 0;
    for (FrameIndex len : unique) {
      if (len > T) continue;
      expected += static_cast<std::size_t>((T - len) / cfg.stride(len) + 1);
    }
    EXPECT_EQ(w.size(), expected);
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_GE(w[i].start(), 0);
      EXPECT_LE(w[i].end(), T);
      if (i > 0 && w[i - 1].length() == w[i].length()) {
        const FrameIndex len = w[i].length();
        EXPECT_EQ(w[i - 1].end() - w[i].start(), len - cfg.stride(len));
      }
    }
  }
}

TEST(SampleFrames, IdentityWhenLengthEqualsCount) {
  const auto f = sample_frames({0, 16}, 16);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)], i);
}

TEST(SampleFrames, EveryOtherFrame) {
  const auto f = sample_frames({0, 32}, 16);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)], 2 * i);
}

TEST(SampleFrames, OffsetInterval) {
  EXPECT_EQ(sample_frames({5, 13}, 4), (std::vector<FrameIndex>{5, 7, 9, 11}));
}

TEST(SampleFramesProperty, SortedInsideIntervalAndIdempotent) {
  oracle::Gen gen(22);
  for (int trial = 0; trial < 300; ++trial) {
    const auto iv = gen.interval(500, 200);
    const int L = gen.integer(1, 20);
    const auto f = sample_frames(iv, L);
    ASSERT_EQ(f.size(), static_cast<std::size_t>(L));
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
    EXPECT_EQ(f.front(), iv.start());
    EXPECT_LT(f.back(), iv.end());
    EXPECT_EQ(sample_frames(iv, L), f);
  }
}

VideoTensor ramp_video(Eigen::Index frames) {
  VideoTensor v(1, frames, 8, 8);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index y = 0; y < 8; ++y)
      for (Eigen::Index x = 0; x < 8; ++x) v(0, t, y, x) = static_cast<float>(t * 100 + y * 8 + x);
  return v;
}

TEST(SegmentTensor, FullVideoSegmentIsTheVideo) {
  const auto video = ramp_video(16);
  const auto seg = make_segment("v", {0, 16}, 16);
  const auto t = segment_tensor(video, seg);
  ASSERT_EQ(t.dimension(1), 16);
  for (Eigen::Index i = 0; i < t.size(); ++i) EXPECT_EQ(t.data()[i], static_cast<double>(video.data()[i]));
}

TEST(SegmentTensor, GatherEveryOtherFrame) {
  const auto video = ramp_video(32);
  const auto t = segment_tensor(video, make_segment("v", {0, 32}, 16));
  for (Eigen::Index s = 0; s < 16; ++s)
    for (Eigen::Index y = 0; y < 8; ++y)
      for (Eigen::Index x = 0; x < 8; ++x) EXPECT_EQ(t(0, s, y, x), video(0, 2 * s, y, x));
}

TEST(SegmentTensor, FrameOutsideVideoThrows) {
  const auto video = ramp_video(32);
  CandidateSegment seg{{0, 41}, {0, 40}, "v"};
  EXPECT_THROW(segment_tensor(video, seg), std::out_of_range);
}

}  // namespace
}  // namespace scnn
