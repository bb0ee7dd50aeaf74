#pragma once

#include "scnn/interval.hpp"
#include "scnn/types.hpp"

#include <string>
#include <vector>

namespace scnn {

struct WindowConfig {
  std::vector<FrameIndex> lengths{16, 32, 64, 128};
  double overlap = 0.75;
  int sample_count = 8;

  // Round-half-up of length * (1 - overlap), at least 1.
  FrameIndex stride(FrameIndex length) const;
  FrameIndex min_length() const;

  // Every violated invariant, empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

struct CandidateSegment {
  TemporalInterval interval;
  std::vector<FrameIndex> frames;
  std::string video_id;
};

// Multi-scale sliding windows ordered by (length, start). Lengths longer than
// the video are skipped; throws std::invalid_argument when none fits.
std::vector<TemporalInterval> generate_windows(FrameIndex total_frames, const WindowConfig& cfg);

// index_i = start + floor(i * length / count).
std::vector<FrameIndex> sample_frames(const TemporalInterval& interval, int count);

CandidateSegment make_segment(std::string video_id, const TemporalInterval& interval, int count);

std::vector<CandidateSegment> generate_segments(const std::string& video_id, FrameIndex total_frames,
                                                const WindowConfig& cfg);

// Gathers the sampled frames into a (channels, L, height, width) tensor.
// Throws std::out_of_range on a frame outside the video.
template <typename Scalar = double, typename Source>
Volume<Scalar> segment_tensor(const Volume<Source>& video, const CandidateSegment& seg) {
  const auto& d = video.dimensions();
  const auto L = static_cast<Eigen::Index>(seg.frames.size());
  Volume<Scalar> out(d[0], L, d[2], d[3]);
  for (Eigen::Index t = 0; t < L; ++t) {
    const FrameIndex f = seg.frames[static_cast<std::size_t>(t)];
    if (f < 0 || f >= d[1]) {
      throw std::out_of_range("segment frame " + std::to_string(f) + " outside video of " +
                              std::to_string(d[1]) + " frames");
    }
    for (Eigen::Index c = 0; c < d[0]; ++c)
      for (Eigen::Index y = 0; y < d[2]; ++y)
        for (Eigen::Index x = 0; x < d[3]; ++x) out(c, t, y, x) = static_cast<Scalar>(video(c, f, y, x));
  }
  return out;
}

}  // namespace scnn
