#include "scnn/segmentgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scnn {

FrameIndex WindowConfig::stride(FrameIndex length) const {
  const auto s = static_cast<FrameIndex>(std::floor(static_cast<double>(length) * (1.0 - overlap) + 0.5));
  return std::max<FrameIndex>(s, 1);
}

FrameIndex WindowConfig::min_length() const {
  return lengths.empty() ? 0 : *std::min_element(lengths.begin(), lengths.end());
}

std::vector<std::string> WindowConfig::violations() const {
  std::vector<std::string> out;
  if (lengths.empty()) out.emplace_back("window.lengths must not be empty");
  if (sample_count < 1) out.emplace_back("window.sample_count must be >= 1");
  for (FrameIndex l : lengths) {
    if (l < sample_count) {
      out.push_back("window length " + std::to_string(l) + " shorter than sample_count " +
                    std::to_string(sample_count));
    }
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) out.emplace_back("window.overlap must lie in [0, 1)");
  return out;
}

void WindowConfig::validate() const {
  const auto v = violations();
  if (!v.empty()) throw std::invalid_argument(v.front());
}

std::vector<TemporalInterval> generate_windows(FrameIndex total_frames, const WindowConfig& cfg) {
  cfg.validate();
  if (total_frames < cfg.min_length()) {
    throw std::invalid_argument("video of " + std::to_string(total_frames) +
                                " frames is shorter than every window");
  }
  std::vector<FrameIndex> lengths = cfg.lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  std::vector<TemporalInterval> windows;
  for (FrameIndex len : lengths) {
    if (len > total_frames) continue;
    const FrameIndex step = cfg.stride(len);
    for (FrameIndex s = 0; s + len <= total_frames; s += step) windows.emplace_back(s, s + len);
  }
  return windows;
}

std::vector<FrameIndex> sample_frames(const TemporalInterval& interval, int count) {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  std::vector<FrameIndex> frames(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    frames[static_cast<std::size_t>(i)] = interval.start() + (i * interval.length()) / count;
  }
  return frames;
}

CandidateSegment make_segment(std::string video_id, const TemporalInterval& interval, int count) {
  return {interval, sample_frames(interval, count), std::move(video_id)};
}

std::vector<CandidateSegment> generate_segments(const std::string& video_id, FrameIndex total_frames,
                                                const WindowConfig& cfg) {
  std::vector<CandidateSegment> out;
  for (const auto& w : generate_windows(total_frames, cfg)) {
    out.push_back(make_segment(video_id, w, cfg.sample_count));
  }
  return out;
}

}  // namespace scnn
