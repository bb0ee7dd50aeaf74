#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scnn {

using FrameIndex = std::int64_t;
using ClassId = int;

// Half-open frame interval [start, end) with 0 <= start < end.
class TemporalInterval {
 public:
  TemporalInterval(FrameIndex start, FrameIndex end);

  FrameIndex start() const { return start_; }
  FrameIndex end() const { return end_; }
  FrameIndex length() const { return end_ - start_; }

  bool contains(const TemporalInterval& other) const {
    return start_ <= other.start_ && other.end_ <= end_;
  }
  TemporalInterval shifted(FrameIndex offset) const { return {start_ + offset, end_ + offset}; }

  friend bool operator==(const TemporalInterval&, const TemporalInterval&) = default;
  friend auto operator<=>(const TemporalInterval&, const TemporalInterval&) = default;

 private:
  FrameIndex start_;
  FrameIndex end_;
};

struct GroundTruthInstance {
  TemporalInterval interval;
  ClassId category;  // 1..K, never background

  GroundTruthInstance(TemporalInterval iv, ClassId k);
  bool operator==(const GroundTruthInstance&) const = default;
};

struct VideoAnnotation {
  std::string id;
  FrameIndex total_frames = 0;
  std::vector<GroundTruthInstance> instances;
  bool trimmed = false;

  // Throws std::invalid_argument when an instance leaves [0, T) or a trimmed
  // video is not exactly one instance spanning the whole clip.
  void validate() const;
};

// Intersection over union counted in frames; 0 for disjoint intervals.
double iou(const TemporalInterval& a, const TemporalInterval& b);

struct Overlap {
  double iou = 0.0;
  std::optional<std::size_t> index;
};

// Highest IoU against a set of ground truths, ties to the lowest index.
Overlap best_overlap(const TemporalInterval& candidate, std::span<const GroundTruthInstance> gts);

// name -> id with id >= 1.
using LabelMap = std::map<std::string, ClassId>;

LabelMap load_label_map(const std::filesystem::path& path);
void save_label_map(const std::filesystem::path& path, const LabelMap& labels);

// Annotation document: array of {id, frames, trimmed, instances: [{start, end, class}]}.
// `class` may be an integer id or a name resolved through `labels`.
std::vector<VideoAnnotation> load_annotations(const std::filesystem::path& path,
                                              const LabelMap& labels = {});
// Writes class names when `labels` covers every id, integer ids otherwise.
void save_annotations(const std::filesystem::path& path, std::span<const VideoAnnotation> videos,
                      const LabelMap& labels = {});

}  // namespace scnn
