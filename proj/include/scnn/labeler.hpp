#pragma once

#include "scnn/interval.hpp"
#include "scnn/segmentgen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scnn {

enum class SampleRole { positive, background, unlabeled };

std::string to_string(SampleRole role);

struct LabeledSample {
  CandidateSegment segment;
  ClassId label = 0;     // 0 = background
  double overlap = 1.0;  // v; 1 for backgrounds and trimmed positives
  SampleRole role = SampleRole::unlabeled;
  bool from_trimmed = false;
  std::optional<std::size_t> gt_index;  // ground truth the positive was assigned to
};

struct LabelingThresholds {
  double positive_iou = 0.7;
  double background_iou = 0.3;
  double rescue_iou = 0.5;

  std::vector<std::string> violations() const;
};

// Applies the positive / background rules per candidate, then the per-ground-truth
// rescue pass. Output order follows `candidates`.
std::vector<LabeledSample> assign_labels(std::span<const CandidateSegment> candidates,
                                         std::span<const GroundTruthInstance> gts,
                                         const LabelingThresholds& th);

// Labels the sliding windows of every untrimmed video and merges the result in
// (video id, start, length) order.
std::vector<LabeledSample> label_untrimmed(std::span<const VideoAnnotation> videos, const WindowConfig& windows,
                                           const LabelingThresholds& th);

// One uniformly sampled segment per trimmed clip, labeled with its class and v = 1.
std::vector<LabeledSample> trimmed_samples(std::span<const VideoAnnotation> videos, int sample_count);

struct TrainingSet {
  std::vector<LabeledSample> samples;  // positives first, then sampled backgrounds
  std::size_t positives = 0;
  std::size_t backgrounds = 0;
  bool backgrounds_exhausted = false;  // fewer backgrounds existed than the target
};

// All positives with labels collapsed to 1 plus as many backgrounds as positives.
TrainingSet build_proposal_set(std::span<const LabeledSample> labeled, std::span<const LabeledSample> trimmed,
                               std::uint64_t seed);

// All positives with class labels plus ceil(positives / K) backgrounds.
TrainingSet build_classification_set(std::span<const LabeledSample> labeled,
                                     std::span<const LabeledSample> trimmed, int num_classes,
                                     std::uint64_t seed);

// Same samples; the overlap carried by each sample becomes the loss target.
TrainingSet build_localization_set(const TrainingSet& classification);

// CSV: video_id,start,end,k,v,role
void write_labeling_report(const std::filesystem::path& path, std::span<const LabeledSample> samples);

}  // namespace scnn
