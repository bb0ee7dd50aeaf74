#pragma once

#include "scnn/detection.hpp"
#include "scnn/interval.hpp"
#include "scnn/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scnn {

enum class Verdict { true_positive, false_positive };

struct GroundTruthRef {
  std::string video_id;
  TemporalInterval interval;
};

struct MatchResult {
  std::vector<std::size_t> order;                  // detection indices, ranked
  std::vector<Verdict> verdicts;                   // per ranked detection
  std::vector<std::optional<std::size_t>> matched;  // ground truth consumed by each ranked detection
};

// Greedy matching in confidence order. A detection is a true positive when an
// unmatched ground truth of the same video has IoU strictly above `theta`; it
// consumes the one with the highest IoU (ties to the lower index).
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthRef> gts, double theta);

enum class ApMode { uninterpolated, eleven_point };

// Sum of precision at each true positive rank over the ground-truth count, or the
// 11-point interpolated variant. nullopt when there is no ground truth.
std::optional<double> average_precision(std::span<const Verdict> verdicts, std::size_t gt_count,
                                        ApMode mode = ApMode::uninterpolated);

struct EvalReport {
  std::vector<double> thetas;
  std::vector<ClassId> classes;  // classes with at least one ground truth
  Matrix ap;                     // thetas x classes
  std::vector<double> mean_ap;   // per theta

  double map_at(double theta) const;
};

// Per-class AP and mAP for every theta. Throws ConfigError for a detection whose
// class lies outside 1..num_classes.
EvalReport evaluate(std::span<const Detection> dets, std::span<const VideoAnnotation> annotations, int num_classes,
                    std::span<const double> thetas, ApMode mode = ApMode::uninterpolated);

// The kappa highest-confidence detections.
std::vector<Detection> top_k_filter(std::span<const Detection> dets, std::size_t kappa);

// class,theta_0.1,...,theta_0.5 rows plus a final mAP row.
void write_results(const std::filesystem::path& path, const EvalReport& report, const LabelMap& labels = {});
// class,name,ap at one theta.
void write_class_histogram(const std::filesystem::path& path, const EvalReport& report, double theta,
                           const LabelMap& labels = {});

}  // namespace scnn
