#pragma once

#include "scnn/detection.hpp"
#include "scnn/eval.hpp"
#include "scnn/labeler.hpp"
#include "scnn/loss.hpp"
#include "scnn/segmentgen.hpp"
#include "scnn/synthgen.hpp"
#include "scnn/tinynet.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scnn {

// Class-conditional distribution of ground-truth lengths over window lengths.
class FrequencyPrior {
 public:
  FrequencyPrior() = default;
  FrequencyPrior(std::vector<FrameIndex> lengths, Matrix freq);

  // Frequency of class k (1-based) at the bin nearest to `window_length`.
  double operator()(ClassId k, FrameIndex window_length) const;
  // Nearest window length, ties to the shorter one.
  std::size_t bin(FrameIndex length) const;

  const std::vector<FrameIndex>& lengths() const { return lengths_; }
  const Matrix& frequencies() const { return freq_; }
  int num_classes() const { return static_cast<int>(freq_.rows()); }

 private:
  std::vector<FrameIndex> lengths_;
  Matrix freq_;  // classes x lengths, rows sum to 1
};

// Bins every instance to its nearest window length, normalizes per class and
// floors unseen cells at 1 / (10 * class count) before renormalizing. Throws
// std::invalid_argument when a class in 1..num_classes has no instance.
FrequencyPrior compute_frequency_prior(std::span<const GroundTruthInstance> gts, std::span<const FrameIndex> lengths,
                                       int num_classes);

void save_prior(const std::filesystem::path& path, const FrequencyPrior& prior);
FrequencyPrior load_prior(const std::filesystem::path& path);

// Greedy per-class NMS: keep the best remaining detection, drop same-class
// detections with IoU >= threshold. Output is sorted by confidence.
std::vector<Detection> nms(std::span<const Detection> dets, double threshold);

struct NetworkWidths {
  int conv1 = 4;
  int conv2 = 8;
  int hidden = 16;
};

struct PipelineConfig {
  double proposal_threshold = 0.7;
  double nms_offset = 0.1;
  double eval_theta = 0.5;
  bool use_proposal = true;
  bool use_classification_init = true;
  bool use_localization_loss = true;
  SgdConfig proposal_sgd{.lr_drop_factor = 10.0};
  SgdConfig classification_sgd{};
  SgdConfig localization_sgd{};
  LossConfig loss{};
  WindowConfig windows{};
  LabelingThresholds labeling{};
  NetworkWidths widths{};
  std::uint64_t seed = 1;

  double nms_threshold() const { return eval_theta - nms_offset; }
  std::vector<std::string> violations() const;
};

struct StageModels {
  ModelParams proposal;
  ModelParams classification;
  ModelParams localization;
  FrequencyPrior prior;
};

struct StageLogs {
  TrainingLog proposal;
  TrainingLog classification;
  TrainingLog localization;
  std::size_t proposal_samples = 0;
  std::size_t classification_samples = 0;
};

struct TrainedPipeline {
  StageModels models;
  StageLogs logs;
};

Architecture stage_architecture(const PipelineConfig& cfg, int channels, int height, int width, int num_outputs);

// Trains the proposal and classification networks with softmax loss, then the
// localization network with the combined loss starting from the classification
// weights. Ablation flags switch the localization stage to lambda = 0 or to a
// fresh initialization.
TrainedPipeline train_pipeline(std::span<const Video> training_videos, int num_classes, const PipelineConfig& cfg);

// Retrains only the localization stage on top of existing proposal and classification models.
ModelParams train_localization(std::span<const Video> training_videos, int num_classes, const PipelineConfig& cfg,
                               const ModelParams& classification, TrainingLog* log = nullptr);

struct PredictStats {
  std::size_t windows = 0;         // candidate segments generated
  std::size_t scored = 0;          // segments evaluated by the localization network
  std::vector<TemporalInterval> passed;  // proposal survivors, in window order
};

struct Prediction {
  std::vector<Detection> detections;
  PredictStats stats;
};

// Windows -> proposal filter -> localization scores -> drop background ->
// confidence times prior -> NMS at eval_theta - nms_offset.
Prediction predict(const Video& video, const StageModels& models, const PipelineConfig& cfg);

// predict() over many videos with up to `jobs` threads; output identical for any job count.
Prediction predict_all(std::span<const Video> videos, const StageModels& models, const PipelineConfig& cfg,
                       int jobs = 1);

void save_models(const std::filesystem::path& dir, const StageModels& models, const PipelineConfig& cfg);
StageModels load_models(const std::filesystem::path& dir);

struct AblationRow {
  std::string variant;
  double alpha = 0.0;
  double map = 0.0;        // mAP at eval_theta
  std::size_t scored = 0;  // segments through the localization network
  std::size_t detections = 0;
};

// The four variants (full, without proposal, without classification init,
// without localization loss) followed by one row per alpha in `alphas`.
std::vector<AblationRow> run_ablation(const SynthDataset& ds, const PipelineConfig& cfg, std::span<const double> alphas,
                                      int jobs = 1);

void write_ablation(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace scnn
