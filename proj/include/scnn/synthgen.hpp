#pragma once

#include "scnn/interval.hpp"
#include "scnn/segmentgen.hpp"
#include "scnn/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scnn {

// Synthetic videos: Gaussian noise plus, inside every planted instance, a blob
// that crosses the frame once along a class-specific direction. The crossing
// spans the instance exactly, so a window's content reveals how well it is
// aligned with the action.
struct SynthConfig {
  int num_classes = 2;
  int trimmed_videos = 24;
  int train_untrimmed = 40;
  int test_untrimmed = 40;
  FrameIndex min_frames = 96;
  FrameIndex max_frames = 192;
  int channels = 1;
  int height = 8;
  int width = 8;
  int min_instances = 1;
  int max_instances = 2;
  FrameIndex min_action = 16;
  FrameIndex max_action = 48;
  double blob_sigma = 1.0;
  double amplitude = 1.0;
  double noise = 0.3;
  double bound = 4.0;       // every value is clamped to [-bound, bound]
  int distractors = 0;      // static blobs per untrimmed video, outside any instance
  std::uint64_t seed = 7;

  std::vector<std::string> violations() const;
};

struct Video {
  VideoAnnotation annotation;
  VideoTensor frames;  // (channels, T, height, width)
};

struct ProbeReport {
  double accuracy = 0.0;
  std::vector<double> per_class;  // index 0 = background
};

struct SynthDataset {
  int num_classes = 0;
  std::vector<Video> trimmed;
  std::vector<Video> train_untrimmed;
  std::vector<Video> test_untrimmed;
  LabelMap labels;
  std::size_t planted_instances = 0;  // generation log count
  ProbeReport probe;

  std::vector<Video> training_videos() const;
  std::vector<VideoAnnotation> annotations(std::span<const Video> videos) const;
};

// Deterministic per seed. Checks every instance is reachable by some window of
// `windows` with IoU > 0.5 and throws std::invalid_argument on infeasible packing.
SynthDataset generate(const SynthConfig& cfg, const WindowConfig& windows);

// Linear softmax probe on time-averaged ground-truth and background segments,
// trained on even-indexed samples and scored on odd ones.
ProbeReport bayes_separability_check(const SynthDataset& ds, int sample_count, std::uint64_t seed = 0);

// Flat little-endian file: "SCNT", u32 version, u32 dtype (1 = float32), u32 rank,
// u32 dims[rank], then the float32 payload in row-major order.
void write_tensor(const std::filesystem::path& path, const VideoTensor& tensor);
VideoTensor read_tensor(const std::filesystem::path& path);

// Writes manifest.json, labels.json, {split}_annotations.json and videos/<id>.bin.
void save_dataset(const std::filesystem::path& dir, const SynthDataset& ds, const SynthConfig& cfg);
SynthDataset load_dataset(const std::filesystem::path& dir);

}  // namespace scnn
