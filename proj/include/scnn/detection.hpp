#pragma once

#include "scnn/interval.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scnn {

struct Detection {
  std::string video_id;
  TemporalInterval interval;
  ClassId category;  // >= 1
  double confidence;
};

// Confidence descending; ties by video id, start, length, class.
bool ranks_before(const Detection& a, const Detection& b);
void sort_by_confidence(std::vector<Detection>& dets);

// CSV rows: video_id,start,end,class,confidence, sorted by confidence descending.
void write_detections(const std::filesystem::path& path, std::span<const Detection> dets);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace scnn
