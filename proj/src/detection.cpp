#include "scnn/detection.hpp"

#include "scnn/types.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

namespace scnn {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return std::forward_as_tuple(a.video_id, a.interval.start(), a.interval.length(), a.category) <
         std::forward_as_tuple(b.video_id, b.interval.start(), b.interval.length(), b.category);
}

void sort_by_confidence(std::vector<Detection>& dets) { std::stable_sort(dets.begin(), dets.end(), ranks_before); }

void write_detections(const std::filesystem::path& path, std::span<const Detection> dets) {
  std::vector<Detection> sorted(dets.begin(), dets.end());
  sort_by_confidence(sorted);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "video_id,start,end,class,confidence\n";
  char buf[64];
  for (const auto& d : sorted) {
    std::snprintf(buf, sizeof buf, "%.12g", d.confidence);
    out << d.video_id << ',' << d.interval.start() << ',' << d.interval.end() << ',' << d.category << ',' << buf
        << '\n';
  }
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open detections " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("video_id,start,end,class,confidence", 0) != 0) {
    throw ConfigError(path.string() + ": unexpected detections header");
  }
  std::vector<Detection> dets;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      dets.push_back({fields[0], TemporalInterval(std::stoll(fields[1]), std::stoll(fields[2])),
                      std::stoi(fields[3]), std::stod(fields[4])});
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return dets;
}

}  // namespace scnn
