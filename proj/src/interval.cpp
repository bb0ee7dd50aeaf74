#include "scnn/interval.hpp"

#include "scnn/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace scnn {

using nlohmann::json;

TemporalInterval::TemporalInterval(FrameIndex start, FrameIndex end) : start_(start), end_(end) {
  if (start < 0 || end <= start) {
    throw std::invalid_argument("invalid interval [" + std::to_string(start) + ", " +
                                std::to_string(end) + ")");
  }
}

GroundTruthInstance::GroundTruthInstance(TemporalInterval iv, ClassId k) : interval(iv), category(k) {
  if (k < 1) throw std::invalid_argument("ground truth category must be >= 1");
}

void VideoAnnotation::validate() const {
  if (total_frames <= 0) throw std::invalid_argument("video '" + id + "': no frames");
  const TemporalInterval whole(0, total_frames);
  for (const auto& gt : instances) {
    if (!whole.contains(gt.interval)) {
      throw std::invalid_argument("video '" + id + "': instance outside [0, T)");
    }
  }
  if (trimmed && (instances.size() != 1 || instances.front().interval != whole)) {
    throw std::invalid_argument("video '" + id + "': trimmed video must hold one full-length instance");
  }
}

double iou(const TemporalInterval& a, const TemporalInterval& b) {
  const FrameIndex inter = std::min(a.end(), b.end()) - std::max(a.start(), b.start());
  if (inter <= 0) return 0.0;
  const FrameIndex uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Overlap best_overlap(const TemporalInterval& candidate, std::span<const GroundTruthInstance> gts) {
  Overlap best;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const double o = iou(candidate, gts[i].interval);
    if (!best.index || o > best.iou) {
      best.iou = o;
      best.index = i;
    }
  }
  return best;
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace

LabelMap load_label_map(const std::filesystem::path& path) {
  const json doc = read_json(path);
  if (!doc.is_object()) throw ConfigError(path.string() + ": label map must be an object");
  LabelMap labels;
  for (const auto& [name, id] : doc.items()) {
    if (!id.is_number_integer() || id.get<int>() < 1) {
      throw ConfigError(path.string() + ": label '" + name + "' needs an integer id >= 1");
    }
    labels.emplace(name, id.get<int>());
  }
  return labels;
}

void save_label_map(const std::filesystem::path& path, const LabelMap& labels) {
  json doc = json::object();
  for (const auto& [name, id] : labels) doc[name] = id;
  write_json(path, doc);
}

std::vector<VideoAnnotation> load_annotations(const std::filesystem::path& path, const LabelMap& labels) {
  const json doc = read_json(path);
  if (!doc.is_array()) throw ConfigError(path.string() + ": annotations must be an array");
  std::vector<VideoAnnotation> videos;
  try {
    for (const auto& rec : doc) {
      VideoAnnotation v;
      v.id = rec.at("id").get<std::string>();
      v.total_frames = rec.at("frames").get<FrameIndex>();
      v.trimmed = rec.value("trimmed", false);
      for (const auto& inst : rec.at("instances")) {
        const auto& cls = inst.at("class");
        ClassId k = 0;
        if (cls.is_number_integer()) {
          k = cls.get<ClassId>();
        } else {
          const auto it = labels.find(cls.get<std::string>());
          if (it == labels.end()) {
            throw ConfigError("unknown class name '" + cls.get<std::string>() + "'");
          }
          k = it->second;
        }
        v.instances.emplace_back(
            TemporalInterval(inst.at("start").get<FrameIndex>(), inst.at("end").get<FrameIndex>()), k);
      }
      v.validate();
      videos.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return videos;
}

void save_annotations(const std::filesystem::path& path, std::span<const VideoAnnotation> videos,
                      const LabelMap& labels) {
  std::map<ClassId, std::string> names;
  for (const auto& [name, id] : labels) names.emplace(id, name);

  json doc = json::array();
  for (const auto& v : videos) {
    json insts = json::array();
    for (const auto& gt : v.instances) {
      json cls = gt.category;
      if (const auto it = names.find(gt.category); it != names.end()) cls = it->second;
      insts.push_back({{"start", gt.interval.start()}, {"end", gt.interval.end()}, {"class", cls}});
    }
    doc.push_back({{"id", v.id}, {"frames", v.total_frames}, {"trimmed", v.trimmed}, {"instances", insts}});
  }
  write_json(path, doc);
}

}  // namespace scnn
