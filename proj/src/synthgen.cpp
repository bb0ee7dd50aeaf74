#include "scnn/synthgen.hpp"

#include "scnn/loss.hpp"
#include "scnn/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

namespace scnn {

using nlohmann::json;

std::vector<std::string> SynthConfig::violations() const {
  std::vector<std::string> out;
  if (num_classes < 1) out.emplace_back("synth.num_classes must be >= 1");
  if (trimmed_videos < 0 || train_untrimmed < 0 || test_untrimmed < 0) {
    out.emplace_back("synth video counts must be >= 0");
  }
  if (min_frames < 1 || max_frames < min_frames) out.emplace_back("synth frame range must satisfy 1 <= min <= max");
  if (channels < 1 || height < 2 || width < 2) out.emplace_back("synth resolution must be >= 1 x 2 x 2");
  if (min_instances < 0 || max_instances < min_instances) {
    out.emplace_back("synth instance range must satisfy 0 <= min <= max");
  }
  if (min_action < 1 || max_action < min_action) out.emplace_back("synth action range must satisfy 1 <= min <= max");
  if (static_cast<FrameIndex>(max_instances) * max_action > min_frames) {
    out.emplace_back("synth: max_instances * max_action exceeds min_frames, instances cannot be packed");
  }
  if (!(blob_sigma > 0.0)) out.emplace_back("synth.blob_sigma must be > 0");
  if (!(noise >= 0.0)) out.emplace_back("synth.noise must be >= 0");
  if (!(bound > 0.0)) out.emplace_back("synth.bound must be > 0");
  if (distractors < 0) out.emplace_back("synth.distractors must be >= 0");
  return out;
}

std::vector<Video> SynthDataset::training_videos() const {
  std::vector<Video> out = trimmed;
  out.insert(out.end(), train_untrimmed.begin(), train_untrimmed.end());
  return out;
}

std::vector<VideoAnnotation> SynthDataset::annotations(std::span<const Video> videos) const {
  std::vector<VideoAnnotation> out;
  for (const auto& v : videos) out.push_back(v.annotation);
  return out;
}

namespace {

void stamp_blob(VideoTensor& t, FrameIndex frame, double cy, double cx, const SynthConfig& cfg) {
  const double radius = 2.5 * cfg.blob_sigma;
  const double denom = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
  for (int c = 0; c < cfg.channels; ++c)
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        if (r2 > radius * radius) continue;
        t(c, frame, y, x) += static_cast<float>(cfg.amplitude * std::exp(-r2 / denom));
      }
}

// The blob crosses the frame once over the instance, entering and leaving at
// opposite edges along the class direction.
void plant_instance(VideoTensor& t, const GroundTruthInstance& gt, const SynthConfig& cfg) {
  const double angle = std::numbers::pi * (gt.category - 1) / cfg.num_classes;
  const double dy = std::sin(angle);
  const double dx = std::cos(angle);
  const double cy = (cfg.height - 1) / 2.0;
  const double cx = (cfg.width - 1) / 2.0;
  const double reach = 0.5 * std::max(cfg.height, cfg.width);
  const auto len = static_cast<double>(gt.interval.length());
  for (FrameIndex f = gt.interval.start(); f < gt.interval.end(); ++f) {
    const double u = (static_cast<double>(f - gt.interval.start()) + 0.5) / len;
    const double s = (2.0 * u - 1.0) * reach;
    stamp_blob(t, f, cy + s * dy, cx + s * dx, cfg);
  }
}

Video make_video(std::string id, FrameIndex frames, std::vector<GroundTruthInstance> instances, bool trimmed,
                 const SynthConfig& cfg, Rng& rng) {
  Video v;
  v.annotation = {std::move(id), frames, std::move(instances), trimmed};
  v.annotation.validate();
  v.frames = VideoTensor(cfg.channels, frames, cfg.height, cfg.width);
  v.frames.setZero();
  if (cfg.noise > 0.0) {
    for (Eigen::Index i = 0; i < v.frames.size(); ++i) {
      v.frames.data()[i] = static_cast<float>(cfg.noise * rng.normal());
    }
  }
  for (const auto& gt : v.annotation.instances) plant_instance(v.frames, gt, cfg);
  if (!trimmed) {
    for (int d = 0; d < cfg.distractors; ++d) {
      const FrameIndex len = rng.uniform_int(cfg.min_action, cfg.max_action);
      if (len > frames) continue;
      const FrameIndex start = rng.uniform_int(0, frames - len);
      const TemporalInterval span(start, start + len);
      const double y = rng.uniform(0.0, cfg.height - 1.0);
      const double x = rng.uniform(0.0, cfg.width - 1.0);
      const bool clash = std::any_of(v.annotation.instances.begin(), v.annotation.instances.end(),
                                     [&](const auto& gt) { return iou(gt.interval, span) > 0.0; });
      if (clash) continue;
      for (FrameIndex f = span.start(); f < span.end(); ++f) stamp_blob(v.frames, f, y, x, cfg);
    }
  }
  const auto b = static_cast<float>(cfg.bound);
  v.frames = v.frames.cwiseMax(-b).cwiseMin(b);
  return v;
}

void check_reachable(const VideoAnnotation& a, const WindowConfig& windows) {
  if (a.total_frames < windows.min_length()) {
    throw std::invalid_argument("video '" + a.id + "' is shorter than every window");
  }
  const auto ws = generate_windows(a.total_frames, windows);
  for (const auto& gt : a.instances) {
    double best = 0.0;
    for (const auto& w : ws) best = std::max(best, iou(w, gt.interval));
    if (!(best > 0.5)) {
      throw std::invalid_argument("video '" + a.id + "': instance not reachable by any window with IoU > 0.5");
    }
  }
}

std::vector<GroundTruthInstance> pack_instances(FrameIndex frames, const SynthConfig& cfg, Rng& rng) {
  const auto m = static_cast<std::size_t>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
  std::vector<FrameIndex> lengths(m);
  FrameIndex total = 0;
  for (auto& l : lengths) {
    l = rng.uniform_int(cfg.min_action, cfg.max_action);
    total += l;
  }
  if (total > frames) throw std::invalid_argument("instances do not fit without overlap");
  std::vector<FrameIndex> cuts(m);
  for (auto& c : cuts) c = rng.uniform_int(0, frames - total);
  std::sort(cuts.begin(), cuts.end());
  std::vector<GroundTruthInstance> out;
  FrameIndex used = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const FrameIndex start = cuts[i] + used;
    const auto k = static_cast<ClassId>(rng.uniform_int(1, cfg.num_classes));
    out.emplace_back(TemporalInterval(start, start + lengths[i]), k);
    used += lengths[i];
  }
  return out;
}

std::string video_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

}  // namespace

SynthDataset generate(const SynthConfig& cfg, const WindowConfig& windows) {
  if (const auto v = cfg.violations(); !v.empty()) throw std::invalid_argument(v.front());
  windows.validate();
  if (cfg.min_action < windows.sample_count) {
    throw std::invalid_argument("synth.min_action shorter than the window sample count");
  }
  Rng rng(cfg.seed);
  SynthDataset ds;
  ds.num_classes = cfg.num_classes;
  for (int k = 1; k <= cfg.num_classes; ++k) ds.labels.emplace(video_name("action", k), k);

  for (int i = 0; i < cfg.trimmed_videos; ++i) {
    const FrameIndex len = rng.uniform_int(cfg.min_action, cfg.max_action);
    const ClassId k = i % cfg.num_classes + 1;
    ds.trimmed.push_back(make_video(video_name("trimmed", i), len, {{TemporalInterval(0, len), k}}, true, cfg, rng));
    ++ds.planted_instances;
  }
  auto untrimmed = [&](const char* prefix, int count, std::vector<Video>& out) {
    for (int i = 0; i < count; ++i) {
      const FrameIndex frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);
      auto inst = pack_instances(frames, cfg, rng);
      ds.planted_instances += inst.size();
      out.push_back(make_video(video_name(prefix, i), frames, std::move(inst), false, cfg, rng));
      check_reachable(out.back().annotation, windows);
    }
  };
  untrimmed("train", cfg.train_untrimmed, ds.train_untrimmed);
  untrimmed("test", cfg.test_untrimmed, ds.test_untrimmed);
  ds.probe = bayes_separability_check(ds, windows.sample_count, cfg.seed);
  return ds;
}

ProbeReport bayes_separability_check(const SynthDataset& ds, int sample_count, std::uint64_t seed) {
  const int classes = ds.num_classes + 1;
  std::vector<Vector> features;
  std::vector<int> labels;
  auto add = [&](const Video& v, const TemporalInterval& iv, int label) {
    const auto seg = make_segment(v.annotation.id, iv, sample_count);
    const InputTensor t = segment_tensor(v.frames, seg);
    const auto& d = t.dimensions();
    Vector f = Vector::Zero(d[0] * d[2] * d[3] + 1);
    for (Eigen::Index c = 0; c < d[0]; ++c)
      for (Eigen::Index s = 0; s < d[1]; ++s)
        for (Eigen::Index y = 0; y < d[2]; ++y)
          for (Eigen::Index x = 0; x < d[3]; ++x) f((c * d[2] + y) * d[3] + x) += t(c, s, y, x) / d[1];
    f(f.size() - 1) = 1.0;
    features.push_back(std::move(f));
    labels.push_back(label);
  };

  Rng rng(seed ^ 0x5bd1e995ULL);
  auto visit = [&](const std::vector<Video>& videos) {
    for (const auto& v : videos) {
      for (const auto& gt : v.annotation.instances) {
        add(v, gt.interval, gt.category);
        if (v.annotation.trimmed) continue;
        // A same-length window that touches no instance, when one exists.
        const FrameIndex len = gt.interval.length();
        for (int attempt = 0; attempt < 20 && len < v.annotation.total_frames; ++attempt) {
          const FrameIndex s = rng.uniform_int(0, v.annotation.total_frames - len);
          const TemporalInterval w(s, s + len);
          if (best_overlap(w, v.annotation.instances).iou == 0.0) {
            add(v, w, 0);
            break;
          }
        }
      }
    }
  };
  visit(ds.trimmed);
  visit(ds.train_untrimmed);
  visit(ds.test_untrimmed);

  ProbeReport report;
  report.per_class.assign(static_cast<std::size_t>(classes), 0.0);
  if (features.size() < 2) return report;
  const Eigen::Index dim = features.front().size();
  Matrix w = Matrix::Zero(classes, dim);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < features.size(); ++i) (i % 2 == 0 ? train_idx : test_idx).push_back(i);

  for (int it = 0; it < 500; ++it) {
    Matrix grad = Matrix::Zero(classes, dim);
    for (std::size_t i : train_idx) {
      Vector p = softmax(w * features[i]);
      p(labels[i]) -= 1.0;
      grad.noalias() += p * features[i].transpose();
    }
    w -= (1.0 / static_cast<double>(train_idx.size())) * grad;
  }

  std::vector<int> hits(static_cast<std::size_t>(classes), 0), totals(static_cast<std::size_t>(classes), 0);
  int correct = 0;
  for (std::size_t i : test_idx) {
    Eigen::Index pred = 0;
    (w * features[i]).maxCoeff(&pred);
    const auto k = static_cast<std::size_t>(labels[i]);
    ++totals[k];
    if (pred == labels[i]) {
      ++hits[k];
      ++correct;
    }
  }
  report.accuracy = test_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_idx.size());
  for (std::size_t k = 0; k < hits.size(); ++k) {
    report.per_class[k] = totals[k] ? static_cast<double>(hits[k]) / totals[k] : 0.0;
  }
  return report;
}

namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'N', 'T'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kFloat32 = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw ConfigError("truncated tensor file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const VideoTensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic.data(), 4);
  put_u32(out, kTensorVersion);
  put_u32(out, kFloat32);
  put_u32(out, 4);
  for (auto d : tensor.dimensions()) put_u32(out, static_cast<std::uint32_t>(d));
  for (Eigen::Index i = 0; i < tensor.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(tensor.data()[i]));
}

VideoTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open tensor " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw ConfigError(path.string() + ": bad tensor magic");
  if (get_u32(in) != kTensorVersion) throw ConfigError(path.string() + ": unsupported tensor version");
  if (get_u32(in) != kFloat32) throw ConfigError(path.string() + ": unsupported dtype");
  if (get_u32(in) != 4) throw ConfigError(path.string() + ": expected a rank-4 tensor");
  std::array<Eigen::Index, 4> dims{};
  for (auto& d : dims) d = get_u32(in);
  VideoTensor t(dims[0], dims[1], dims[2], dims[3]);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = std::bit_cast<float>(get_u32(in));
  return t;
}

namespace {

json config_to_json(const SynthConfig& c) {
  return {{"num_classes", c.num_classes},     {"trimmed_videos", c.trimmed_videos},
          {"train_untrimmed", c.train_untrimmed}, {"test_untrimmed", c.test_untrimmed},
          {"min_frames", c.min_frames},       {"max_frames", c.max_frames},
          {"channels", c.channels},           {"height", c.height},
          {"width", c.width},                 {"min_instances", c.min_instances},
          {"max_instances", c.max_instances}, {"min_action", c.min_action},
          {"max_action", c.max_action},       {"blob_sigma", c.blob_sigma},
          {"amplitude", c.amplitude},         {"noise", c.noise},
          {"bound", c.bound},                 {"distractors", c.distractors},
          {"seed", c.seed}};
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const SynthDataset& ds, const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "videos");
  json splits = json::object();
  auto write_split = [&](const std::string& name, std::span<const Video> videos) {
    json ids = json::array();
    for (const auto& v : videos) {
      write_tensor(dir / "videos" / (v.annotation.id + ".bin"), v.frames);
      ids.push_back(v.annotation.id);
    }
    const auto ann = ds.annotations(videos);
    save_annotations(dir / (name + "_annotations.json"), ann, ds.labels);
    splits[name] = {{"annotations", name + "_annotations.json"}, {"videos", ids}};
  };
  write_split("trimmed", ds.trimmed);
  write_split("train", ds.train_untrimmed);
  write_split("test", ds.test_untrimmed);
  save_label_map(dir / "labels.json", ds.labels);

  const json manifest = {{"format", "scnn-dataset"},
                         {"version", 1},
                         {"seed", cfg.seed},
                         {"num_classes", ds.num_classes},
                         {"label_map", "labels.json"},
                         {"tensor_dir", "videos"},
                         {"splits", splits},
                         {"planted_instances", ds.planted_instances},
                         {"probe_accuracy", ds.probe.accuracy},
                         {"probe_per_class", ds.probe.per_class},
                         {"config", config_to_json(cfg)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

SynthDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("no manifest.json in " + dir.string());
  try {
    const json m = json::parse(in);
    SynthDataset ds;
    ds.num_classes = m.at("num_classes").get<int>();
    ds.labels = load_label_map(dir / m.at("label_map").get<std::string>());
    ds.planted_instances = m.at("planted_instances").get<std::size_t>();
    ds.probe.accuracy = m.at("probe_accuracy").get<double>();
    ds.probe.per_class = m.at("probe_per_class").get<std::vector<double>>();
    const auto tensor_dir = dir / m.at("tensor_dir").get<std::string>();
    auto read_split = [&](const std::string& name, std::vector<Video>& out) {
      const auto& split = m.at("splits").at(name);
      for (auto& ann : load_annotations(dir / split.at("annotations").get<std::string>(), ds.labels)) {
        Video v{std::move(ann), {}};
        v.frames = read_tensor(tensor_dir / (v.annotation.id + ".bin"));
        if (v.frames.dimension(1) != v.annotation.total_frames) {
          throw ConfigError("video '" + v.annotation.id + "': tensor frame count disagrees with annotation");
        }
        out.push_back(std::move(v));
      }
    };
    read_split("trimmed", ds.trimmed);
    read_split("train", ds.train_untrimmed);
    read_split("test", ds.test_untrimmed);
    return ds;
  } catch (const json::exception& e) {
    throw ConfigError(dir.string() + "/manifest.json: " + e.what());
  }
}

}  // namespace scnn
