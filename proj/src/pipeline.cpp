#include "scnn/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

namespace scnn {

using nlohmann::json;

FrequencyPrior::FrequencyPrior(std::vector<FrameIndex> lengths, Matrix freq)
    : lengths_(std::move(lengths)), freq_(std::move(freq)) {
  if (static_cast<Eigen::Index>(lengths_.size()) != freq_.cols()) {
    throw std::invalid_argument("prior: one column per window length required");
  }
}

std::size_t FrequencyPrior::bin(FrameIndex length) const {
  if (lengths_.empty()) throw std::logic_error("prior: no window lengths");
  std::size_t best = 0;
  for (std::size_t i = 1; i < lengths_.size(); ++i) {
    const auto d = std::abs(lengths_[i] - length);
    const auto bd = std::abs(lengths_[best] - length);
    if (d < bd || (d == bd && lengths_[i] < lengths_[best])) best = i;
  }
  return best;
}

double FrequencyPrior::operator()(ClassId k, FrameIndex window_length) const {
  if (k < 1 || k > num_classes()) throw std::out_of_range("prior: class " + std::to_string(k) + " out of range");
  return freq_(k - 1, static_cast<Eigen::Index>(bin(window_length)));
}

FrequencyPrior compute_frequency_prior(std::span<const GroundTruthInstance> gts, std::span<const FrameIndex> lengths,
                                       int num_classes) {
  if (gts.empty()) throw std::invalid_argument("prior: no ground truth");
  std::vector<FrameIndex> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  FrequencyPrior binning(sorted, Matrix::Zero(num_classes, static_cast<Eigen::Index>(sorted.size())));

  Matrix counts = Matrix::Zero(num_classes, static_cast<Eigen::Index>(sorted.size()));
  for (const auto& gt : gts) {
    if (gt.category > num_classes) throw std::invalid_argument("prior: class out of range");
    counts(gt.category - 1, static_cast<Eigen::Index>(binning.bin(gt.interval.length()))) += 1.0;
  }
  Matrix freq = counts;
  for (Eigen::Index k = 0; k < num_classes; ++k) {
    const double total = counts.row(k).sum();
    if (total == 0.0) throw std::invalid_argument("prior: class " + std::to_string(k + 1) + " has no instance");
    freq.row(k) /= total;
    for (Eigen::Index j = 0; j < freq.cols(); ++j) {
      if (counts(k, j) == 0.0) freq(k, j) = 1.0 / (10.0 * total);
    }
    freq.row(k) /= freq.row(k).sum();
  }
  return {sorted, freq};
}

void save_prior(const std::filesystem::path& path, const FrequencyPrior& prior) {
  json rows = json::array();
  for (Eigen::Index k = 0; k < prior.frequencies().rows(); ++k) {
    const Vector r = prior.frequencies().row(k).transpose();
    rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json{{"lengths", prior.lengths()}, {"frequencies", rows}}.dump(2) << '\n';
}

FrequencyPrior load_prior(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prior " + path.string());
  try {
    const json doc = json::parse(in);
    auto lengths = doc.at("lengths").get<std::vector<FrameIndex>>();
    const auto rows = doc.at("frequencies").get<std::vector<std::vector<double>>>();
    Matrix freq(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(lengths.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].size() != lengths.size()) throw ConfigError(path.string() + ": ragged frequency table");
      for (std::size_t j = 0; j < lengths.size(); ++j) {
        freq(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = rows[k][j];
      }
    }
    return {std::move(lengths), std::move(freq)};
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<Detection> nms(std::span<const Detection> dets, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("nms: threshold must lie in (0, 1)");
  std::map<ClassId, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.category].push_back(d);

  std::vector<Detection> kept;
  for (auto& [k, group] : by_class) {
    std::stable_sort(group.begin(), group.end(), [](const Detection& a, const Detection& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      if (a.interval.start() != b.interval.start()) return a.interval.start() < b.interval.start();
      return a.interval.length() < b.interval.length();
    });
    std::vector<bool> removed(group.size(), false);
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (removed[i]) continue;
      kept.push_back(group[i]);
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        if (!removed[j] && group[j].video_id == group[i].video_id &&
            iou(group[i].interval, group[j].interval) >= threshold) {
          removed[j] = true;
        }
      }
    }
  }
  sort_by_confidence(kept);
  return kept;
}

std::vector<std::string> PipelineConfig::violations() const {
  std::vector<std::string> out;
  if (!(proposal_threshold > 0.0 && proposal_threshold < 1.0)) {
    out.emplace_back("pipeline.proposal_threshold must lie in (0, 1)");
  }
  if (!(eval_theta > 0.0 && eval_theta < 1.0)) out.emplace_back("pipeline.eval_theta must lie in (0, 1)");
  if (!(nms_threshold() > 0.0)) out.emplace_back("pipeline: eval_theta - nms_offset must be > 0");
  auto prefixed = [&](const char* name, const std::vector<std::string>& v) {
    for (const auto& s : v) out.push_back(std::string(name) + ": " + s);
  };
  prefixed("proposal", proposal_sgd.violations());
  prefixed("classification", classification_sgd.violations());
  prefixed("localization", localization_sgd.violations());
  for (auto& s : loss.violations()) out.push_back(std::move(s));
  for (auto& s : windows.violations()) out.push_back(std::move(s));
  for (auto& s : labeling.violations()) out.push_back(std::move(s));
  if (widths.conv1 < 1 || widths.conv2 < 1 || widths.hidden < 1) out.emplace_back("network widths must be >= 1");
  return out;
}

Architecture stage_architecture(const PipelineConfig& cfg, int channels, int height, int width, int num_outputs) {
  return tiny_architecture({channels, cfg.windows.sample_count, height, width}, num_outputs, cfg.widths.conv1,
                           cfg.widths.conv2, cfg.widths.hidden);
}

namespace {

struct VideoIndex {
  std::map<std::string, const Video*> by_id;

  explicit VideoIndex(std::span<const Video> videos) {
    for (const auto& v : videos) by_id.emplace(v.annotation.id, &v);
  }

  std::vector<TrainingExample> examples(const TrainingSet& set) const {
    std::vector<TrainingExample> out;
    out.reserve(set.samples.size());
    for (const auto& s : set.samples) {
      const auto it = by_id.find(s.segment.video_id);
      if (it == by_id.end()) throw std::invalid_argument("unknown video '" + s.segment.video_id + "'");
      out.push_back({segment_tensor(it->second->frames, s.segment), s.label, s.overlap});
    }
    return out;
  }
};

struct PreparedSets {
  TrainingSet proposal;
  TrainingSet classification;
  TrainingSet localization;
  int channels = 0;
  int height = 0;
  int width = 0;
};

PreparedSets prepare(std::span<const Video> videos, int num_classes, const PipelineConfig& cfg) {
  if (const auto v = cfg.violations(); !v.empty()) throw ConfigError(v.front());
  if (videos.empty()) throw std::invalid_argument("no training videos");
  std::vector<VideoAnnotation> ann;
  std::vector<bool> seen(static_cast<std::size_t>(num_classes) + 1, false);
  for (const auto& v : videos) {
    ann.push_back(v.annotation);
    for (const auto& gt : v.annotation.instances) {
      if (gt.category > num_classes) throw std::invalid_argument("training class exceeds K");
      seen[static_cast<std::size_t>(gt.category)] = true;
    }
  }
  for (int k = 1; k <= num_classes; ++k) {
    if (!seen[static_cast<std::size_t>(k)]) {
      throw std::invalid_argument("training data has no instance of class " + std::to_string(k));
    }
  }
  const auto labeled = label_untrimmed(ann, cfg.windows, cfg.labeling);
  const auto trimmed = trimmed_samples(ann, cfg.windows.sample_count);
  PreparedSets p;
  p.proposal = build_proposal_set(labeled, trimmed, cfg.seed);
  p.classification = build_classification_set(labeled, trimmed, num_classes, cfg.seed + 1);
  p.localization = build_localization_set(p.classification);
  const auto& d = videos.front().frames.dimensions();
  p.channels = static_cast<int>(d[0]);
  p.height = static_cast<int>(d[2]);
  p.width = static_cast<int>(d[3]);
  return p;
}

LossConfig localization_loss(const PipelineConfig& cfg) {
  LossConfig loss = cfg.loss;
  loss.mode = cfg.use_localization_loss ? LossMode::combined : LossMode::softmax_only;
  return loss;
}

}  // namespace

ModelParams train_localization(std::span<const Video> training_videos, int num_classes, const PipelineConfig& cfg,
                               const ModelParams& classification, TrainingLog* log) {
  const auto sets = prepare(training_videos, num_classes, cfg);
  const VideoIndex index(training_videos);
  const auto arch = stage_architecture(cfg, sets.channels, sets.height, sets.width, num_classes + 1);
  const auto data = index.examples(sets.localization);
  std::optional<ModelParams> init;
  if (cfg.use_classification_init) init = classification;
  auto result = train(arch, data, cfg.localization_sgd, localization_loss(cfg), init);
  if (log) *log = std::move(result.log);
  return std::move(result.params);
}

TrainedPipeline train_pipeline(std::span<const Video> training_videos, int num_classes, const PipelineConfig& cfg) {
  const auto sets = prepare(training_videos, num_classes, cfg);
  const VideoIndex index(training_videos);
  const LossConfig softmax_loss{.lambda = 0.0, .alpha = cfg.loss.alpha, .mode = LossMode::softmax_only};

  TrainedPipeline out;
  {
    const auto arch = stage_architecture(cfg, sets.channels, sets.height, sets.width, 2);
    const auto data = index.examples(sets.proposal);
    auto r = train(arch, data, cfg.proposal_sgd, softmax_loss);
    out.models.proposal = std::move(r.params);
    out.logs.proposal = std::move(r.log);
    out.logs.proposal_samples = data.size();
  }
  const auto cls_arch = stage_architecture(cfg, sets.channels, sets.height, sets.width, num_classes + 1);
  const auto cls_data = index.examples(sets.classification);
  {
    auto r = train(cls_arch, cls_data, cfg.classification_sgd, softmax_loss);
    out.models.classification = std::move(r.params);
    out.logs.classification = std::move(r.log);
    out.logs.classification_samples = cls_data.size();
  }
  {
    const auto loc_data = index.examples(sets.localization);
    std::optional<ModelParams> init;
    if (cfg.use_classification_init) init = out.models.classification;
    auto r = train(cls_arch, loc_data, cfg.localization_sgd, localization_loss(cfg), init);
    out.models.localization = std::move(r.params);
    out.logs.localization = std::move(r.log);
  }

  std::vector<GroundTruthInstance> gts;
  for (const auto& v : training_videos) gts.insert(gts.end(), v.annotation.instances.begin(), v.annotation.instances.end());
  out.models.prior = compute_frequency_prior(gts, cfg.windows.lengths, num_classes);
  return out;
}

Prediction predict(const Video& video, const StageModels& models, const PipelineConfig& cfg) {
  Prediction out;
  const auto& ann = video.annotation;
  if (ann.total_frames < cfg.windows.min_length()) return out;
  const auto segments = generate_segments(ann.id, ann.total_frames, cfg.windows);
  out.stats.windows = segments.size();

  std::vector<Detection> raw;
  for (const auto& seg : segments) {
    const InputTensor input = segment_tensor(video.frames, seg);
    if (cfg.use_proposal) {
      const double p_action = forward(models.proposal, input).probs(1);
      if (p_action < cfg.proposal_threshold) continue;
      out.stats.passed.push_back(seg.interval);
    }
    ++out.stats.scored;
    const ScoreVector sv = forward(models.localization, input);
    Eigen::Index k = 0;
    sv.probs.maxCoeff(&k);
    if (k == 0) continue;
    const auto cls = static_cast<ClassId>(k);
    raw.push_back({ann.id, seg.interval, cls, sv.probs(k) * models.prior(cls, seg.interval.length())});
  }
  out.detections = nms(raw, cfg.nms_threshold());
  return out;
}

Prediction predict_all(std::span<const Video> videos, const StageModels& models, const PipelineConfig& cfg, int jobs) {
  std::vector<Prediction> per_video(videos.size());
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || videos.size() < 2) {
    for (std::size_t i = 0; i < videos.size(); ++i) per_video[i] = predict(videos[i], models, cfg);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < videos.size(); i += workers) per_video[i] = predict(videos[i], models, cfg);
      });
    }
    for (auto& t : pool) t.join();
  }
  Prediction all;
  for (auto& p : per_video) {
    all.detections.insert(all.detections.end(), p.detections.begin(), p.detections.end());
    all.stats.windows += p.stats.windows;
    all.stats.scored += p.stats.scored;
    all.stats.passed.insert(all.stats.passed.end(), p.stats.passed.begin(), p.stats.passed.end());
  }
  sort_by_confidence(all.detections);
  return all;
}

void save_models(const std::filesystem::path& dir, const StageModels& models, const PipelineConfig& cfg) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "proposal.ckpt.json", models.proposal, cfg.proposal_sgd, cfg.proposal_sgd.iterations);
  save_checkpoint(dir / "classification.ckpt.json", models.classification, cfg.classification_sgd,
                  cfg.classification_sgd.iterations);
  save_checkpoint(dir / "localization.ckpt.json", models.localization, cfg.localization_sgd,
                  cfg.localization_sgd.iterations);
  save_prior(dir / "prior.json", models.prior);
}

StageModels load_models(const std::filesystem::path& dir) {
  StageModels m;
  m.proposal = load_checkpoint(dir / "proposal.ckpt.json");
  m.classification = load_checkpoint(dir / "classification.ckpt.json");
  m.localization = load_checkpoint(dir / "localization.ckpt.json", m.classification.arch);
  m.prior = load_prior(dir / "prior.json");
  if (m.proposal.arch.num_outputs() != 2) throw ConfigError("proposal checkpoint must have a 2-way head");
  if (m.prior.num_classes() + 1 != m.localization.arch.num_outputs()) {
    throw ConfigError("prior class count does not match the localization head");
  }
  return m;
}

std::vector<AblationRow> run_ablation(const SynthDataset& ds, const PipelineConfig& cfg, std::span<const double> alphas,
                                      int jobs) {
  const auto train_videos = ds.training_videos();
  const auto test_ann = ds.annotations(ds.test_untrimmed);
  const std::vector<double> theta{cfg.eval_theta};

  PipelineConfig base = cfg;
  base.use_proposal = base.use_classification_init = base.use_localization_loss = true;
  const TrainedPipeline full = train_pipeline(train_videos, ds.num_classes, base);

  auto score = [&](const std::string& name, double alpha, const StageModels& models, const PipelineConfig& pc) {
    const auto pred = predict_all(ds.test_untrimmed, models, pc, jobs);
    const auto report = evaluate(pred.detections, test_ann, ds.num_classes, theta);
    return AblationRow{name, alpha, report.mean_ap.front(), pred.stats.scored, pred.detections.size()};
  };
  auto with_loc = [&](const PipelineConfig& pc) {
    StageModels m = full.models;
    m.localization = train_localization(train_videos, ds.num_classes, pc, full.models.classification);
    return m;
  };

  std::vector<AblationRow> rows;
  rows.push_back(score("S-CNN", base.loss.alpha, full.models, base));
  {
    PipelineConfig pc = base;
    pc.use_proposal = false;
    rows.push_back(score("S-CNN (w/o proposal)", base.loss.alpha, full.models, pc));
  }
  {
    PipelineConfig pc = base;
    pc.use_classification_init = false;
    rows.push_back(score("S-CNN (w/o classification)", base.loss.alpha, with_loc(pc), pc));
  }
  {
    PipelineConfig pc = base;
    pc.use_localization_loss = false;
    rows.push_back(score("S-CNN (w/o localization)", base.loss.alpha, with_loc(pc), pc));
  }
  for (double a : alphas) {
    if (a == base.loss.alpha) {
      AblationRow r = rows.front();
      r.variant = "alpha";
      rows.push_back(r);
      continue;
    }
    PipelineConfig pc = base;
    pc.loss.alpha = a;
    rows.push_back(score("alpha", a, with_loc(pc), pc));
  }
  return rows;
}

void write_ablation(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,alpha,map,scored_segments,detections\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.4g,%.6f", r.alpha, r.map);
    out << '"' << r.variant << "\"," << buf << ',' << r.scored << ',' << r.detections << '\n';
  }
}

}  // namespace scnn
