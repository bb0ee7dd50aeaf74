#include "scnn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace scnn {

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthRef> gts, double theta) {
  MatchResult r;
  r.order.resize(dets.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });

  std::vector<bool> used(gts.size(), false);
  for (std::size_t di : r.order) {
    const auto& d = dets[di];
    std::optional<std::size_t> best;
    double best_iou = theta;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].video_id != d.video_id) continue;
      const double o = iou(d.interval, gts[g].interval);
      if (o > best_iou) {
        best = g;
        best_iou = o;
      }
    }
    if (best) used[*best] = true;
    r.verdicts.push_back(best ? Verdict::true_positive : Verdict::false_positive);
    r.matched.push_back(best);
  }
  return r;
}

std::optional<double> average_precision(std::span<const Verdict> verdicts, std::size_t gt_count, ApMode mode) {
  if (gt_count == 0) return std::nullopt;
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (verdicts[i] == Verdict::true_positive) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
  }
  if (mode == ApMode::uninterpolated) return sum / static_cast<double>(gt_count);

  double ap = 0.0;
  for (int step = 0; step <= 10; ++step) {
    const double r = step / 10.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    }
    ap += best;
  }
  return ap / 11.0;
}

double EvalReport::map_at(double theta) const {
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (std::abs(thetas[i] - theta) < 1e-12) return mean_ap[i];
  }
  throw std::invalid_argument("no evaluation at theta " + std::to_string(theta));
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const VideoAnnotation> annotations, int num_classes,
                    std::span<const double> thetas, ApMode mode) {
  std::map<ClassId, std::vector<GroundTruthRef>> gts;
  std::map<ClassId, std::vector<Detection>> by_class;
  for (const auto& v : annotations) {
    for (const auto& gt : v.instances) {
      if (gt.category > num_classes) throw ConfigError("annotation class " + std::to_string(gt.category) + " > K");
      gts[gt.category].push_back({v.id, gt.interval});
    }
  }
  for (const auto& d : dets) {
    if (d.category < 1 || d.category > num_classes) {
      throw ConfigError("detection with unknown class id " + std::to_string(d.category));
    }
    by_class[d.category].push_back(d);
  }

  EvalReport report;
  report.thetas.assign(thetas.begin(), thetas.end());
  for (ClassId k = 1; k <= num_classes; ++k) {
    if (!gts[k].empty()) report.classes.push_back(k);
  }
  report.ap = Matrix::Zero(static_cast<Eigen::Index>(thetas.size()), static_cast<Eigen::Index>(report.classes.size()));
  report.mean_ap.assign(thetas.size(), 0.0);
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
      const ClassId k = report.classes[c];
      const auto m = match_detections(by_class[k], gts[k], thetas[t]);
      report.ap(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) =
          *average_precision(m.verdicts, gts[k].size(), mode);
    }
    if (!report.classes.empty()) report.mean_ap[t] = report.ap.row(static_cast<Eigen::Index>(t)).mean();
  }
  return report;
}

std::vector<Detection> top_k_filter(std::span<const Detection> dets, std::size_t kappa) {
  std::vector<Detection> out(dets.begin(), dets.end());
  sort_by_confidence(out);
  if (out.size() > kappa) out.erase(out.begin() + static_cast<std::ptrdiff_t>(kappa), out.end());
  return out;
}

namespace {

std::string class_name(ClassId k, const LabelMap& labels) {
  for (const auto& [name, id] : labels) {
    if (id == k) return name;
  }
  return std::to_string(k);
}

}  // namespace

void write_results(const std::filesystem::path& path, const EvalReport& report, const LabelMap& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  out << "class";
  for (double t : report.thetas) {
    std::snprintf(buf, sizeof buf, ",theta_%.2f", t);
    out << buf;
  }
  out << '\n';
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    out << class_name(report.classes[c], labels);
    for (std::size_t t = 0; t < report.thetas.size(); ++t) {
      std::snprintf(buf, sizeof buf, ",%.6f",
                    report.ap(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)));
      out << buf;
    }
    out << '\n';
  }
  out << "mAP";
  for (double m : report.mean_ap) {
    std::snprintf(buf, sizeof buf, ",%.6f", m);
    out << buf;
  }
  out << '\n';
}

void write_class_histogram(const std::filesystem::path& path, const EvalReport& report, double theta,
                           const LabelMap& labels) {
  std::size_t row = report.thetas.size();
  for (std::size_t i = 0; i < report.thetas.size(); ++i) {
    if (std::abs(report.thetas[i] - theta) < 1e-12) row = i;
  }
  if (row == report.thetas.size()) throw std::invalid_argument("histogram theta was not evaluated");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "class,name,ap\n";
  char buf[64];
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.6f", report.ap(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)));
    out << report.classes[c] << ',' << class_name(report.classes[c], labels) << ',' << buf << '\n';
  }
}

}  // namespace scnn
