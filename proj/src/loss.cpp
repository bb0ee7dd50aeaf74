#include "scnn/loss.hpp"

#include <cstdio>
#include <fstream>

namespace scnn {

std::vector<std::string> LossConfig::violations() const {
  std::vector<std::string> out;
  if (!(alpha > 0.0)) out.emplace_back("loss.alpha must be > 0");
  if (!(lambda >= 0.0)) out.emplace_back("loss.lambda must be >= 0");
  return out;
}

std::vector<LossCurvePoint> per_sample_loss_curve(double overlap, double alpha, double lambda, int resolution) {
  if (!(overlap > 0.0 && overlap <= 1.0)) throw std::invalid_argument("loss curve: v must lie in (0, 1]");
  if (resolution < 2) throw std::invalid_argument("loss curve: resolution must be >= 2");
  const double scale = std::pow(overlap, alpha);
  std::vector<LossCurvePoint> curve;
  curve.reserve(static_cast<std::size_t>(resolution));
  for (int i = 1; i <= resolution; ++i) {
    const double p = static_cast<double>(i) / resolution;
    const double ls = -std::log(p);
    const double lo = 0.5 * (p * p / scale - 1.0);
    curve.push_back({p, ls, lo, ls + lambda * lo});
  }
  return curve;
}

double curve_argmin(std::span<const LossCurvePoint> curve) {
  if (curve.empty()) throw std::invalid_argument("curve_argmin: empty curve");
  const auto it = std::min_element(curve.begin(), curve.end(),
                                   [](const auto& a, const auto& b) { return a.total < b.total; });
  return it->probability;
}

void write_loss_curves(const std::filesystem::path& path, std::span<const double> overlaps, double alpha,
                       double lambda, int resolution) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "v,P,L_softmax,L_overlap,L\n";
  char buf[160];
  for (double v : overlaps) {
    for (const auto& pt : per_sample_loss_curve(v, alpha, lambda, resolution)) {
      std::snprintf(buf, sizeof buf, "%.6g,%.8g,%.10g,%.10g,%.10g\n", v, pt.probability, pt.softmax, pt.overlap,
                    pt.total);
      out << buf;
    }
  }
}

}  // namespace scnn
