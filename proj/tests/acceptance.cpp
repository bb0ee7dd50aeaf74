// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "oracles.hpp"

#include "scnn/eval.hpp"
#include "scnn/gradcheck.hpp"
#include "scnn/labeler.hpp"
#include "scnn/loss.hpp"
#include "scnn/pipeline.hpp"
#include "scnn/run_config.hpp"
#include "scnn/synthgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace scnn;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<missing " + p.string() + ">";
  return {std::istreambuf_iterator<char>(in), {}};
}

void criterion_loss_gradients() {
  const Stopwatch sw;
  const auto r = check_loss_gradients(1000, 2024);
  const double t = sw.seconds();
  report(1, r.passed() && r.trials >= 1000 && r.max_relative_error < 1e-5 && t < 10.0,
         fmt("%d batches, %zu coordinates, max rel err %.2e (< 1e-5), %.2f s (< 10 s)", r.trials, r.coordinates,
             r.max_relative_error, t));
}

void criterion_loss_minimum(const fs::path& out_dir) {
  const int resolution = 10000;
  double worst = 0.0;
  std::vector<double> vs;
  for (int i = 1; i <= 10; ++i) vs.push_back(i / 10.0);
  for (double alpha : {0.25, 0.5, 1.0}) {
    for (double v : vs) {
      const auto curve = per_sample_loss_curve(v, alpha, 1.0, resolution);
      worst = std::max(worst, std::abs(curve_argmin(curve) - std::sqrt(std::pow(v, alpha))));
    }
    write_loss_curves(out_dir / fmt("loss_curves_alpha_%.2f.csv", alpha), vs, alpha, 1.0, resolution);
  }
  report(2, worst <= 1.0 / resolution,
         fmt("max |argmin P - sqrt(v^alpha)| = %.2e over 30 (v, alpha) pairs (<= 1e-4); curves in %s", worst,
             out_dir.string().c_str()));
}

void criterion_network_gradients() {
  const Stopwatch sw;
  const auto arch = tiny_architecture({1, 8, 8, 8}, 3);
  const auto r = check_network_gradients(arch, 3, 77);
  const double t = sw.seconds();
  report(3, r.passed() && arch.parameter_count() <= 5000 && t < 60.0,
         fmt("%zu parameters (conv3d + pool3d), %zu coordinates, max rel err %.2e (< 1e-4), %.2f s (< 60 s)",
             arch.parameter_count(), r.coordinates, r.max_relative_error, t));
}

void criterion_oracles() {
  const Stopwatch sw;
  oracle::Gen gen(4242);
  const int trials = 500;
  int label_bad = 0, nms_bad = 0, eval_bad = 0;

  for (int trial = 0; trial < trials; ++trial) {
    std::vector<TemporalInterval> cands;
    for (int i = gen.integer(1, 20); i > 0; --i) cands.push_back(gen.interval(60, 30));
    std::vector<GroundTruthInstance> gts;
    for (int i = gen.integer(0, 5); i > 0; --i) gts.emplace_back(gen.interval(60, 30), gen.integer(1, 3));
    std::vector<CandidateSegment> segs;
    for (const auto& c : cands) segs.push_back(make_segment("v", c, 1));
    const auto got = assign_labels(segs, gts, {});
    const auto want = oracle::assign_labels(cands, gts, {});
    for (std::size_t c = 0; c < got.size(); ++c)
      if (got[c].role != want[c].role || got[c].label != want[c].k || got[c].overlap != want[c].v) {
        ++label_bad;
        break;
      }
  }

  for (int trial = 0; trial < trials; ++trial) {
    const double thr = gen.integer(1, 9) / 10.0;
    const auto dets = gen.detections(gen.integer(0, 15), 2, 2, 80, 40);
    const auto got = oracle::canonical(nms(dets, thr));
    const auto want = oracle::canonical(oracle::nms(dets, thr));
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].video_id == want[i].video_id && got[i].interval == want[i].interval &&
             got[i].category == want[i].category && got[i].confidence == want[i].confidence;
    nms_bad += same ? 0 : 1;
  }

  const std::vector<double> thetas{0.1, 0.2, 0.3, 0.4, 0.5};
  for (int trial = 0; trial < trials; ++trial) {
    const int classes = gen.integer(1, 3);
    std::vector<VideoAnnotation> videos;
    for (int i = 0, n = gen.integer(1, 4); i < n; ++i) {
      VideoAnnotation v{"v" + std::to_string(i), 80, {}, false};
      for (int j = gen.integer(0, 3); j > 0; --j) v.instances.emplace_back(gen.interval(80, 30), gen.integer(1, classes));
      videos.push_back(std::move(v));
    }
    const auto dets = gen.detections(gen.integer(0, 10), static_cast<int>(videos.size()), classes, 80, 30);
    const auto rep = evaluate(dets, videos, classes, thetas);
    for (std::size_t t = 0; t < thetas.size(); ++t)
      if (rep.mean_ap[t] != oracle::mean_ap(dets, videos, classes, thetas[t])) {
        ++eval_bad;
        break;
      }
  }
  const double t = sw.seconds();
  report(4, label_bad == 0 && nms_bad == 0 && eval_bad == 0 && t < 30.0,
         fmt("%d instances each; mismatches: labeling %d, NMS %d, matching+AP %d; %.2f s (< 30 s)", trials, label_bad,
             nms_bad, eval_bad, t));
}

struct AblationSummary {
  std::map<std::string, std::vector<double>> map;     // variant -> mAP per seed
  std::map<double, std::vector<double>> alpha_map;    // alpha -> mAP per seed
  std::vector<std::size_t> scored_full, scored_no_proposal;
  double probe = 0.0;
  double seconds = 0.0;
};

AblationSummary run_acceptance_ablation(const RunConfig& base) {
  const Stopwatch sw;
  AblationSummary s;
  const auto ds = generate(base.synth, base.pipeline.windows);
  s.probe = ds.probe.accuracy;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.propagate_seed();
    const auto rows = run_ablation(ds, cfg.pipeline, cfg.ablation_alphas, cfg.jobs);
    std::printf("  seed %llu:", static_cast<unsigned long long>(seed));
    for (const auto& r : rows) {
      if (r.variant == "alpha") {
        s.alpha_map[r.alpha].push_back(r.map);
        std::printf(" [alpha %.2f %.4f]", r.alpha, r.map);
      } else {
        s.map[r.variant].push_back(r.map);
        std::printf(" [%s %.4f, %zu scored]", r.variant.c_str(), r.map, r.scored);
        if (r.variant == "S-CNN") s.scored_full.push_back(r.scored);
        if (r.variant == "S-CNN (w/o proposal)") s.scored_no_proposal.push_back(r.scored);
      }
    }
    std::printf("\n");
    std::fflush(stdout);
  }
  s.seconds = sw.seconds();
  return s;
}

void criteria_ablation(const fs::path& source_dir) {
  const auto base = load_run_config(source_dir / "configs" / "acceptance.json");
  const auto s = run_acceptance_ablation(base);

  const auto& full_runs = s.map.at("S-CNN");
  auto gain = [&](const std::string& variant) {
    std::vector<double> d;
    for (std::size_t i = 0; i < full_runs.size(); ++i) d.push_back(full_runs[i] - s.map.at(variant)[i]);
    return median(d);
  };
  const double full = median(full_runs);
  const double no_loc = median(s.map.at("S-CNN (w/o localization)"));
  const double no_cls = median(s.map.at("S-CNN (w/o classification)"));
  const double no_prop = median(s.map.at("S-CNN (w/o proposal)"));
  const double gain_loc = gain("S-CNN (w/o localization)");
  const double gain_cls = gain("S-CNN (w/o classification)");
  const bool probe_ok = s.probe > 0.9;
  report(5,
         probe_ok && full >= no_loc && full >= no_cls && gain_loc > 0.0 && gain_cls > 0.0 && s.seconds < 900.0,
         fmt("probe %.3f (> 0.9); median mAP@0.5 S-CNN %.4f vs w/o localization %.4f and w/o classification-init "
             "%.4f; median per-seed gain %+.4f and %+.4f (> 0); %.0f s (< 900 s)",
             s.probe, full, no_loc, no_cls, gain_loc, gain_cls, s.seconds));

  bool fewer = true;
  for (std::size_t i = 0; i < s.scored_full.size(); ++i) fewer = fewer && s.scored_full[i] < s.scored_no_proposal[i];
  report(6, fewer && no_prop - full <= 0.02,
         fmt("scored segments %zu/%zu/%zu vs %zu/%zu/%zu without proposal; median mAP %.4f vs %.4f (drop %.4f <= 0.02)",
             s.scored_full[0], s.scored_full[1], s.scored_full[2], s.scored_no_proposal[0], s.scored_no_proposal[1],
             s.scored_no_proposal[2], full, no_prop, no_prop - full));

  std::vector<double> medians;
  std::string per_alpha;
  for (const auto& [alpha, maps] : s.alpha_map) {
    medians.push_back(median(maps));
    per_alpha += fmt(" alpha %.2f: %.4f;", alpha, medians.back());
  }
  const double range = *std::max_element(medians.begin(), medians.end()) - *std::min_element(medians.begin(), medians.end());
  report(7, range <= 0.05, fmt("median mAP@0.5 per alpha:%s range %.4f (<= 0.05)", per_alpha.c_str(), range));
}

void criterion_not_reproduced(const fs::path& source_dir) {
  const auto readme = slurp(source_dir / "README.md");
  const bool stated = readme.find("## Not reproduced") != std::string::npos;
  report(8, stated,
         "benchmark-scale absolute mAP values need pretrained 3D-conv features and the real datasets; not attempted "
         "here, replaced by criteria 5-7 (statement present in README: " +
             std::string(stated ? "yes" : "no") + ")");
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void criterion_determinism(const fs::path& source_dir, const fs::path& work) {
  const Stopwatch sw;
  const std::string cli = SCNN_CLI;
  const std::string config = (source_dir / "configs" / "smoke.json").string();
  fs::remove_all(work);
  const std::string data = "--set paths.data_dir=" + (work / "data").string();
  bool ok = run(cli + " gen-data -c " + config + " " + data) == 0;
  for (const char* r : {"run1", "run2"}) {
    const std::string paths =
        data + " --set paths.model_dir=" + (work / r / "models").string() + " --set paths.output_dir=" + (work / r / "out").string();
    ok = ok && run(cli + " train -c " + config + " " + paths) == 0;
    ok = ok && run(cli + " predict -c " + config + " " + paths) == 0;
    ok = ok && run(cli + " eval -c " + config + " " + paths) == 0;
  }
  std::string compared;
  for (const char* f : {"detections_test.csv", "results.csv", "class_ap.csv"}) {
    const auto a = slurp(work / "run1" / "out" / f);
    const auto b = slurp(work / "run2" / "out" / f);
    ok = ok && a == b && a.find("<missing") != 0;
    compared += fmt(" %s (%zu bytes)", f, a.size());
  }
  ok = ok && slurp(work / "run1" / "models" / "localization.ckpt.json") ==
                 slurp(work / "run2" / "models" / "localization.ckpt.json");
  report(9, ok, "two CLI train+predict+eval runs byte-identical:" + compared + fmt("; %.1f s", sw.seconds()));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path source_dir = SCNN_SOURCE_DIR;
  const fs::path work = fs::absolute(argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_run"));
  fs::create_directories(work);
  try {
    criterion_loss_gradients();
    criterion_loss_minimum(work);
    criterion_network_gradients();
    criterion_oracles();
    criteria_ablation(source_dir);
    criterion_not_reproduced(source_dir);
    criterion_determinism(source_dir, work / "determinism");
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%s: %d criterion failure(s)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
