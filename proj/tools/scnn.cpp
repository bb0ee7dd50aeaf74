// Command-line driver: dataset generation, staged training, prediction,
// evaluation, gradient checks, loss curves and the ablation table.

#include "scnn/detection.hpp"
#include "scnn/eval.hpp"
#include "scnn/gradcheck.hpp"
#include "scnn/labeler.hpp"
#include "scnn/loss.hpp"
#include "scnn/pipeline.hpp"
#include "scnn/run_config.hpp"
#include "scnn/synthgen.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<int> jobs;
};

scnn::RunConfig load_config(const CommonOptions& opts) {
  scnn::RunConfig cfg = scnn::load_run_config(opts.config_path, opts.overrides);
  if (opts.jobs) {
    if (*opts.jobs < 1) throw scnn::ConfigError("--jobs must be >= 1");
    cfg.jobs = *opts.jobs;
  }
  return cfg;
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw scnn::ConfigError(std::string(what) + " '" + dir.string() + "' does not exist");
}

void require_file(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw scnn::ConfigError("missing input file '" + file.string() + "'");
}

// Records what produced a directory of outputs. Only `wall_seconds` and
// `finished_at` vary between identical runs.
class RunMetadata {
 public:
  RunMetadata(std::string command, const scnn::RunConfig* cfg)
      : command_(std::move(command)), cfg_(cfg), start_(std::chrono::steady_clock::now()) {}

  json& extra() { return extra_; }

  void write(const fs::path& dir) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json meta{
        {"command", command_},
        {"versions",
         {{"scnn", SCNN_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}}},
        {"wall_seconds", wall},
        {"finished_at", std::chrono::duration_cast<std::chrono::seconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count()},
        {"extra", extra_}};
    if (cfg_) {
      meta["config_hash"] = cfg_->hash();
      meta["seed"] = cfg_->seed;
      meta["config"] = cfg_->to_json();
    }
    fs::create_directories(dir);
    std::ofstream out(dir / (command_ + ".meta.json"));
    out << meta.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write run metadata in " + dir.string());
  }

 private:
  std::string command_;
  const scnn::RunConfig* cfg_;
  std::chrono::steady_clock::time_point start_;
  json extra_ = json::object();
};

void write_training_log(const fs::path& path, const scnn::StageLogs& logs) {
  std::ofstream out(path);
  out << "stage,iteration,loss,softmax_loss,overlap_loss\n";
  auto dump = [&](const char* stage, const scnn::TrainingLog& log) {
    char buf[160];
    for (std::size_t i = 0; i < log.loss.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g\n", stage, i + 1, log.loss[i], log.softmax_loss[i],
                    log.overlap_loss[i]);
      out << buf;
    }
  };
  dump("proposal", logs.proposal);
  dump("classification", logs.classification);
  dump("localization", logs.localization);
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

const std::vector<scnn::Video>& split_of(const scnn::SynthDataset& ds, const std::string& split) {
  if (split == "test") return ds.test_untrimmed;
  if (split == "train") return ds.train_untrimmed;
  throw scnn::ConfigError("unknown split '" + split + "' (expected train or test)");
}

int cmd_gen_data(const CommonOptions& opts) {
  const auto cfg = load_config(opts);
  RunMetadata meta("gen-data", &cfg);
  const auto ds = scnn::generate(cfg.synth, cfg.pipeline.windows);
  scnn::save_dataset(cfg.paths.data_dir, ds, cfg.synth);
  meta.extra()["planted_instances"] = ds.planted_instances;
  meta.extra()["probe_accuracy"] = ds.probe.accuracy;
  meta.write(cfg.paths.data_dir);
  std::cout << "dataset written to " << cfg.paths.data_dir.string() << " (" << ds.planted_instances
            << " planted instances, probe accuracy " << ds.probe.accuracy << ")\n";
  return kExitOk;
}

int cmd_train(const CommonOptions& opts) {
  const auto cfg = load_config(opts);
  require_dir(cfg.paths.data_dir, "data directory");
  RunMetadata meta("train", &cfg);
  const auto ds = scnn::load_dataset(cfg.paths.data_dir);
  const auto videos = ds.training_videos();
  const auto trained = scnn::train_pipeline(videos, ds.num_classes, cfg.pipeline);

  scnn::save_models(cfg.paths.model_dir, trained.models, cfg.pipeline);
  write_training_log(cfg.paths.model_dir / "training_log.csv", trained.logs);
  std::vector<scnn::VideoAnnotation> untrimmed;
  for (const auto& v : ds.train_untrimmed) untrimmed.push_back(v.annotation);
  const auto labeled = scnn::label_untrimmed(untrimmed, cfg.pipeline.windows, cfg.pipeline.labeling);
  scnn::write_labeling_report(cfg.paths.model_dir / "labeling_report.csv", labeled);

  meta.extra()["proposal_samples"] = trained.logs.proposal_samples;
  meta.extra()["classification_samples"] = trained.logs.classification_samples;
  meta.write(cfg.paths.model_dir);
  std::cout << "models written to " << cfg.paths.model_dir.string() << '\n';
  return kExitOk;
}

int cmd_predict(const CommonOptions& opts, const std::string& split, const std::string& out_override) {
  const auto cfg = load_config(opts);
  require_dir(cfg.paths.data_dir, "data directory");
  require_dir(cfg.paths.model_dir, "model directory");
  const fs::path out = out_override.empty() ? cfg.paths.output_dir / ("detections_" + split + ".csv") : fs::path(out_override);
  RunMetadata meta("predict", &cfg);
  const auto ds = scnn::load_dataset(cfg.paths.data_dir);
  const auto& videos = split_of(ds, split);
  const auto models = scnn::load_models(cfg.paths.model_dir);
  const auto pred = scnn::predict_all(videos, models, cfg.pipeline, cfg.jobs);

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  scnn::write_detections(out, pred.detections);
  meta.extra()["split"] = split;
  meta.extra()["windows"] = pred.stats.windows;
  meta.extra()["scored_segments"] = pred.stats.scored;
  meta.extra()["detections"] = pred.detections.size();
  meta.write(cfg.paths.output_dir);
  std::cout << pred.detections.size() << " detections from " << pred.stats.scored << " of " << pred.stats.windows
            << " windows written to " << out.string() << '\n';
  return kExitOk;
}

struct EvalOptions {
  std::string detections;
  std::string annotations;
  std::string labels;
  std::vector<double> thetas;
  std::string out_dir;
  std::optional<std::size_t> top_k;
  std::optional<double> histogram_theta;
  bool interpolated = false;
};

int cmd_eval(const CommonOptions& opts, EvalOptions eo) {
  std::optional<scnn::RunConfig> cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts);
  scnn::EvalConfig ec = cfg ? cfg->eval : scnn::EvalConfig{};
  if (!eo.thetas.empty()) ec.thetas = eo.thetas;
  if (eo.top_k) ec.top_k = *eo.top_k;
  if (eo.interpolated) ec.interpolated = true;
  if (eo.histogram_theta) ec.histogram_theta = *eo.histogram_theta;
  for (double t : ec.thetas) {
    if (!(t > 0.0 && t < 1.0)) throw scnn::ConfigError("thetas must lie in (0, 1)");
  }
  if (std::find(ec.thetas.begin(), ec.thetas.end(), ec.histogram_theta) == ec.thetas.end()) {
    throw scnn::ConfigError("the histogram threshold must be one of the evaluated thetas (see --histogram-theta)");
  }
  if (cfg) {
    if (eo.detections.empty()) eo.detections = (cfg->paths.output_dir / "detections_test.csv").string();
    if (eo.annotations.empty()) eo.annotations = (cfg->paths.data_dir / "test_annotations.json").string();
    if (eo.labels.empty()) eo.labels = (cfg->paths.data_dir / "labels.json").string();
    if (eo.out_dir.empty()) eo.out_dir = cfg->paths.output_dir.string();
  }
  if (eo.detections.empty() || eo.annotations.empty() || eo.labels.empty()) {
    throw scnn::ConfigError("eval needs --detections, --annotations and --labels (or --config)");
  }
  if (eo.out_dir.empty()) eo.out_dir = ".";
  require_file(eo.detections);
  require_file(eo.annotations);
  require_file(eo.labels);

  RunMetadata meta("eval", cfg ? &*cfg : nullptr);
  const auto labels = scnn::load_label_map(eo.labels);
  const auto annotations = scnn::load_annotations(eo.annotations, labels);
  auto dets = scnn::read_detections(eo.detections);
  if (ec.top_k > 0) dets = scnn::top_k_filter(dets, ec.top_k);
  const auto mode = ec.interpolated ? scnn::ApMode::eleven_point : scnn::ApMode::uninterpolated;
  const auto report = scnn::evaluate(dets, annotations, static_cast<int>(labels.size()), ec.thetas, mode);

  const fs::path out_dir = eo.out_dir;
  fs::create_directories(out_dir);
  scnn::write_results(out_dir / "results.csv", report, labels);
  scnn::write_class_histogram(out_dir / "class_ap.csv", report, ec.histogram_theta, labels);
  meta.extra()["detections"] = eo.detections;
  meta.extra()["annotations"] = eo.annotations;
  meta.extra()["mean_ap"] = report.mean_ap;
  meta.write(out_dir);
  for (std::size_t t = 0; t < report.thetas.size(); ++t) {
    std::printf("mAP@%.2f = %.4f\n", report.thetas[t], report.mean_ap[t]);
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int trials, int net_trials, const std::string& out_dir) {
  RunMetadata meta("gradcheck", nullptr);
  const scnn::GradCheckTolerance loss_tol{};
  const auto loss = scnn::check_loss_gradients(trials, seed, loss_tol);
  const auto arch = scnn::tiny_architecture({1, 8, 8, 8}, 3);
  const scnn::GradCheckTolerance net_tol{.step = 1e-5, .relative = 1e-4};
  const auto net = scnn::check_network_gradients(arch, net_trials, seed, 50, net_tol);

  auto report = [](const char* name, const scnn::GradCheckReport& r, double tol) {
    if (r.passed()) {
      std::printf("%s: PASS, max rel err < %.0e (%.3g over %zu coordinates, %d trials)\n", name, tol,
                  r.max_relative_error, r.coordinates, r.trials);
    } else {
      std::printf("%s: FAIL, %d of %zu coordinates exceed %.0e; worst: %s\n", name, r.failures, r.coordinates, tol,
                  r.worst.c_str());
    }
  };
  report("loss", loss, loss_tol.relative);
  report("network", net, net_tol.relative);

  meta.extra()["seed"] = seed;
  meta.extra()["loss"] = {{"trials", loss.trials}, {"max_relative_error", loss.max_relative_error},
                          {"failures", loss.failures}};
  meta.extra()["network"] = {{"trials", net.trials}, {"max_relative_error", net.max_relative_error},
                             {"failures", net.failures}};
  meta.write(out_dir);
  return loss.passed() && net.passed() ? kExitOk : kExitRuntime;
}

int cmd_losscurve(const std::vector<double>& overlaps, double alpha, double lambda, int resolution,
                  const std::string& out) {
  if (overlaps.empty()) throw scnn::ConfigError("--v needs at least one overlap");
  for (double v : overlaps) {
    if (!(v > 0.0 && v <= 1.0)) throw scnn::ConfigError("overlaps must lie in (0, 1]");
  }
  if (!(alpha > 0.0)) throw scnn::ConfigError("--alpha must be > 0");
  if (lambda < 0.0) throw scnn::ConfigError("--lambda must be >= 0");
  if (resolution < 2) throw scnn::ConfigError("--resolution must be >= 2");
  RunMetadata meta("losscurve", nullptr);
  const fs::path path = out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  scnn::write_loss_curves(path, overlaps, alpha, lambda, resolution);
  for (double v : overlaps) {
    const auto curve = scnn::per_sample_loss_curve(v, alpha, lambda, resolution);
    std::printf("v=%.4g argmin P=%.6f\n", v, scnn::curve_argmin(curve));
  }
  meta.extra() = {{"overlaps", overlaps}, {"alpha", alpha}, {"lambda", lambda}, {"resolution", resolution}};
  meta.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  return kExitOk;
}

int cmd_ablate(const CommonOptions& opts) {
  const auto cfg = load_config(opts);
  require_dir(cfg.paths.data_dir, "data directory");
  RunMetadata meta("ablate", &cfg);
  const auto ds = scnn::load_dataset(cfg.paths.data_dir);
  const auto rows = scnn::run_ablation(ds, cfg.pipeline, cfg.ablation_alphas, cfg.jobs);
  fs::create_directories(cfg.paths.output_dir);
  scnn::write_ablation(cfg.paths.output_dir / "ablation.csv", rows);
  json table = json::array();
  for (const auto& r : rows) {
    std::printf("%-28s alpha=%-5.3g mAP@%.2f=%.4f scored=%zu detections=%zu\n", r.variant.c_str(), r.alpha,
                cfg.pipeline.eval_theta, r.map, r.scored, r.detections);
    table.push_back({{"variant", r.variant}, {"alpha", r.alpha}, {"map", r.map}});
  }
  meta.extra()["rows"] = table;
  meta.write(cfg.paths.output_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage temporal action localization on synthetic video"};
  app.require_subcommand(1);
  app.footer("Config keys (JSON document, dotted paths for --set) and defaults:\n" + scnn::config_reference() +
             "\nExit codes: 0 success, 1 usage or config error, 2 runtime or numeric error.");

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("-c,--config", common.config_path, "JSON run configuration");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a config key, e.g. --set loss.alpha=0.5");
    sub->add_option("-j,--jobs", common.jobs, "Worker threads (overrides the config's jobs)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset into paths.data_dir");
  add_common(gen, true);

  auto* train = app.add_subcommand("train", "Train proposal, classification and localization networks");
  add_common(train, true);

  std::string split = "test";
  std::string predict_out;
  auto* predict = app.add_subcommand("predict", "Score a split and write a detections CSV");
  add_common(predict, true);
  predict->add_option("--split", split, "train or test")->capture_default_str();
  predict->add_option("-o,--out", predict_out, "Detections CSV (default <output_dir>/detections_<split>.csv)");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Per-class AP and mAP of a detections CSV");
  add_common(eval, false);
  eval->add_option("--detections", eval_opts.detections, "Detections CSV");
  eval->add_option("--annotations", eval_opts.annotations, "Ground-truth annotation JSON");
  eval->add_option("--labels", eval_opts.labels, "Label map JSON");
  eval->add_option("--thetas", eval_opts.thetas, "IoU thresholds")->delimiter(',');
  eval->add_option("--top-k", eval_opts.top_k, "Keep only the k most confident detections");
  eval->add_option("--histogram-theta", eval_opts.histogram_theta, "Threshold for class_ap.csv (default 0.5)");
  eval->add_flag("--interpolated", eval_opts.interpolated, "11-point interpolated AP");
  eval->add_option("-o,--out-dir", eval_opts.out_dir, "Directory for results.csv and class_ap.csv");

  std::uint64_t gc_seed = 1;
  int gc_trials = 1000;
  int gc_net_trials = 3;
  std::string gc_out = ".";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of the loss and network gradients");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--trials", gc_trials, "Random loss batches")->capture_default_str()->check(CLI::PositiveNumber);
  gradcheck->add_option("--net-trials", gc_net_trials, "Random network checks")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("-o,--out-dir", gc_out, "Directory for the run metadata")->capture_default_str();

  std::vector<double> lc_v{0.25, 0.5, 0.75, 1.0};
  double lc_alpha = 0.25;
  double lc_lambda = 1.0;
  int lc_res = 10000;
  std::string lc_out = "loss_curves.csv";
  auto* losscurve = app.add_subcommand("losscurve", "Per-sample loss over the true-class probability");
  losscurve->add_option("--v", lc_v, "Overlaps v")->delimiter(',')->capture_default_str();
  losscurve->add_option("--alpha", lc_alpha)->capture_default_str();
  losscurve->add_option("--lambda", lc_lambda)->capture_default_str();
  losscurve->add_option("--resolution", lc_res, "Grid points over (0, 1]")->capture_default_str();
  losscurve->add_option("-o,--out", lc_out, "CSV path")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four variants and the alpha sweep");
  add_common(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common);
    if (*predict) return cmd_predict(common, split, predict_out);
    if (*eval) return cmd_eval(common, eval_opts);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_trials, gc_net_trials, gc_out);
    if (*losscurve) return cmd_losscurve(lc_v, lc_alpha, lc_lambda, lc_res, lc_out);
    if (*ablate) return cmd_ablate(common);
  } catch (const scnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
