#include "scnn/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace scnn {

using nlohmann::json;

namespace {

// Walks every config field once; the visitor decides whether it reads or writes.
template <typename Visitor>
void visit_sgd(Visitor& v, SgdConfig& s) {
  v("base_lr", s.base_lr);
  v("head_lr", s.head_lr);
  v("momentum", s.momentum);
  v("weight_decay", s.weight_decay);
  v("lr_drop_factor", s.lr_drop_factor);
  v("drop_interval", s.drop_interval);
  v("iterations", s.iterations);
  v("batch_size", s.batch_size);
}

template <typename Visitor>
void visit_config(Visitor& v, RunConfig& c) {
  v.section("paths", [&] {
    v("data_dir", c.paths.data_dir);
    v("model_dir", c.paths.model_dir);
    v("output_dir", c.paths.output_dir);
  });
  v("seed", c.seed);
  v("jobs", c.jobs);
  v.section("synth", [&] {
    auto& s = c.synth;
    v("num_classes", s.num_classes);
    v("trimmed_videos", s.trimmed_videos);
    v("train_untrimmed", s.train_untrimmed);
    v("test_untrimmed", s.test_untrimmed);
    v("min_frames", s.min_frames);
    v("max_frames", s.max_frames);
    v("channels", s.channels);
    v("height", s.height);
    v("width", s.width);
    v("min_instances", s.min_instances);
    v("max_instances", s.max_instances);
    v("min_action", s.min_action);
    v("max_action", s.max_action);
    v("blob_sigma", s.blob_sigma);
    v("amplitude", s.amplitude);
    v("noise", s.noise);
    v("bound", s.bound);
    v("distractors", s.distractors);
    v("seed", s.seed);
  });
  auto& p = c.pipeline;
  v.section("window", [&] {
    v("lengths", p.windows.lengths);
    v("overlap", p.windows.overlap);
    v("sample_count", p.windows.sample_count);
  });
  v.section("labeling", [&] {
    v("positive_iou", p.labeling.positive_iou);
    v("background_iou", p.labeling.background_iou);
    v("rescue_iou", p.labeling.rescue_iou);
  });
  v.section("loss", [&] {
    v("lambda", p.loss.lambda);
    v("alpha", p.loss.alpha);
  });
  v.section("network", [&] {
    v("conv1", p.widths.conv1);
    v("conv2", p.widths.conv2);
    v("hidden", p.widths.hidden);
  });
  v.section("sgd", [&] {
    v.section("proposal", [&] { visit_sgd(v, p.proposal_sgd); });
    v.section("classification", [&] { visit_sgd(v, p.classification_sgd); });
    v.section("localization", [&] { visit_sgd(v, p.localization_sgd); });
  });
  v.section("pipeline", [&] {
    v("proposal_threshold", p.proposal_threshold);
    v("nms_offset", p.nms_offset);
    v("eval_theta", p.eval_theta);
    v("use_proposal", p.use_proposal);
    v("use_classification_init", p.use_classification_init);
    v("use_localization_loss", p.use_localization_loss);
  });
  v.section("eval", [&] {
    v("thetas", c.eval.thetas);
    v("interpolated", c.eval.interpolated);
    v("histogram_theta", c.eval.histogram_theta);
    v("top_k", c.eval.top_k);
  });
  v.section("ablation", [&] { v("alphas", c.ablation_alphas); });
}

class Writer {
 public:
  json root = json::object();

  template <typename T>
  void operator()(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, std::filesystem::path>) {
      (*cur_)[key] = value.string();
    } else {
      (*cur_)[key] = value;
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    json* saved = cur_;
    (*cur_)[key] = json::object();
    cur_ = &(*cur_)[key];
    body();
    cur_ = saved;
  }

 private:
  json* cur_ = &root;
};

class Reader {
 public:
  Reader(const json& doc, std::vector<std::string>& errors) : errors_(errors) { enter(&doc, ""); }

  template <typename T>
  void operator()(const char* key, T& value) {
    const json* obj = stack_.back().node;
    if (!obj) return;
    stack_.back().seen.insert(key);
    const auto it = obj->find(key);
    if (it == obj->end()) return;
    try {
      if constexpr (std::is_same_v<T, std::filesystem::path>) {
        value = it->template get<std::string>();
      } else {
        value = it->template get<T>();
      }
    } catch (const json::exception&) {
      errors_.push_back(path(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    const json* obj = stack_.back().node;
    const json* child = nullptr;
    if (obj) {
      stack_.back().seen.insert(key);
      if (const auto it = obj->find(key); it != obj->end()) {
        if (it->is_object()) {
          child = &*it;
        } else {
          errors_.push_back(path(key) + ": expected an object");
        }
      }
    }
    enter(child, path(key));
    body();
    leave();
  }

  void finish() { leave(); }

 private:
  struct Frame {
    const json* node;
    std::string prefix;
    std::set<std::string> seen;
  };

  void enter(const json* node, std::string prefix) { stack_.push_back({node, std::move(prefix), {}}); }

  void leave() {
    const Frame& f = stack_.back();
    if (f.node) {
      for (const auto& [k, _] : f.node->items()) {
        if (!f.seen.contains(k)) errors_.push_back("unknown key '" + (f.prefix.empty() ? k : f.prefix + "." + k) + "'");
      }
    }
    stack_.pop_back();
  }

  std::string path(const char* key) const {
    const auto& p = stack_.back().prefix;
    return p.empty() ? std::string(key) : p + "." + key;
  }

  std::vector<Frame> stack_;
  std::vector<std::string>& errors_;
};

void flatten(const json& j, const std::string& prefix, std::ostringstream& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key, out);
    } else {
      out << "  " << key << " = " << v.dump() << '\n';
    }
  }
}

}  // namespace

void RunConfig::propagate_seed() {
  pipeline.seed = seed;
  pipeline.proposal_sgd.seed = seed * 3 + 1;
  pipeline.classification_sgd.seed = seed * 3 + 2;
  pipeline.localization_sgd.seed = seed * 3 + 3;
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out = synth.violations();
  for (auto& s : pipeline.violations()) out.push_back(std::move(s));
  if (jobs < 1) out.emplace_back("jobs must be >= 1");
  if (eval.thetas.empty()) out.emplace_back("eval.thetas must not be empty");
  for (double t : eval.thetas) {
    if (!(t > 0.0 && t < 1.0)) out.emplace_back("eval.thetas entries must lie in (0, 1)");
  }
  if (std::find(eval.thetas.begin(), eval.thetas.end(), eval.histogram_theta) == eval.thetas.end()) {
    out.emplace_back("eval.histogram_theta must be one of eval.thetas");
  }
  for (double a : ablation_alphas) {
    if (!(a > 0.0)) out.emplace_back("ablation.alphas entries must be > 0");
  }
  if (synth.min_action < pipeline.windows.sample_count) {
    out.emplace_back("synth.min_action must be >= window.sample_count");
  }
  return out;
}

json RunConfig::to_json() const {
  Writer w;
  visit_config(w, const_cast<RunConfig&>(*this));
  return w.root;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_run_config(const json& doc) {
  std::vector<std::string> errors;
  RunConfig cfg;
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  Reader r(doc, errors);
  visit_config(r, cfg);
  r.finish();
  cfg.propagate_seed();
  if (errors.empty()) errors = cfg.violations();
  else
    for (auto& s : cfg.violations()) errors.push_back(std::move(s));
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &doc;
    std::stringstream ss(key);
    std::vector<std::string> parts;
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
      node = &(*node)[parts[i]];
      if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    }
    (*node)[parts.back()] = value;
  }
  return parse_run_config(doc);
}

std::string config_reference() {
  std::ostringstream out;
  flatten(RunConfig{}.to_json(), "", out);
  return out.str();
}

}  // namespace scnn
