#include "scnn/tinynet.hpp"

#include "scnn/random.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace scnn {

namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel * kKernel;

Shape next_shape(const Shape& in, const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::conv3d:
      if (layer.width < 1) throw std::invalid_argument("conv3d needs at least one filter");
      return {layer.width, in.frames, in.height, in.width};
    case LayerKind::pool3d: {
      if (layer.temporal_kernel < 1 || layer.temporal_stride < 1) {
        throw std::invalid_argument("pool3d temporal kernel and stride must be >= 1");
      }
      if (in.frames < layer.temporal_kernel || in.height < 2 || in.width < 2) {
        throw std::invalid_argument("pool3d input too small");
      }
      return {in.channels, (in.frames - layer.temporal_kernel) / layer.temporal_stride + 1, in.height / 2,
              in.width / 2};
    }
    case LayerKind::fc:
      if (layer.width < 1) throw std::invalid_argument("fc needs at least one output");
      return {layer.width, 1, 1, 1};
    case LayerKind::relu:
      return in;
  }
  throw std::invalid_argument("unknown layer kind");
}

Eigen::Index fan_in(const Shape& in, const LayerSpec& layer) {
  return layer.kind == LayerKind::conv3d ? in.channels * kTaps : in.size();
}

}  // namespace

std::vector<Shape> Architecture::output_shapes() const {
  if (input.size() <= 0) throw std::invalid_argument("architecture input shape is empty");
  std::vector<Shape> shapes;
  Shape cur = input;
  for (const auto& layer : layers) {
    cur = next_shape(cur, layer);
    shapes.push_back(cur);
  }
  return shapes;
}

int Architecture::num_outputs() const {
  if (layers.empty() || layers.back().kind != LayerKind::fc) {
    throw std::invalid_argument("architecture must end with an fc layer");
  }
  return layers.back().width;
}

std::size_t Architecture::head_layer() const {
  num_outputs();
  return layers.size() - 1;
}

std::size_t Architecture::parameter_count() const {
  std::size_t total = 0;
  Shape cur = input;
  for (const auto& layer : layers) {
    if (layer.has_params()) {
      total += static_cast<std::size_t>(layer.width) * static_cast<std::size_t>(fan_in(cur, layer) + 1);
    }
    cur = next_shape(cur, layer);
  }
  return total;
}

std::string Architecture::fingerprint() const {
  std::ostringstream os;
  os << "in(" << input.channels << ',' << input.frames << ',' << input.height << ',' << input.width << ')';
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv3d: os << "|conv(" << l.width << ')'; break;
      case LayerKind::pool3d: os << "|pool(" << l.temporal_kernel << ',' << l.temporal_stride << ')'; break;
      case LayerKind::fc: os << "|fc(" << l.width << ')'; break;
      case LayerKind::relu: os << "|relu"; break;
    }
  }
  return os.str();
}

void Architecture::validate() const {
  output_shapes();
  if (num_outputs() < 2) throw std::invalid_argument("final fc needs at least two outputs");
}

Architecture tiny_architecture(Shape input, int num_outputs, int conv1, int conv2, int hidden) {
  return {input,
          {LayerSpec::conv(conv1), LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(conv2),
           LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::fc(hidden), LayerSpec::relu(),
           LayerSpec::fc(num_outputs)}};
}

Architecture c3d_architecture(int num_outputs) {
  using L = LayerSpec;
  return {{3, 16, 128, 171},
          {L::conv(64),  L::relu(), L::pool(1, 1), L::conv(128), L::relu(), L::pool(2, 2),
           L::conv(256), L::relu(), L::conv(256), L::relu(),     L::pool(2, 2), L::conv(512),
           L::relu(),    L::conv(512), L::relu(), L::pool(2, 2), L::conv(512), L::relu(),
           L::conv(512), L::relu(), L::pool(2, 2), L::fc(4096),  L::relu(),    L::fc(4096),
           L::relu(),    L::fc(num_outputs)}};
}

bool ModelParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g(params.layers.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i].weight = Matrix::Zero(params.layers[i].weight.rows(), params.layers[i].weight.cols());
    g[i].bias = Vector::Zero(params.layers[i].bias.size());
  }
  return g;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ModelParams params{arch, {}};
  Shape cur = arch.input;
  for (const auto& layer : arch.layers) {
    LayerParams lp;
    if (layer.has_params()) {
      const Eigen::Index fin = fan_in(cur, layer);
      const double bound = std::sqrt(6.0 / static_cast<double>(fin));
      lp.weight.resize(layer.width, fin);
      for (Eigen::Index i = 0; i < lp.weight.size(); ++i) lp.weight.data()[i] = rng.uniform(-bound, bound);
      lp.bias = Vector::Zero(layer.width);
    }
    params.layers.push_back(std::move(lp));
    cur = next_shape(cur, layer);
  }
  return params;
}

namespace {

// columns(r, j): r = ((c * 3 + dt) * 3 + dy) * 3 + dx, j = (t * H + y) * W + x.
void im2col(const Vector& in, const Shape& s, Matrix& cols) {
  const Eigen::Index hw = s.height * s.width;
  const Eigen::Index plane = s.frames * hw;
  cols.setZero(s.channels * kTaps, plane);
  for (Eigen::Index c = 0; c < s.channels; ++c)
    for (int dt = 0; dt < kKernel; ++dt)
      for (int dy = 0; dy < kKernel; ++dy)
        for (int dx = 0; dx < kKernel; ++dx) {
          const Eigen::Index r = ((c * kKernel + dt) * kKernel + dy) * kKernel + dx;
          double* row = cols.row(r).data();
          for (Eigen::Index t = 0; t < s.frames; ++t) {
            const Eigen::Index ti = t + dt - 1;
            if (ti < 0 || ti >= s.frames) continue;
            for (Eigen::Index y = 0; y < s.height; ++y) {
              const Eigen::Index yi = y + dy - 1;
              if (yi < 0 || yi >= s.height) continue;
              const double* src = in.data() + c * plane + ti * hw + yi * s.width;
              double* dst = row + t * hw + y * s.width;
              for (Eigen::Index x = 0; x < s.width; ++x) {
                const Eigen::Index xi = x + dx - 1;
                if (xi >= 0 && xi < s.width) dst[x] = src[xi];
              }
            }
          }
        }
}

void col2im(const Matrix& cols, const Shape& s, Vector& out) {
  const Eigen::Index hw = s.height * s.width;
  const Eigen::Index plane = s.frames * hw;
  out.setZero(s.size());
  for (Eigen::Index c = 0; c < s.channels; ++c)
    for (int dt = 0; dt < kKernel; ++dt)
      for (int dy = 0; dy < kKernel; ++dy)
        for (int dx = 0; dx < kKernel; ++dx) {
          const Eigen::Index r = ((c * kKernel + dt) * kKernel + dy) * kKernel + dx;
          const double* row = cols.row(r).data();
          for (Eigen::Index t = 0; t < s.frames; ++t) {
            const Eigen::Index ti = t + dt - 1;
            if (ti < 0 || ti >= s.frames) continue;
            for (Eigen::Index y = 0; y < s.height; ++y) {
              const Eigen::Index yi = y + dy - 1;
              if (yi < 0 || yi >= s.height) continue;
              double* dst = out.data() + c * plane + ti * hw + yi * s.width;
              const double* src = row + t * hw + y * s.width;
              for (Eigen::Index x = 0; x < s.width; ++x) {
                const Eigen::Index xi = x + dx - 1;
                if (xi >= 0 && xi < s.width) dst[xi] += src[x];
              }
            }
          }
        }
}

void max_pool(const Vector& in, const Shape& s, const LayerSpec& layer, const Shape& o, Vector& out,
              std::vector<Eigen::Index>& argmax) {
  out.resize(o.size());
  argmax.resize(static_cast<std::size_t>(o.size()));
  Eigen::Index oi = 0;
  for (Eigen::Index c = 0; c < o.channels; ++c)
    for (Eigen::Index t = 0; t < o.frames; ++t)
      for (Eigen::Index y = 0; y < o.height; ++y)
        for (Eigen::Index x = 0; x < o.width; ++x, ++oi) {
          Eigen::Index best = -1;
          double best_v = 0.0;
          for (int kt = 0; kt < layer.temporal_kernel; ++kt)
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx) {
                const Eigen::Index idx =
                    ((c * s.frames + t * layer.temporal_stride + kt) * s.height + 2 * y + ky) * s.width + 2 * x + kx;
                if (best < 0 || in(idx) > best_v) {
                  best = idx;
                  best_v = in(idx);
                }
              }
          out(oi) = best_v;
          argmax[static_cast<std::size_t>(oi)] = best;
        }
}

}  // namespace

ScoreVector forward(const ModelParams& params, const InputTensor& input, ForwardCache* cache) {
  const auto& arch = params.arch;
  const auto& d = input.dimensions();
  if (d[0] != arch.input.channels || d[1] != arch.input.frames || d[2] != arch.input.height ||
      d[3] != arch.input.width) {
    throw std::invalid_argument("forward: input shape does not match architecture " + arch.fingerprint());
  }
  if (params.layers.size() != arch.layers.size()) throw std::invalid_argument("forward: parameter/layer mismatch");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.fingerprint = arch.fingerprint();
  c.activations.assign(1, Eigen::Map<const Vector>(input.data(), input.size()));
  c.columns.assign(arch.layers.size(), Matrix());
  c.argmax.assign(arch.layers.size(), {});

  Shape shape = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& layer = arch.layers[i];
    const auto& p = params.layers[i];
    const Vector& in = c.activations.back();
    const Shape out_shape = next_shape(shape, layer);
    Vector out;
    switch (layer.kind) {
      case LayerKind::conv3d: {
        im2col(in, shape, c.columns[i]);
        Matrix y = p.weight * c.columns[i];
        y.colwise() += p.bias;
        out = Eigen::Map<const Vector>(y.data(), y.size());
        break;
      }
      case LayerKind::pool3d:
        max_pool(in, shape, layer, out_shape, out, c.argmax[i]);
        break;
      case LayerKind::fc:
        out = p.weight * in + p.bias;
        break;
      case LayerKind::relu:
        out = in.cwiseMax(0.0);
        break;
    }
    c.activations.push_back(std::move(out));
    shape = out_shape;
  }
  ScoreVector sv;
  sv.logits = c.activations.back();
  sv.probs = softmax(sv.logits);
  return sv;
}

void backward(const ModelParams& params, const ForwardCache& cache, const Vector& logit_grad, Gradients& grads,
              Vector* input_grad) {
  const auto& arch = params.arch;
  if (cache.fingerprint != arch.fingerprint() || cache.activations.size() != arch.layers.size() + 1) {
    throw std::invalid_argument("backward: forward cache does not belong to this model");
  }
  if (logit_grad.size() != cache.activations.back().size()) {
    throw std::invalid_argument("backward: logit gradient has the wrong size");
  }
  if (grads.size() != params.layers.size()) grads = zero_gradients(params);

  const auto shapes = arch.output_shapes();
  Vector upstream = logit_grad;
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const auto& layer = arch.layers[li];
    const auto& p = params.layers[li];
    const Vector& in = cache.activations[li];
    const Shape& in_shape = li == 0 ? arch.input : shapes[li - 1];
    Vector down;
    switch (layer.kind) {
      case LayerKind::conv3d: {
        const Eigen::Index plane = in_shape.frames * in_shape.height * in_shape.width;
        Eigen::Map<const Matrix> dy(upstream.data(), layer.width, plane);
        const Matrix& cols = cache.columns[li];
        grads[li].weight.noalias() += dy * cols.transpose();
        grads[li].bias += dy.rowwise().sum();
        if (li > 0 || input_grad) {
          const Matrix dcols = p.weight.transpose() * dy;
          col2im(dcols, in_shape, down);
        }
        break;
      }
      case LayerKind::pool3d: {
        down = Vector::Zero(in.size());
        const auto& route = cache.argmax[li];
        for (std::size_t o = 0; o < route.size(); ++o) down(route[o]) += upstream(static_cast<Eigen::Index>(o));
        break;
      }
      case LayerKind::fc:
        grads[li].weight.noalias() += upstream * in.transpose();
        grads[li].bias += upstream;
        if (li > 0 || input_grad) down = p.weight.transpose() * upstream;
        break;
      case LayerKind::relu:
        down = (in.array() > 0.0).select(upstream.array(), 0.0).matrix();
        break;
    }
    upstream = std::move(down);
  }
  if (input_grad) *input_grad = std::move(upstream);
}

std::vector<std::string> SgdConfig::violations() const {
  std::vector<std::string> out;
  if (!(base_lr > 0.0)) out.emplace_back("sgd.base_lr must be > 0");
  if (!(head_lr > 0.0)) out.emplace_back("sgd.head_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) out.emplace_back("sgd.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) out.emplace_back("sgd.weight_decay must be >= 0");
  if (!(lr_drop_factor > 0.0)) out.emplace_back("sgd.lr_drop_factor must be > 0");
  if (drop_interval < 1) out.emplace_back("sgd.drop_interval must be >= 1");
  if (iterations < 0) out.emplace_back("sgd.iterations must be >= 0");
  if (iterations > 0 && drop_interval > iterations) out.emplace_back("sgd.drop_interval must be <= sgd.iterations");
  if (batch_size < 1) out.emplace_back("sgd.batch_size must be >= 1");
  return out;
}

SgdOptimizer::SgdOptimizer(SgdConfig cfg, const ModelParams& params)
    : cfg_(cfg), head_(params.arch.head_layer()), velocity_(zero_gradients(params)) {}

double SgdOptimizer::learning_rate(int iteration, bool head) const {
  const double base = head ? cfg_.head_lr : cfg_.base_lr;
  return base * std::pow(cfg_.lr_drop_factor, -static_cast<double>(iteration / cfg_.drop_interval));
}

void SgdOptimizer::step(ModelParams& params, const Gradients& grads) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    auto& v = velocity_[i];
    const double lr = learning_rate(iteration_, i == head_);
    v.weight = cfg_.momentum * v.weight - lr * (grads[i].weight + cfg_.weight_decay * p.weight);
    v.bias = cfg_.momentum * v.bias - lr * grads[i].bias;
    p.weight += v.weight;
    p.bias += v.bias;
  }
  ++iteration_;
}

LossTerms<double> loss_and_gradients(const ModelParams& params, std::span<const TrainingExample> batch,
                                     const LossConfig& loss, Gradients* grads) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int classes = params.arch.num_outputs();
  std::vector<ForwardCache> caches(batch.size());
  Matrix logits(n, classes);
  Matrix probs(n, classes);
  std::vector<ClassId> labels(batch.size());
  std::vector<double> overlaps(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    const ScoreVector sv = forward(params, ex.input, grads ? &caches[static_cast<std::size_t>(i)] : nullptr);
    logits.row(i) = sv.logits.transpose();
    probs.row(i) = sv.probs.transpose();
    labels[static_cast<std::size_t>(i)] = ex.label;
    overlaps[static_cast<std::size_t>(i)] = ex.overlap;
  }
  const auto terms = loss_forward(probs, std::span<const ClassId>(labels), std::span<const double>(overlaps), loss);
  if (grads) {
    *grads = zero_gradients(params);
    const Matrix dlogits =
        loss_backward(logits, std::span<const ClassId>(labels), std::span<const double>(overlaps), loss);
    for (Eigen::Index i = 0; i < n; ++i) {
      backward(params, caches[static_cast<std::size_t>(i)], dlogits.row(i).transpose(), *grads);
    }
  }
  return terms;
}

TrainResult train(const Architecture& arch, std::span<const TrainingExample> data, const SgdConfig& sgd,
                  const LossConfig& loss, const std::optional<ModelParams>& init) {
  if (const auto v = sgd.violations(); !v.empty()) throw std::invalid_argument(v.front());
  if (init && init->arch.fingerprint() != arch.fingerprint()) {
    throw std::invalid_argument("train: initial parameters were built for " + init->arch.fingerprint());
  }
  TrainResult result{init ? *init : init_params(arch, sgd.seed), {}, 0};
  if (sgd.iterations == 0) return result;
  if (data.empty()) throw std::invalid_argument("train: no training data");

  SgdOptimizer opt(sgd, result.params);
  // Separate stream from init so that resuming from a checkpoint keeps the data order.
  Rng rng(sgd.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<TrainingExample> batch;
  Gradients grads;

  for (int it = 0; it < sgd.iterations; ++it) {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + static_cast<std::size_t>(sgd.batch_size));
    batch.clear();
    for (std::size_t i = cursor; i < end; ++i) batch.push_back(data[order[i]]);
    cursor = end;

    const auto terms = loss_and_gradients(result.params, batch, loss, &grads);
    if (!std::isfinite(terms.total)) {
      throw NumericError("training diverged at iteration " + std::to_string(it) +
                         ": loss = " + std::to_string(terms.total));
    }
    result.log.loss.push_back(terms.total);
    result.log.softmax_loss.push_back(terms.softmax);
    result.log.overlap_loss.push_back(terms.overlap);
    opt.step(result.params, grads);
    if (!result.params.all_finite()) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": non-finite parameters");
    }
  }
  result.iterations = sgd.iterations;
  return result;
}

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::pool3d: return "pool3d";
    case LayerKind::fc: return "fc";
    case LayerKind::relu: return "relu";
  }
  return "?";
}

LayerKind kind_from(const std::string& s) {
  if (s == "conv3d") return LayerKind::conv3d;
  if (s == "pool3d") return LayerKind::pool3d;
  if (s == "fc") return LayerKind::fc;
  if (s == "relu") return LayerKind::relu;
  throw ConfigError("unknown layer kind '" + s + "'");
}

json arch_to_json(const Architecture& a) {
  json layers = json::array();
  for (const auto& l : a.layers) {
    layers.push_back({{"kind", kind_name(l.kind)},
                      {"width", l.width},
                      {"temporal_kernel", l.temporal_kernel},
                      {"temporal_stride", l.temporal_stride}});
  }
  return {{"input", {a.input.channels, a.input.frames, a.input.height, a.input.width}}, {"layers", layers}};
}

Architecture arch_from_json(const json& j) {
  Architecture a;
  const auto& in = j.at("input");
  a.input = {in.at(0).get<Eigen::Index>(), in.at(1).get<Eigen::Index>(), in.at(2).get<Eigen::Index>(),
             in.at(3).get<Eigen::Index>()};
  for (const auto& l : j.at("layers")) {
    a.layers.push_back({kind_from(l.at("kind").get<std::string>()), l.at("width").get<int>(),
                        l.at("temporal_kernel").get<int>(), l.at("temporal_stride").get<int>()});
  }
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const SgdConfig& sgd,
                     int iterations) {
  json layers = json::array();
  for (const auto& l : params.layers) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  const json doc = {{"format", "scnn-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"fingerprint", params.arch.fingerprint()},
                    {"architecture", arch_to_json(params.arch)},
                    {"iterations", iterations},
                    {"sgd",
                     {{"base_lr", sgd.base_lr},
                      {"head_lr", sgd.head_lr},
                      {"momentum", sgd.momentum},
                      {"weight_decay", sgd.weight_decay},
                      {"lr_drop_factor", sgd.lr_drop_factor},
                      {"drop_interval", sgd.drop_interval},
                      {"iterations", sgd.iterations},
                      {"batch_size", sgd.batch_size},
                      {"seed", sgd.seed}}},
                    {"layers", layers}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump() << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<Architecture>& expected) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.at("format") != "scnn-checkpoint" || doc.at("version") != kCheckpointVersion) {
      throw ConfigError(path.string() + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    }
    ModelParams params{arch_from_json(doc.at("architecture")), {}};
    const auto fp = doc.at("fingerprint").get<std::string>();
    if (fp != params.arch.fingerprint()) throw ConfigError(path.string() + ": fingerprint does not match layers");
    if (expected && expected->fingerprint() != fp) {
      throw ConfigError(path.string() + ": checkpoint built for " + fp + ", expected " + expected->fingerprint());
    }
    const ModelParams shape = init_params(params.arch, 0);
    const auto& layers = doc.at("layers");
    if (layers.size() != shape.layers.size()) throw ConfigError(path.string() + ": layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto w = layers[i].at("weight").get<std::vector<double>>();
      const auto b = layers[i].at("bias").get<std::vector<double>>();
      const auto& ref = shape.layers[i];
      if (static_cast<Eigen::Index>(w.size()) != ref.weight.size() ||
          static_cast<Eigen::Index>(b.size()) != ref.bias.size()) {
        throw ConfigError(path.string() + ": tensor size mismatch in layer " + std::to_string(i));
      }
      LayerParams lp;
      lp.weight = Eigen::Map<const Matrix>(w.data(), ref.weight.rows(), ref.weight.cols());
      lp.bias = Eigen::Map<const Vector>(b.data(), ref.bias.size());
      params.layers.push_back(std::move(lp));
    }
    if (!params.all_finite()) throw ConfigError(path.string() + ": non-finite parameters");
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace scnn
