#include "scnn/gradcheck.hpp"

#include "scnn/random.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace scnn {

namespace {

void record(GradCheckReport& r, double analytic, double numeric, const GradCheckTolerance& tol,
            const std::string& where) {
  const double abs_err = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
  const bool ok = scale < tol.tiny_gradient ? abs_err < tol.absolute || rel_err < tol.relative
                                            : rel_err < tol.relative;
  ++r.coordinates;
  r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
  if (scale >= tol.tiny_gradient && rel_err > r.max_relative_error) {
    r.max_relative_error = rel_err;
    std::ostringstream os;
    os << where << " analytic=" << analytic << " numeric=" << numeric;
    r.worst = os.str();
  }
  if (!ok) ++r.failures;
}

}  // namespace

GradCheckReport check_loss_gradients(int trials, std::uint64_t seed, const GradCheckTolerance& tol) {
  constexpr std::array<double, 3> alphas{0.25, 0.5, 1.0};
  constexpr std::array<double, 3> lambdas{0.0, 0.5, 1.0};
  using Wide = long double;

  Rng rng(seed);
  GradCheckReport report;
  for (int trial = 0; trial < trials; ++trial) {
    const auto n = rng.uniform_int(1, 8);
    const auto k = rng.uniform_int(1, 4);
    Matrix logits(n, k + 1);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-2.0, 2.0);
    std::vector<ClassId> labels(static_cast<std::size_t>(n));
    std::vector<double> overlaps(static_cast<std::size_t>(n));
    for (std::size_t s = 0; s < labels.size(); ++s) {
      labels[s] = static_cast<ClassId>(rng.uniform_int(0, k));
      overlaps[s] = 1.0 - rng.uniform();
    }
    LossConfig cfg;
    cfg.alpha = alphas[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    cfg.lambda = lambdas[static_cast<std::size_t>(rng.uniform_int(0, 2))];

    const Matrix analytic = loss_backward(logits, std::span<const ClassId>(labels), std::span<const double>(overlaps), cfg);

    const MatrixX<Wide> wide = logits.cast<Wide>();
    const std::vector<Wide> wide_v(overlaps.begin(), overlaps.end());
    auto loss_at = [&](const MatrixX<Wide>& o) {
      return loss_forward(softmax_rows(o), std::span<const ClassId>(labels), std::span<const Wide>(wide_v), cfg).total;
    };
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        MatrixX<Wide> plus = wide, minus = wide;
        plus(r, c) += static_cast<Wide>(tol.step);
        minus(r, c) -= static_cast<Wide>(tol.step);
        const auto numeric = static_cast<double>((loss_at(plus) - loss_at(minus)) / (2 * static_cast<Wide>(tol.step)));
        std::ostringstream where;
        where << "trial " << trial << " O(" << r << ',' << c << ") alpha=" << cfg.alpha << " lambda=" << cfg.lambda;
        record(report, analytic(r, c), numeric, tol, where.str());
      }
    }
    ++report.trials;
  }
  return report;
}

GradCheckReport check_network_gradients(const Architecture& arch, int trials, std::uint64_t seed, int probes,
                                        const GradCheckTolerance& tol) {
  Rng rng(seed);
  GradCheckReport report;
  const int classes = arch.num_outputs();
  for (int trial = 0; trial < trials; ++trial) {
    ModelParams params = init_params(arch, rng.next());
    // Nonzero biases so ReLU and pooling see generic inputs.
    for (auto& l : params.layers) {
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.1, 0.1);
    }
    std::vector<TrainingExample> batch(3);
    for (auto& ex : batch) {
      ex.input = InputTensor(arch.input.channels, arch.input.frames, arch.input.height, arch.input.width);
      for (Eigen::Index i = 0; i < ex.input.size(); ++i) ex.input.data()[i] = rng.uniform(-1.0, 1.0);
      ex.label = static_cast<ClassId>(rng.uniform_int(0, classes - 1));
      ex.overlap = rng.uniform(0.3, 1.0);
    }
    const LossConfig loss{.lambda = 1.0, .alpha = 0.5, .mode = LossMode::combined};

    Gradients grads;
    loss_and_gradients(params, batch, loss, &grads);
    auto total = [&] { return loss_and_gradients(params, batch, loss, nullptr).total; };

    auto probe = [&](double* data, const double* grad, Eigen::Index size, const std::string& label) {
      const Eigen::Index count = std::min<Eigen::Index>(size, probes);
      for (Eigen::Index p = 0; p < count; ++p) {
        const Eigen::Index idx = size <= probes ? p : static_cast<Eigen::Index>(rng.uniform_int(0, size - 1));
        const double saved = data[idx];
        data[idx] = saved + tol.step;
        const double up = total();
        data[idx] = saved - tol.step;
        const double down = total();
        data[idx] = saved;
        std::ostringstream where;
        where << "trial " << trial << ' ' << label << '[' << idx << ']';
        record(report, grad[idx], (up - down) / (2.0 * tol.step), tol, where.str());
      }
    };
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
      auto& l = params.layers[li];
      const std::string name = "layer " + std::to_string(li);
      probe(l.weight.data(), grads[li].weight.data(), l.weight.size(), name + " weight");
      probe(l.bias.data(), grads[li].bias.data(), l.bias.size(), name + " bias");
    }

    // Input gradient of the first sample.
    ForwardCache cache;
    std::vector<ClassId> labels;
    std::vector<double> overlaps;
    Matrix logits(static_cast<Eigen::Index>(batch.size()), classes);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      logits.row(static_cast<Eigen::Index>(s)) = forward(params, batch[s].input).logits.transpose();
      labels.push_back(batch[s].label);
      overlaps.push_back(batch[s].overlap);
    }
    const Matrix dlogits = loss_backward(logits, std::span<const ClassId>(labels), std::span<const double>(overlaps), loss);
    forward(params, batch[0].input, &cache);
    Gradients scratch;
    Vector input_grad;
    backward(params, cache, dlogits.row(0).transpose(), scratch, &input_grad);
    probe(batch[0].input.data(), input_grad.data(), batch[0].input.size(), "input");
    ++report.trials;
  }
  return report;
}

}  // namespace scnn
