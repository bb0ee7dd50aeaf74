#pragma once

#include "scnn/interval.hpp"
#include "scnn/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scnn {

enum class LossMode { softmax_only, combined };

struct LossConfig {
  double lambda = 1.0;
  double alpha = 0.25;
  LossMode mode = LossMode::combined;

  double effective_lambda() const { return mode == LossMode::combined ? lambda : 0.0; }
  std::vector<std::string> violations() const;
};

template <typename Scalar>
struct LossTerms {
  Scalar total{};
  Scalar softmax{};
  Scalar overlap{};
};

// Max-subtracted softmax of one logit vector.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  VectorX<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Row-wise softmax over an N x (K+1) logit matrix.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  MatrixX<typename Derived::Scalar> probs(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) probs.row(n) = softmax(logits.row(n).transpose()).transpose();
  return probs;
}

namespace detail {

template <typename Scalar>
void check_batch(Eigen::Index rows, Eigen::Index cols, std::span<const ClassId> labels,
                 std::span<const Scalar> overlaps) {
  if (rows == 0) throw std::invalid_argument("loss: empty batch");
  if (static_cast<std::size_t>(rows) != labels.size() || labels.size() != overlaps.size()) {
    throw std::invalid_argument("loss: batch size mismatch");
  }
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= cols) throw std::invalid_argument("loss: label out of range");
    if (labels[n] > 0 && !(overlaps[n] > Scalar(0) && overlaps[n] <= Scalar(1))) {
      throw std::invalid_argument("loss: positive sample needs overlap in (0, 1]");
    }
  }
}

}  // namespace detail

// Batch loss from softmax probabilities (one row per sample):
//   softmax part  (1/N) sum -log P[k]
//   overlap part  (1/N) sum 1/2 (P[k]^2 / v^alpha - 1) over positives
//   total         softmax + lambda * overlap
template <typename Derived>
LossTerms<typename Derived::Scalar> loss_forward(const Eigen::MatrixBase<Derived>& probs,
                                                 std::span<const ClassId> labels,
                                                 std::span<const typename Derived::Scalar> overlaps,
                                                 const LossConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  detail::check_batch<Scalar>(probs.rows(), probs.cols(), labels, overlaps);
  const auto n_inv = Scalar(1) / static_cast<Scalar>(probs.rows());
  const auto alpha = static_cast<Scalar>(cfg.alpha);
  const auto lambda = static_cast<Scalar>(cfg.effective_lambda());

  LossTerms<Scalar> out;
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    const auto k = labels[static_cast<std::size_t>(n)];
    const Scalar p = probs(n, k);
    // Clamp only inside the log.
    out.softmax -= std::log(std::max(p, Scalar(1e-12)));
    if (k > 0) {
      const Scalar v = overlaps[static_cast<std::size_t>(n)];
      out.overlap += Scalar(0.5) * (p * p / std::pow(v, alpha) - Scalar(1));
    }
  }
  out.softmax *= n_inv;
  out.overlap *= n_inv;
  out.total = lambda == Scalar(0) ? out.softmax : out.softmax + lambda * out.overlap;
  return out;
}

// dL/dO for every sample, computed from the logits.
template <typename Derived>
MatrixX<typename Derived::Scalar> loss_backward(const Eigen::MatrixBase<Derived>& logits,
                                                std::span<const ClassId> labels,
                                                std::span<const typename Derived::Scalar> overlaps,
                                                const LossConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  detail::check_batch<Scalar>(logits.rows(), logits.cols(), labels, overlaps);
  const auto n_inv = Scalar(1) / static_cast<Scalar>(logits.rows());
  const auto alpha = static_cast<Scalar>(cfg.alpha);
  const auto lambda = static_cast<Scalar>(cfg.effective_lambda());

  MatrixX<Scalar> grad = softmax_rows(logits);
  for (Eigen::Index n = 0; n < grad.rows(); ++n) {
    const auto k = labels[static_cast<std::size_t>(n)];
    const VectorX<Scalar> p = grad.row(n).transpose();
    grad(n, k) -= Scalar(1);
    if (k > 0 && lambda != Scalar(0)) {
      // d/dO_i of 1/2 P_k^2 / v^a is (P_k^2 / v^a) (delta_ik - P_i).
      const Scalar w = p(k) * p(k) / std::pow(overlaps[static_cast<std::size_t>(n)], alpha);
      VectorX<Scalar> d = -w * p;
      d(k) += w;
      grad.row(n) += lambda * d.transpose();
    }
    grad.row(n) *= n_inv;
  }
  return grad;
}

struct LossCurvePoint {
  double probability;
  double softmax;
  double overlap;
  double total;
};

// Single-positive loss as a function of the true-class probability, sampled at
// P = i / resolution for i = 1..resolution.
std::vector<LossCurvePoint> per_sample_loss_curve(double overlap, double alpha, double lambda, int resolution);

// Probability at the lowest total loss on the sampled curve.
double curve_argmin(std::span<const LossCurvePoint> curve);

// CSV: v,P,L_softmax,L_overlap,L
void write_loss_curves(const std::filesystem::path& path, std::span<const double> overlaps, double alpha,
                       double lambda, int resolution);

}  // namespace scnn
