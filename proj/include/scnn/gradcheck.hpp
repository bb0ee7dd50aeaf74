#pragma once

#include "scnn/loss.hpp"
#include "scnn/tinynet.hpp"

#include <cstdint>
#include <string>

namespace scnn {

// Central finite-difference checks of the analytic gradients. The loss check
// differentiates loss_forward evaluated in long double, independently of
// loss_backward; the network check differentiates the full batch loss through
// the forward pass.

struct GradCheckTolerance {
  double step = 1e-5;
  double relative = 1e-5;
  double absolute = 1e-8;       // accepted instead of `relative` for tiny gradients
  double tiny_gradient = 1e-6;  // magnitude below which `absolute` applies
};

struct GradCheckReport {
  int trials = 0;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  int failures = 0;
  std::string worst;  // description of the worst coordinate

  bool passed() const { return trials > 0 && failures == 0; }
};

// Random batches: N <= 8, K <= 4, logits ~ U(-2, 2), v in (0, 1],
// alpha in {0.25, 0.5, 1}, lambda in {0, 0.5, 1}.
GradCheckReport check_loss_gradients(int trials, std::uint64_t seed, const GradCheckTolerance& tol = {});

// Parameter (and input) gradients of the combined loss through `arch`, probing up
// to `probes` random coordinates per tensor.
GradCheckReport check_network_gradients(const Architecture& arch, int trials, std::uint64_t seed, int probes = 50,
                                        const GradCheckTolerance& tol = {.step = 1e-5, .relative = 1e-4});

}  // namespace scnn
