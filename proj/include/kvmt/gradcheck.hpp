#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kvmt {

struct GradParam {
  std::string name;
  std::vector<double>* values;
  const std::vector<double>* grad;  // analytic gradient, same length as values
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Coordinates checked per group; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central finite differences against analytic gradients.
/// rel = |a − n| / max(1e-8, |a| + |n|). Throws on a non-finite loss.
GradCheckResult grad_check(const std::function<double()>& loss_fn, const std::vector<GradParam>& params,
                           const GradCheckOptions& options = {});

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  std::string worst;  // coordinate with the largest error, e.g. "W_f[17]"
  bool passed() const { return max_rel_err < tolerance; }
};

/// Checks every hand-written backward pass: mt_loss, mse_loss, nca_loss (raw, normalised
/// and through Q_proj), attend_values, gate_fuse, and the full combined training loss.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed);

}  // namespace kvmt
