#pragma once

#include <functional>
#include <span>
#include <vector>

namespace iccl {

struct NelderMeadOptions {
  /// Stop when the largest vertex distance from the best vertex (inf-norm) falls below this.
  double diameter_tol = 1e-8;
  int max_iterations = 2000;
  /// Initial simplex edge length, per coordinate.
  double initial_step = 0.1;
  /// Optional box; empty means unconstrained. Trial points are projected onto it.
  std::vector<double> lower;
  std::vector<double> upper;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Downhill simplex with standard coefficients (reflect 1, expand 2,
/// contract 0.5, shrink 0.5).
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective,
                             std::vector<double> start, const NelderMeadOptions& options = {});

}  // namespace iccl
