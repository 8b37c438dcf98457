#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "iccl/schedule.hpp"

namespace iccl::actr {

/// Decay d, activation noise s, time scaling kappa, retrieval threshold gamma.
struct ActrParams {
  double d = 0.5;
  double s = 0.32;
  double kappa = 1.0;
  double gamma = -0.5;

  bool operator==(const ActrParams&) const = default;
};

struct ParamBounds {
  std::array<double, 4> lower{0.01, 0.01, 0.01, -5.0};
  std::array<double, 4> upper{1.0, 2.0, 10.0, 5.0};
};

/// w(t) = ln sum_i [kappa (t - t_i)]^-d. Throws InvalidArgument unless t is
/// strictly after every practice time and kappa > 0.
double activation(const ActrParams& params, const PracticeSchedule& practice, double t);

/// Logistic retrieval probability 1 / (1 + exp(-(w - gamma) / s)).
double retention_hat(const ActrParams& params, const PracticeSchedule& practice, double t);
double retention_from_activation(double w, double gamma, double s);

/// Human reference means and standard deviations for (d, s, gamma).
struct HumanReference {
  std::array<double, 3> mu{0.50, 0.32, -0.50};
  std::array<double, 3> sigma{0.05, 0.08, 0.71};

  /// Diagonal of the covariance under the independence approximation.
  std::array<double, 3> covariance_diagonal() const;
};

HumanReference default_human_reference();
/// Reads `{"version":..,"parameters":{"d":{"mu":..,"sigma":..},..}}`.
HumanReference human_reference_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HumanReference& ref);

/// Squared diagonal Mahalanobis distance of [d, s, gamma] from the reference.
double hrs_md(std::span<const double, 3> theta_hat, const HumanReference& reference = {});
double hrs_md(const ActrParams& params, const HumanReference& reference = {});
/// exp(-D^2 / 2).
double hrs_score(double d_squared);

/// One measured retention curve: practice schedule plus (t_eval, R) points.
struct CurveData {
  PracticeSchedule practice;
  std::vector<std::pair<double, double>> points;
  std::string tag;
};

struct FitOptions {
  int starts = 32;
  int max_iterations = 2000;
  double diameter_tol = 1e-8;
  std::uint64_t seed = 0x5EEDF17ULL;
  ParamBounds bounds{};
  /// Map the result to kappa = 1 along the exact (kappa, gamma) symmetry of the model.
  bool canonical_kappa = true;
};

struct FitResult {
  ActrParams params;
  double mse = 0.0;
  /// Per-curve correlation between measured and fitted values; empty when undefined.
  std::vector<std::optional<double>> per_curve_pearson;
  int starts_tried = 0;
  std::size_t n_points = 0;
};

/// Pooled mean squared error of one shared parameter set over all curves.
double pooled_mse(const ActrParams& params, std::span<const CurveData> curves);

/// Multi-start Nelder-Mead fit from Latin-hypercube starts inside the bounds.
/// Throws InvalidArgument with fewer than 4 points or a point not strictly
/// after its schedule's last practice.
FitResult fit(std::span<const CurveData> curves, const FitOptions& options = {});

/// Moves (kappa, gamma) along the invariant direction gamma + d ln kappa = const
/// so that kappa = 1 when the bounds allow it, otherwise as close as possible.
ActrParams canonicalize(const ActrParams& params, const ParamBounds& bounds = {});

/// Latin-hypercube sample of `n` points in [0,1]^dim.
std::vector<std::vector<double>> latin_hypercube(int n, int dim, std::uint64_t seed);

nlohmann::json to_json(const FitResult& r, const std::string& method, const HumanReference& reference = {});

}  // namespace iccl::actr
