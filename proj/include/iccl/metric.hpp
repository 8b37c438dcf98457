#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iccl/schedule.hpp"
#include "iccl/task_gen.hpp"

namespace iccl {

/// Probability vector over states. Entries are non-negative and sum to 1
/// within 1e-9; the constructor throws InvalidArgument otherwise.
class Distribution {
 public:
  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(int n_states);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  int argmax() const;

  bool operator==(const Distribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// Pseudo-mass added to every entry (then renormalized) before taking square roots.
inline constexpr double kBhattacharyyaSmoothing = 1e-9;

/// Bhattacharyya coefficient sum_y sqrt(p(y) q(y)) after smoothing both sides.
double bhattacharyya_coefficient(const Distribution& p, const Distribution& q,
                                 double epsilon = kBhattacharyyaSmoothing);

/// -ln of the Bhattacharyya coefficient. Throws InvalidArgument on length mismatch.
double bhattacharyya(const Distribution& p, const Distribution& q, double epsilon = kBhattacharyyaSmoothing);

/// Normalized performance, oriented so that a perfect match scores 1 and a
/// uniform prediction scores 0. Values below 0 mean worse than uniform and
/// are returned unclamped. Throws DegenerateReference when p_star is uniform.
double normalized_performance(const Distribution& p_hat, const Distribution& p_star);

/// The rescaled ratio with the opposite orientation (0 at a perfect match).
/// Equal to 1 - normalized_performance; kept for auditing.
double normalized_performance_literal(const Distribution& p_hat, const Distribution& p_star);

Distribution one_hot(StateIndex y, int n_states);

/// How the expectation over query states is weighted.
enum class StateWeighting { Uniform, Stationary };

/// Average of normalized_performance over every query state. `predictions`
/// must hold exactly one entry per state.
double retention(std::span<const std::pair<StateIndex, Distribution>> predictions, const TaskSpec& target,
                 StateWeighting weighting = StateWeighting::Uniform);

/// Stationary distribution of the task's chain by power iteration.
std::vector<double> stationary_distribution(const TaskSpec& task);

struct CurveSummary {
  double mean = 0.0;
  double ci95 = 0.0;  ///< half-width from the Student-t quantile with n-1 dof
  std::size_t n = 0;
};

/// Throws InsufficientSamples when fewer than 2 values.
CurveSummary aggregate(std::span<const double> values);

/// Two-sided 95% Student-t quantile t(0.975, dof).
double student_t975(double dof);

struct RetentionMeasurement {
  std::string method;
  int n_states = 0;
  ScheduleKind schedule = ScheduleKind::DP;
  bool with_identifiers = true;
  int phi = 0;
  int k = 0;
  int phi_i = 0;
  int phi_d = 0;
  long t_eval = 0;
  std::uint64_t seed = 0;
  double value = 0.0;
};

/// Unweighted mean of the values. Throws InvalidArgument when empty.
double average_retention(std::span<const RetentionMeasurement> curve);
double average_retention(std::span<const double> values);

/// Sample Pearson correlation. Throws InvalidArgument on length mismatch or
/// fewer than 2 points, UndefinedCorrelation on zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// One-sided exact sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n);

inline constexpr const char* kMeasurementCsvHeader =
    "method,n_states,schedule,with_identifiers,phi,K,phi_i,phi_d,t_eval,seed,retention";

/// CSV row without newline; floating point with 9 significant digits.
std::string to_csv_row(const RetentionMeasurement& m);
std::string format_real(double v);

/// Parses rows written by to_csv_row. Throws SchemaError when a required
/// column is missing.
std::vector<RetentionMeasurement> read_measurements_csv(const std::string& path);
std::vector<RetentionMeasurement> parse_measurements_csv(std::string_view text);

}  // namespace iccl
