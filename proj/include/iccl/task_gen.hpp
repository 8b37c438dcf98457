#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace iccl {

using StateIndex = int;

inline constexpr const char* kTargetLabel = "TARGET_TASK";
inline constexpr const char* kInterferenceLabel = "INTERFERENCE_TASK";

/// A discrete Markov-chain task with a row-stochastic transition matrix.
/// Immutable after construction.
class TaskSpec {
 public:
  /// Validates shape and row-stochasticity (rows sum to 1 within 1e-12).
  TaskSpec(int task_id, std::string label, std::uint64_t seed, int n_states, std::vector<double> transition);

  int task_id() const noexcept { return task_id_; }
  const std::string& label() const noexcept { return label_; }
  int n_states() const noexcept { return n_states_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<const double> row(StateIndex x) const {
    return {transition_.data() + static_cast<std::size_t>(x) * n_states_, static_cast<std::size_t>(n_states_)};
  }
  double prob(StateIndex x, StateIndex y) const { return transition_[static_cast<std::size_t>(x) * n_states_ + y]; }

  /// Row-major n_states x n_states matrix.
  const std::vector<double>& transition() const noexcept { return transition_; }

  bool operator==(const TaskSpec&) const = default;

 private:
  int task_id_;
  std::string label_;
  std::uint64_t seed_;
  int n_states_;
  std::vector<double> transition_;
};

struct GenerateOptions {
  /// Minimum entry per row, applied by mixing each row with uniform. 0 disables.
  double min_entry = 0.0;
};

/// Rows are independent flat-Dirichlet draws from Rng(seed). Throws
/// InvalidArgument when n_states < 2.
TaskSpec generate_task(int n_states, int task_id, std::string label, std::uint64_t seed,
                       const GenerateOptions& options = {});

/// A sampled run of states; states.size() == transitions + 1.
struct Trajectory {
  int task_id = 0;
  std::vector<StateIndex> states;

  std::size_t length() const noexcept { return states.empty() ? 0 : states.size() - 1; }
  bool operator==(const Trajectory&) const = default;
};

/// Samples `length` transitions. The initial state is uniform unless
/// `initial_state` is given. Sampling is sequential, so a shorter segment
/// drawn with the same seed is a prefix of a longer one.
Trajectory sample_segment(const TaskSpec& task, int length, std::uint64_t rng_seed,
                          std::optional<StateIndex> initial_state = std::nullopt);

/// Copy of row x of the transition matrix.
std::vector<double> ground_truth_row(const TaskSpec& task, StateIndex x);

void to_json(nlohmann::json& j, const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);

}  // namespace iccl
