#include "iccl/task_gen.hpp"

#include <cmath>

#include "iccl/error.hpp"
#include "iccl/rng.hpp"

namespace iccl {

TaskSpec::TaskSpec(int task_id, std::string label, std::uint64_t seed, int n_states, std::vector<double> transition)
    : task_id_(task_id), label_(std::move(label)), seed_(seed), n_states_(n_states), transition_(std::move(transition)) {
  if (n_states_ < 2) throw InvalidArgument("TaskSpec: n_states must be >= 2");
  if (transition_.size() != static_cast<std::size_t>(n_states_) * n_states_)
    throw InvalidArgument("TaskSpec: transition matrix must be n_states x n_states");
  for (int x = 0; x < n_states_; ++x) {
    double sum = 0.0;
    for (double p : row(x)) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("TaskSpec: transition entries must lie in [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("TaskSpec: transition rows must sum to 1");
  }
}

TaskSpec generate_task(int n_states, int task_id, std::string label, std::uint64_t seed,
                       const GenerateOptions& options) {
  if (n_states < 2) throw InvalidArgument("generate_task: n_states must be >= 2");
  const double uniform_weight = options.min_entry * n_states;
  if (options.min_entry < 0.0 || uniform_weight > 1.0)
    throw InvalidArgument("generate_task: min_entry must lie in [0, 1/n_states]");

  Rng rng(seed);
  std::vector<double> matrix(static_cast<std::size_t>(n_states) * n_states);
  for (int x = 0; x < n_states; ++x) {
    double* row = matrix.data() + static_cast<std::size_t>(x) * n_states;
    double sum = 0.0;
    for (int y = 0; y < n_states; ++y) {
      row[y] = rng.exponential();
      sum += row[y];
    }
    for (int y = 0; y < n_states; ++y) {
      row[y] /= sum;
      if (uniform_weight > 0.0) row[y] = (1.0 - uniform_weight) * row[y] + options.min_entry;
    }
    // Renormalize once more so rounding never pushes a row sum past 1e-12.
    double renorm = 0.0;
    for (int y = 0; y < n_states; ++y) renorm += row[y];
    for (int y = 0; y < n_states; ++y) row[y] /= renorm;
  }
  return TaskSpec(task_id, std::move(label), seed, n_states, std::move(matrix));
}

Trajectory sample_segment(const TaskSpec& task, int length, std::uint64_t rng_seed,
                          std::optional<StateIndex> initial_state) {
  if (length < 1) throw InvalidArgument("sample_segment: length must be >= 1");
  Rng rng(rng_seed);
  Trajectory traj;
  traj.task_id = task.task_id();
  traj.states.reserve(static_cast<std::size_t>(length) + 1);
  StateIndex state;
  if (initial_state) {
    if (*initial_state < 0 || *initial_state >= task.n_states())
      throw InvalidArgument("sample_segment: initial state out of range");
    state = *initial_state;
  } else {
    state = static_cast<StateIndex>(rng.below(static_cast<std::uint64_t>(task.n_states())));
  }
  traj.states.push_back(state);
  for (int i = 0; i < length; ++i) {
    state = static_cast<StateIndex>(rng.categorical(task.row(state)));
    traj.states.push_back(state);
  }
  return traj;
}

std::vector<double> ground_truth_row(const TaskSpec& task, StateIndex x) {
  if (x < 0 || x >= task.n_states()) throw InvalidArgument("ground_truth_row: state out of range");
  auto r = task.row(x);
  return {r.begin(), r.end()};
}

void to_json(nlohmann::json& j, const TaskSpec& task) {
  nlohmann::json rows = nlohmann::json::array();
  for (int x = 0; x < task.n_states(); ++x) {
    auto r = task.row(x);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j = nlohmann::json{{"task_id", task.task_id()},
                     {"label", task.label()},
                     {"n_states", task.n_states()},
                     {"seed", task.seed()},
                     {"transition", std::move(rows)}};
}

TaskSpec task_from_json(const nlohmann::json& j) {
  const int n = j.at("n_states").get<int>();
  const auto& rows = j.at("transition");
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(n))
    throw InvalidArgument("task_from_json: transition must have n_states rows");
  std::vector<double> matrix;
  matrix.reserve(static_cast<std::size_t>(n) * n);
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(n))
      throw InvalidArgument("task_from_json: transition rows must have n_states entries");
    for (const auto& v : row) matrix.push_back(v.get<double>());
  }
  return TaskSpec(j.at("task_id").get<int>(), j.at("label").get<std::string>(), j.at("seed").get<std::uint64_t>(), n,
                  std::move(matrix));
}

}  // namespace iccl
