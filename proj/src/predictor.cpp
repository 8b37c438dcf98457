#include "iccl/predictor.hpp"

#include <algorithm>

#include "iccl/error.hpp"

namespace iccl {

BigramCounter::BigramCounter(const BigramConfig& config) : config_(config) {
  if (config_.n_states < 2) throw InvalidArgument("BigramCounter: n_states must be >= 2");
  if (!(config_.alpha > 0.0)) throw InvalidArgument("BigramCounter: alpha must be positive");
  if (!(config_.decay > 0.0 && config_.decay <= 1.0)) throw InvalidArgument("BigramCounter: decay must lie in (0, 1]");
  reset();
}

void BigramCounter::reset() {
  counts_.assign(static_cast<std::size_t>(config_.n_states) * config_.n_states, 0.0);
}

void BigramCounter::observe(const Observation& obs) {
  const int n = config_.n_states;
  if (obs.x < 0 || obs.x >= n || obs.y < 0 || obs.y >= n) throw InvalidArgument("BigramCounter: state out of range");
  if (config_.decay != 1.0)
    for (double& c : counts_) c *= config_.decay;
  if (config_.identifier_aware && obs.label_present && obs.role != SegmentRole::Target) return;
  counts_[static_cast<std::size_t>(obs.x) * n + obs.y] += 1.0;
}

Distribution BigramCounter::predict(StateIndex x) const {
  const int n = config_.n_states;
  if (x < 0 || x >= n) throw InvalidArgument("BigramCounter: state out of range");
  const double* row = counts_.data() + static_cast<std::size_t>(x) * n;
  double total = config_.alpha * n;
  for (int y = 0; y < n; ++y) total += row[y];
  std::vector<double> p(static_cast<std::size_t>(n));
  for (int y = 0; y < n; ++y) p[y] = (row[y] + config_.alpha) / total;
  return Distribution(std::move(p));
}

GbclPredictor::GbclPredictor(const gbcl::TrainerConfig& config, std::uint64_t seed) : trainer_(config, seed) {}

void GbclPredictor::observe(const Observation& obs) {
  trainer_.observe({obs.x, obs.label_present ? obs.task_id : 0, obs.y});
}

namespace {

class OraclePredictor final : public SequentialPredictor {
 public:
  explicit OraclePredictor(TaskSpec task) : task_(std::move(task)) {}
  void reset() override {}
  void observe(const Observation&) override {}
  Distribution predict(StateIndex x) const override { return Distribution(ground_truth_row(task_, x)); }
  int n_states() const override { return task_.n_states(); }

 private:
  TaskSpec task_;
};

double score(const SequentialPredictor& predictor, const TaskSpec& target, PredictionMode mode) {
  if (predictor.n_states() != target.n_states()) throw InvalidArgument("evaluate: predictor state count differs from target");
  std::vector<std::pair<StateIndex, Distribution>> preds;
  preds.reserve(static_cast<std::size_t>(target.n_states()));
  for (StateIndex x = 0; x < target.n_states(); ++x) {
    auto d = predictor.predict(x);
    if (mode == PredictionMode::Greedy) d = one_hot(d.argmax(), target.n_states());
    preds.emplace_back(x, std::move(d));
  }
  return retention(preds, target);
}

void feed(SequentialPredictor& predictor, const Segment& segment, bool with_identifiers, std::size_t count) {
  const auto& states = segment.trajectory.states;
  for (std::size_t i = 0; i < count; ++i)
    predictor.observe({states[i], states[i + 1], segment.task_id, segment.role, with_identifiers});
}

}  // namespace

std::unique_ptr<SequentialPredictor> make_oracle_predictor(const TaskSpec& target) {
  return std::make_unique<OraclePredictor>(target);
}

double evaluate_predictor(SequentialPredictor& predictor, const HistoricalSequence& sequence, const TaskSpec& target,
                          PredictionMode mode) {
  predictor.reset();
  for (const auto& segment : sequence.segments)
    feed(predictor, segment, sequence.with_identifiers, segment.trajectory.length());
  return score(predictor, target, mode);
}

std::vector<double> evaluate_predictor_curve(SequentialPredictor& predictor, const HistoricalSequence& sequence,
                                             const TaskSpec& target, std::span<const int> phi_d_grid,
                                             PredictionMode mode) {
  if (phi_d_grid.empty()) throw InvalidArgument("evaluate_predictor_curve: empty grid");
  std::size_t distractor_len = 0;
  const Segment* distractor = nullptr;
  if (!sequence.segments.empty() && sequence.segments.back().role == SegmentRole::Distractor) {
    distractor = &sequence.segments.back();
    distractor_len = distractor->trajectory.length();
  }
  std::vector<std::size_t> order(phi_d_grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (phi_d_grid[i] < 0 || static_cast<std::size_t>(phi_d_grid[i]) > distractor_len)
      throw InvalidArgument("evaluate_predictor_curve: distractor shorter than requested phi_d");
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return phi_d_grid[a] < phi_d_grid[b]; });

  predictor.reset();
  for (const auto& segment : sequence.segments)
    if (&segment != distractor) feed(predictor, segment, sequence.with_identifiers, segment.trajectory.length());

  std::vector<double> out(phi_d_grid.size());
  std::size_t fed = 0;
  for (std::size_t idx : order) {
    const auto want = static_cast<std::size_t>(phi_d_grid[idx]);
    if (want > fed) {
      const auto& states = distractor->trajectory.states;
      for (std::size_t i = fed; i < want; ++i)
        predictor.observe({states[i], states[i + 1], distractor->task_id, distractor->role, sequence.with_identifiers});
      fed = want;
    }
    out[idx] = score(predictor, target, mode);
  }
  return out;
}

HistoricalSequence with_distractor_length(const HistoricalSequence& sequence, int phi_d) {
  HistoricalSequence out = sequence;
  if (!out.segments.empty() && out.segments.back().role == SegmentRole::Distractor) {
    if (phi_d == 0) {
      out.segments.pop_back();
    } else {
      auto& states = out.segments.back().trajectory.states;
      if (static_cast<std::size_t>(phi_d) + 1 > states.size())
        throw InvalidArgument("with_distractor_length: distractor too short");
      states.resize(static_cast<std::size_t>(phi_d) + 1);
    }
  } else if (phi_d != 0) {
    throw InvalidArgument("with_distractor_length: sequence has no distractor");
  }
  return out;
}

}  // namespace iccl
