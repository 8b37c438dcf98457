#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iccl/gbcl.hpp"
#include "iccl/metric.hpp"
#include "iccl/schedule.hpp"

namespace iccl {

/// One observed transition together with where it came from.
struct Observation {
  StateIndex x = 0;
  StateIndex y = 0;
  int task_id = 0;
  SegmentRole role = SegmentRole::Target;
  bool label_present = true;
};

enum class PredictionMode { Distribution, Greedy };

/// Sequential predictor fed one transition at a time. `predict` must not
/// change what has been observed.
class SequentialPredictor {
 public:
  virtual ~SequentialPredictor() = default;
  virtual void reset() = 0;
  virtual void observe(const Observation& obs) = 0;
  virtual Distribution predict(StateIndex x) const = 0;
  virtual int n_states() const = 0;
};

struct BigramConfig {
  int n_states = 4;
  double alpha = 1.0;
  /// Multiplicative decay applied to every count before each observation; 1 disables.
  double decay = 1.0;
  /// Count only target-segment transitions when labels are present.
  bool identifier_aware = false;
};

/// Laplace-smoothed transition counter; a deterministic in-context stand-in.
class BigramCounter final : public SequentialPredictor {
 public:
  explicit BigramCounter(const BigramConfig& config);

  void reset() override;
  void observe(const Observation& obs) override;
  Distribution predict(StateIndex x) const override;
  int n_states() const override { return config_.n_states; }

  double count(StateIndex x, StateIndex y) const { return counts_[static_cast<std::size_t>(x) * config_.n_states + y]; }
  const BigramConfig& config() const noexcept { return config_; }

 private:
  BigramConfig config_;
  std::vector<double> counts_;
};

/// Adapter running a gradient-based learner behind the predictor contract.
/// Queries use the target's network task input (0).
class GbclPredictor final : public SequentialPredictor {
 public:
  GbclPredictor(const gbcl::TrainerConfig& config, std::uint64_t seed);

  void reset() override { trainer_.reset(); }
  void observe(const Observation& obs) override;
  Distribution predict(StateIndex x) const override { return trainer_.predict(x, 0); }
  int n_states() const override { return trainer_.config().shape.n_states; }

  const gbcl::Trainer& trainer() const noexcept { return trainer_; }

 private:
  gbcl::Trainer trainer_;
};

/// Returns a predictor that reports the task's true rows (reference ceiling).
std::unique_ptr<SequentialPredictor> make_oracle_predictor(const TaskSpec& target);

/// Feeds every transition of `sequence` in order after reset(), then
/// queries every state and returns metric retention.
double evaluate_predictor(SequentialPredictor& predictor, const HistoricalSequence& sequence, const TaskSpec& target,
                          PredictionMode mode = PredictionMode::Distribution);

/// Evaluates one sequence at several distractor lengths in a single pass.
/// `sequence` must end with a distractor of at least max(phi_d_grid)
/// transitions (or carry none when the grid is {0}). Because distractor
/// sampling is prefix-consistent, each value equals evaluate_predictor on
/// the sequence built with that phi_d.
std::vector<double> evaluate_predictor_curve(SequentialPredictor& predictor, const HistoricalSequence& sequence,
                                             const TaskSpec& target, std::span<const int> phi_d_grid,
                                             PredictionMode mode = PredictionMode::Distribution);

/// Truncates or drops the trailing distractor so that it holds phi_d transitions.
HistoricalSequence with_distractor_length(const HistoricalSequence& sequence, int phi_d);

}  // namespace iccl
