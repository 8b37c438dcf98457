#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "iccl/metric.hpp"
#include "iccl/rng.hpp"
#include "iccl/schedule.hpp"

namespace iccl::gbcl {

/// Layer sizes of the predictive model. Embeddings are d/2 wide each.
struct MlpShape {
  int n_states = 4;
  int n_tasks = 2;
  int embed_dim = 64;  ///< d; state and task embeddings are d/2 each
  int hidden1 = 64;
  int hidden2 = 64;

  int half() const noexcept { return embed_dim / 2; }
  bool operator==(const MlpShape&) const = default;
};

/// One contiguous tensor inside the flat parameter vector.
struct TensorView {
  const char* name;
  std::size_t offset;
  int rows;
  int cols;
  std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * cols; }
};

/// Parameters stored as one flat vector so that gradients, Fisher
/// diagonals and EWC anchors share the same layout. Weight matrices are
/// row-major (in x out); an embedding table is (vocab x d/2).
class MlpParams {
 public:
  explicit MlpParams(const MlpShape& shape);

  const MlpShape& shape() const noexcept { return shape_; }
  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  /// state_embedding, task_embedding, w1, b1, w2, b2, w_out, b_out.
  const std::vector<TensorView>& tensors() const noexcept { return tensors_; }
  const TensorView& tensor(std::string_view name) const;
  std::span<double> view(const TensorView& t) noexcept { return {data_.data() + t.offset, t.size()}; }
  std::span<const double> view(const TensorView& t) const noexcept { return {data_.data() + t.offset, t.size()}; }
  std::span<double> view(std::string_view name) { return view(tensor(name)); }
  std::span<const double> view(std::string_view name) const { return view(tensor(name)); }

  bool operator==(const MlpParams& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  MlpShape shape_;
  std::vector<TensorView> tensors_;
  std::vector<double> data_;
};

/// Xavier-uniform weights and embeddings, zero biases.
MlpParams init_params(int n_states, int n_tasks, std::uint64_t seed);
MlpParams init_params(const MlpShape& shape, std::uint64_t seed);

struct Sample {
  StateIndex x = 0;
  int task = 0;
  StateIndex y = 0;
  bool operator==(const Sample&) const = default;
};

/// Softmax over output logits for (x, task).
Distribution forward(const MlpParams& params, StateIndex x, int task);
std::vector<double> forward_logits(const MlpParams& params, StateIndex x, int task);

double cross_entropy(const MlpParams& params, const Sample& s);

/// Exact gradient of sum_i w_i CE_i / sum_i w_i. An empty weight span means
/// equal weights. Throws InvalidArgument on empty batch or non-positive total weight.
MlpParams grad_cross_entropy(const MlpParams& params, std::span<const Sample> batch,
                             std::span<const double> weights = {});

/// FIFO ring of past samples; reservoir replacement is available as an option.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 8000, bool reservoir = false);

  /// `rng` is only consumed in reservoir mode once the buffer is full.
  void push(const Sample& s, Rng& rng);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const Sample& operator[](std::size_t i) const { return items_[i]; }
  std::span<const Sample> items() const noexcept { return items_; }

 private:
  std::size_t capacity_;
  bool reservoir_;
  std::size_t cursor_ = 0;
  std::uint64_t seen_ = 0;
  std::vector<Sample> items_;
};

struct EwcState {
  std::vector<double> anchors;  ///< theta*, empty before the first consolidation
  std::vector<double> fisher;   ///< diagonal, accumulated additively
  double lambda = 700.0;
  int consolidations = 0;
};

/// (lambda / 2) sum_i F_i (theta_i - theta*_i)^2; 0 before any consolidation.
double ewc_penalty(const MlpParams& params, const EwcState& ewc);
/// lambda F (theta - theta*).
std::vector<double> ewc_penalty_grad(const MlpParams& params, const EwcState& ewc);

enum class TrainerKind { Sgd, Er, Ewc };
std::string_view to_string(TrainerKind kind);
TrainerKind trainer_kind_from_string(std::string_view s);

struct TrainerConfig {
  TrainerKind kind = TrainerKind::Sgd;
  double learning_rate = 1e-3;
  double replay_ratio = 0.5;
  int replay_batch = 32;
  std::size_t buffer_capacity = 8000;
  bool reservoir = false;
  double ewc_lambda = 700.0;
  MlpShape shape{};
};

/// Mutable state of one online learner. Single-threaded.
struct TrainerState {
  MlpParams params;
  ReplayBuffer buffer;
  EwcState ewc;
  Rng rng;

  TrainerState(const TrainerConfig& config, std::uint64_t seed);
};

/// theta <- theta - lr * grad CE(sample).
void step_sgd(TrainerState& state, const Sample& sample, double learning_rate = 1e-3);

/// Mixes the current-sample loss with a replay batch drawn with replacement.
/// Falls back to a plain SGD step while the buffer holds fewer than
/// `batch` items, and skips sampling entirely when ratio == 0. The sample
/// is pushed after the update.
void step_er(TrainerState& state, const Sample& sample, double learning_rate = 1e-3, double ratio = 0.5,
             int batch = 32);

/// SGD step on CE(sample) + EWC penalty.
void step_ewc(TrainerState& state, const Sample& sample, double learning_rate = 1e-3);

/// Empirical diagonal Fisher over `samples`, added to the running Fisher;
/// anchors are refreshed to the current parameters.
void consolidate(TrainerState& state, std::span<const Sample> samples);
std::vector<double> empirical_fisher(const MlpParams& params, std::span<const Sample> samples);

/// Online trainer that detects task-id changes in the sample stream and
/// consolidates (EWC) at every boundary with the finished segment.
class Trainer {
 public:
  Trainer(const TrainerConfig& config, std::uint64_t seed);

  void reset();
  void observe(const Sample& s);
  Distribution predict(StateIndex x, int task) const { return forward(state_.params, x, task); }

  const TrainerState& state() const noexcept { return state_; }
  const TrainerConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }

 private:
  TrainerConfig config_;
  std::uint64_t seed_;
  TrainerState state_;
  std::vector<Sample> segment_;
  std::size_t steps_ = 0;
};

/// Task input fed to the network: the segment's task id when identifiers
/// are present, else the constant 0.
int network_task_input(const Segment& segment, bool with_identifiers);

/// Feeds every transition of `sequence` to a fresh trainer in order.
Trainer train_on_sequence(const TrainerConfig& config, const HistoricalSequence& sequence, std::uint64_t seed);

void to_json(nlohmann::json& j, const MlpParams& params);
MlpParams params_from_json(const nlohmann::json& j);

}  // namespace iccl::gbcl
