#include "iccl/gbcl.hpp"

#include <algorithm>
#include <cmath>

#include "iccl/error.hpp"

namespace iccl::gbcl {

MlpParams::MlpParams(const MlpShape& shape) : shape_(shape) {
  if (shape.n_states < 2 || shape.n_tasks < 1 || shape.embed_dim < 2 || shape.embed_dim % 2 != 0 ||
      shape.hidden1 < 1 || shape.hidden2 < 1)
    throw InvalidArgument("MlpParams: invalid shape");
  std::size_t offset = 0;
  auto add = [&](const char* name, int rows, int cols) {
    tensors_.push_back({name, offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
  };
  add("state_embedding", shape.n_states, shape.half());
  add("task_embedding", shape.n_tasks, shape.half());
  add("w1", shape.embed_dim, shape.hidden1);
  add("b1", 1, shape.hidden1);
  add("w2", shape.hidden1, shape.hidden2);
  add("b2", 1, shape.hidden2);
  add("w_out", shape.hidden2, shape.n_states);
  add("b_out", 1, shape.n_states);
  data_.assign(offset, 0.0);
}

const TensorView& MlpParams::tensor(std::string_view name) const {
  for (const auto& t : tensors_)
    if (name == t.name) return t;
  throw InvalidArgument("MlpParams: no tensor named " + std::string(name));
}

MlpParams init_params(int n_states, int n_tasks, std::uint64_t seed) {
  MlpShape shape;
  shape.n_states = n_states;
  shape.n_tasks = n_tasks;
  return init_params(shape, seed);
}

MlpParams init_params(const MlpShape& shape, std::uint64_t seed) {
  MlpParams params(shape);
  Rng rng(seed);
  for (const auto& t : params.tensors()) {
    if (t.name[0] == 'b') continue;  // biases stay zero
    const double bound = std::sqrt(6.0 / (t.rows + t.cols));
    for (double& v : params.view(t)) v = rng.uniform(-bound, bound);
  }
  return params;
}

namespace {

struct Activations {
  std::vector<double> input, z1, a1, z2, a2, logits, probs;
};

void check_indices(const MlpShape& shape, StateIndex x, int task) {
  if (x < 0 || x >= shape.n_states) throw InvalidArgument("gbcl: state index out of range");
  if (task < 0 || task >= shape.n_tasks) throw InvalidArgument("gbcl: task index out of range");
}

// out[j] = b[j] + sum_i in[i] * w[i][j]
void affine(std::span<const double> in, std::span<const double> w, std::span<const double> b,
            std::vector<double>& out) {
  const std::size_t n_out = b.size();
  out.assign(b.begin(), b.end());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (v == 0.0) continue;
    const double* row = w.data() + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) out[j] += v * row[j];
  }
}

void run_forward(const MlpParams& p, StateIndex x, int task, Activations& act) {
  const auto& shape = p.shape();
  check_indices(shape, x, task);
  const std::size_t half = static_cast<std::size_t>(shape.half());
  act.input.resize(2 * half);
  auto se = p.view("state_embedding");
  auto te = p.view("task_embedding");
  std::copy_n(se.begin() + static_cast<std::ptrdiff_t>(x * half), half, act.input.begin());
  std::copy_n(te.begin() + static_cast<std::ptrdiff_t>(task * half), half, act.input.begin() + static_cast<std::ptrdiff_t>(half));

  affine(act.input, p.view("w1"), p.view("b1"), act.z1);
  act.a1.resize(act.z1.size());
  for (std::size_t i = 0; i < act.z1.size(); ++i) act.a1[i] = std::max(0.0, act.z1[i]);
  affine(act.a1, p.view("w2"), p.view("b2"), act.z2);
  act.a2.resize(act.z2.size());
  for (std::size_t i = 0; i < act.z2.size(); ++i) act.a2[i] = std::max(0.0, act.z2[i]);
  affine(act.a2, p.view("w_out"), p.view("b_out"), act.logits);

  const double mx = *std::max_element(act.logits.begin(), act.logits.end());
  act.probs.resize(act.logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < act.logits.size(); ++k) {
    act.probs[k] = std::exp(act.logits[k] - mx);
    z += act.probs[k];
  }
  for (double& v : act.probs) v /= z;
}

// Accumulates scale * d(-log p(y))/d(theta) into grad.
void run_backward(const MlpParams& p, const Activations& act, StateIndex x, int task, StateIndex y, double scale,
                  MlpParams& grad) {
  const std::size_t n_out = act.probs.size();
  const std::size_t h1 = act.a1.size();
  const std::size_t h2 = act.a2.size();
  const std::size_t din = act.input.size();
  const std::size_t half = din / 2;

  std::vector<double> dlogits(n_out);
  for (std::size_t k = 0; k < n_out; ++k) dlogits[k] = scale * (act.probs[k] - (static_cast<int>(k) == y ? 1.0 : 0.0));

  auto g_bout = grad.view("b_out");
  auto g_wout = grad.view("w_out");
  auto w_out = p.view("w_out");
  std::vector<double> dz2(h2, 0.0);
  for (std::size_t k = 0; k < n_out; ++k) g_bout[k] += dlogits[k];
  for (std::size_t j = 0; j < h2; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n_out; ++k) {
      g_wout[j * n_out + k] += act.a2[j] * dlogits[k];
      acc += w_out[j * n_out + k] * dlogits[k];
    }
    dz2[j] = act.z2[j] > 0.0 ? acc : 0.0;
  }

  auto g_b2 = grad.view("b2");
  auto g_w2 = grad.view("w2");
  auto w2 = p.view("w2");
  std::vector<double> dz1(h1, 0.0);
  for (std::size_t j = 0; j < h2; ++j) g_b2[j] += dz2[j];
  for (std::size_t i = 0; i < h1; ++i) {
    const double a = act.a1[i];
    double acc = 0.0;
    const double* wrow = w2.data() + i * h2;
    double* grow = g_w2.data() + i * h2;
    for (std::size_t j = 0; j < h2; ++j) {
      grow[j] += a * dz2[j];
      acc += wrow[j] * dz2[j];
    }
    dz1[i] = act.z1[i] > 0.0 ? acc : 0.0;
  }

  auto g_b1 = grad.view("b1");
  auto g_w1 = grad.view("w1");
  auto w1 = p.view("w1");
  std::vector<double> dinput(din, 0.0);
  for (std::size_t j = 0; j < h1; ++j) g_b1[j] += dz1[j];
  for (std::size_t i = 0; i < din; ++i) {
    const double a = act.input[i];
    double acc = 0.0;
    const double* wrow = w1.data() + i * h1;
    double* grow = g_w1.data() + i * h1;
    for (std::size_t j = 0; j < h1; ++j) {
      grow[j] += a * dz1[j];
      acc += wrow[j] * dz1[j];
    }
    dinput[i] = acc;
  }

  auto g_se = grad.view("state_embedding");
  auto g_te = grad.view("task_embedding");
  for (std::size_t i = 0; i < half; ++i) {
    g_se[static_cast<std::size_t>(x) * half + i] += dinput[i];
    g_te[static_cast<std::size_t>(task) * half + i] += dinput[half + i];
  }
}

}  // namespace

std::vector<double> forward_logits(const MlpParams& params, StateIndex x, int task) {
  Activations act;
  run_forward(params, x, task, act);
  return act.logits;
}

Distribution forward(const MlpParams& params, StateIndex x, int task) {
  Activations act;
  run_forward(params, x, task, act);
  return Distribution(std::move(act.probs));
}

double cross_entropy(const MlpParams& params, const Sample& s) {
  if (s.y < 0 || s.y >= params.shape().n_states) throw InvalidArgument("gbcl: target index out of range");
  Activations act;
  run_forward(params, s.x, s.task, act);
  const double mx = *std::max_element(act.logits.begin(), act.logits.end());
  double z = 0.0;
  for (double l : act.logits) z += std::exp(l - mx);
  return -(act.logits[static_cast<std::size_t>(s.y)] - mx - std::log(z));
}

MlpParams grad_cross_entropy(const MlpParams& params, std::span<const Sample> batch, std::span<const double> weights) {
  if (batch.empty()) throw InvalidArgument("grad_cross_entropy: empty batch");
  if (!weights.empty() && weights.size() != batch.size())
    throw InvalidArgument("grad_cross_entropy: weights must match batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) total += weights.empty() ? 1.0 : weights[i];
  if (!(total > 0.0)) throw InvalidArgument("grad_cross_entropy: weights must sum to a positive value");

  MlpParams grad(params.shape());
  Activations act;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (s.y < 0 || s.y >= params.shape().n_states) throw InvalidArgument("gbcl: target index out of range");
    const double w = (weights.empty() ? 1.0 : weights[i]) / total;
    if (w == 0.0) continue;
    run_forward(params, s.x, s.task, act);
    run_backward(params, act, s.x, s.task, s.y, w, grad);
  }
  return grad;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, bool reservoir) : capacity_(capacity), reservoir_(reservoir) {
  if (capacity_ == 0) throw InvalidArgument("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(const Sample& s, Rng& rng) {
  ++seen_;
  if (items_.size() < capacity_) {
    items_.push_back(s);
    return;
  }
  if (reservoir_) {
    const std::uint64_t slot = rng.below(seen_);
    if (slot < capacity_) items_[slot] = s;
    return;
  }
  items_[cursor_] = s;
  cursor_ = (cursor_ + 1) % capacity_;
}

double ewc_penalty(const MlpParams& params, const EwcState& ewc) {
  if (ewc.anchors.empty()) return 0.0;
  const auto theta = params.flat();
  double acc = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - ewc.anchors[i];
    acc += ewc.fisher[i] * d * d;
  }
  return 0.5 * ewc.lambda * acc;
}

std::vector<double> ewc_penalty_grad(const MlpParams& params, const EwcState& ewc) {
  const auto theta = params.flat();
  std::vector<double> g(theta.size(), 0.0);
  if (ewc.anchors.empty()) return g;
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = ewc.lambda * ewc.fisher[i] * (theta[i] - ewc.anchors[i]);
  return g;
}

std::string_view to_string(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::Sgd: return "sgd";
    case TrainerKind::Er: return "er";
    case TrainerKind::Ewc: return "ewc";
  }
  return "?";
}

TrainerKind trainer_kind_from_string(std::string_view s) {
  if (s == "sgd") return TrainerKind::Sgd;
  if (s == "er") return TrainerKind::Er;
  if (s == "ewc") return TrainerKind::Ewc;
  throw ConfigError("unknown trainer kind: " + std::string(s));
}

namespace {
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kReplayStream = 2;
}  // namespace

TrainerState::TrainerState(const TrainerConfig& config, std::uint64_t seed)
    : params(init_params(config.shape, derive_seed(seed, {kInitStream}))),
      buffer(config.buffer_capacity, config.reservoir),
      rng(derive_seed(seed, {kReplayStream})) {
  ewc.lambda = config.ewc_lambda;
}

namespace {

void apply_update(MlpParams& params, const MlpParams& grad, double lr) {
  auto theta = params.flat();
  const auto g = grad.flat();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
}

}  // namespace

void step_sgd(TrainerState& state, const Sample& sample, double learning_rate) {
  const auto grad = grad_cross_entropy(state.params, std::span<const Sample>(&sample, 1));
  apply_update(state.params, grad, learning_rate);
}

void step_er(TrainerState& state, const Sample& sample, double learning_rate, double ratio, int batch) {
  if (ratio <= 0.0 || batch <= 0 || state.buffer.size() < static_cast<std::size_t>(batch)) {
    step_sgd(state, sample, learning_rate);
  } else {
    std::vector<Sample> mixed;
    std::vector<double> weights;
    mixed.reserve(static_cast<std::size_t>(batch) + 1);
    weights.reserve(static_cast<std::size_t>(batch) + 1);
    mixed.push_back(sample);
    weights.push_back(1.0 - ratio);
    for (int i = 0; i < batch; ++i) {
      mixed.push_back(state.buffer[state.rng.below(state.buffer.size())]);
      weights.push_back(ratio / batch);
    }
    apply_update(state.params, grad_cross_entropy(state.params, mixed, weights), learning_rate);
  }
  state.buffer.push(sample, state.rng);
}

void step_ewc(TrainerState& state, const Sample& sample, double learning_rate) {
  const auto grad = grad_cross_entropy(state.params, std::span<const Sample>(&sample, 1));
  if (state.ewc.anchors.empty()) {
    apply_update(state.params, grad, learning_rate);
    return;
  }
  // Cross-entropy term explicit, quadratic penalty implicit (proximal).
  auto theta = state.params.flat();
  const auto g = grad.flat();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double stiffness = learning_rate * state.ewc.lambda * state.ewc.fisher[i];
    theta[i] = (theta[i] - learning_rate * g[i] + stiffness * state.ewc.anchors[i]) / (1.0 + stiffness);
  }
}

std::vector<double> empirical_fisher(const MlpParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("consolidate: empty sample list");
  std::vector<double> fisher(params.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto g = grad_cross_entropy(params, std::span<const Sample>(&s, 1));
    const auto gf = g.flat();
    for (std::size_t i = 0; i < gf.size(); ++i) fisher[i] += gf[i] * gf[i] * inv_n;
  }
  return fisher;
}

void consolidate(TrainerState& state, std::span<const Sample> samples) {
  const auto fresh = empirical_fisher(state.params, samples);
  if (state.ewc.fisher.empty()) state.ewc.fisher.assign(fresh.size(), 0.0);
  for (std::size_t i = 0; i < fresh.size(); ++i) state.ewc.fisher[i] += fresh[i];
  const auto theta = state.params.flat();
  state.ewc.anchors.assign(theta.begin(), theta.end());
  ++state.ewc.consolidations;
}

Trainer::Trainer(const TrainerConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), state_(config, seed) {}

void Trainer::reset() {
  state_ = TrainerState(config_, seed_);
  segment_.clear();
  steps_ = 0;
}

void Trainer::observe(const Sample& s) {
  if (config_.kind == TrainerKind::Ewc && !segment_.empty() && segment_.back().task != s.task) {
    consolidate(state_, segment_);
    segment_.clear();
  }
  switch (config_.kind) {
    case TrainerKind::Sgd: step_sgd(state_, s, config_.learning_rate); break;
    case TrainerKind::Er:
      step_er(state_, s, config_.learning_rate, config_.replay_ratio, config_.replay_batch);
      break;
    case TrainerKind::Ewc: step_ewc(state_, s, config_.learning_rate); break;
  }
  if (config_.kind == TrainerKind::Ewc) segment_.push_back(s);
  ++steps_;
}

int network_task_input(const Segment& segment, bool with_identifiers) {
  return with_identifiers ? segment.task_id : 0;
}

Trainer train_on_sequence(const TrainerConfig& config, const HistoricalSequence& sequence, std::uint64_t seed) {
  Trainer trainer(config, seed);
  for (const auto& segment : sequence.segments) {
    const int task = network_task_input(segment, sequence.with_identifiers);
    const auto& states = segment.trajectory.states;
    for (std::size_t i = 0; i + 1 < states.size(); ++i) trainer.observe({states[i], task, states[i + 1]});
  }
  return trainer;
}

void to_json(nlohmann::json& j, const MlpParams& params) {
  const auto& s = params.shape();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    auto v = params.view(t);
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"data", std::vector<double>(v.begin(), v.end())}});
  }
  j = nlohmann::json{{"shape",
                      {{"n_states", s.n_states},
                       {"n_tasks", s.n_tasks},
                       {"embed_dim", s.embed_dim},
                       {"hidden1", s.hidden1},
                       {"hidden2", s.hidden2}}},
                     {"tensors", std::move(tensors)}};
}

MlpParams params_from_json(const nlohmann::json& j) {
  const auto& js = j.at("shape");
  MlpShape shape;
  shape.n_states = js.at("n_states").get<int>();
  shape.n_tasks = js.at("n_tasks").get<int>();
  shape.embed_dim = js.at("embed_dim").get<int>();
  shape.hidden1 = js.at("hidden1").get<int>();
  shape.hidden2 = js.at("hidden2").get<int>();
  MlpParams params(shape);
  for (const auto& jt : j.at("tensors")) {
    const auto& t = params.tensor(jt.at("name").get<std::string>());
    const auto data = jt.at("data").get<std::vector<double>>();
    if (jt.at("rows").get<int>() != t.rows || jt.at("cols").get<int>() != t.cols || data.size() != t.size())
      throw InvalidArgument("params_from_json: tensor shape mismatch for " + std::string(t.name));
    std::copy(data.begin(), data.end(), params.view(t).begin());
  }
  return params;
}

}  // namespace iccl::gbcl
