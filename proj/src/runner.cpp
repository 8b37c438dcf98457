#include "iccl/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <fmt/format.h>

#include "iccl/error.hpp"
#include "iccl/predictor.hpp"
#include "iccl/rng.hpp"
#include "iccl/task_gen.hpp"

namespace iccl {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTaskStream = 0x7A5C;
constexpr std::uint64_t kSequenceStream = 0x5E9;
constexpr std::uint64_t kLearnerStream = 0x1EA7;
constexpr std::uint64_t kFixedInterferenceStream = 0xF1;
constexpr int kMaxPhiD = 700;

CurveSummary summarize_values(std::span<const double> values) {
  if (values.size() >= 2) return aggregate(values);
  CurveSummary s;
  s.n = values.size();
  s.mean = values.empty() ? std::numeric_limits<double>::quiet_NaN() : values.front();
  s.ci95 = std::numeric_limits<double>::quiet_NaN();
  return s;
}

std::string format_optional(double v) { return std::isfinite(v) ? format_real(v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Sgd: return "sgd";
    case Method::Er: return "er";
    case Method::Ewc: return "ewc";
    case Method::Bigram: return "bigram";
    case Method::BigramAware: return "bigram-aware";
    case Method::BigramDecay: return "bigram-decay";
    case Method::Llm: return "llm";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::Sgd, Method::Er, Method::Ewc, Method::Bigram, Method::BigramAware, Method::BigramDecay,
                   Method::Llm})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method: " + std::string(s));
}

bool is_local(Method m) { return m != Method::Llm; }

void ExperimentConfig::validate() const {
  if (n_states < 2) throw ConfigError("n_states must be >= 2");
  if (phi < 1) throw ConfigError("phi must be >= 1");
  if (k < 1) throw ConfigError("K must be >= 1");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (phi_d_grid.empty()) throw ConfigError("phi_d_grid must not be empty");
  for (int d : phi_d_grid)
    if (d < 0 || d > kMaxPhiD) throw ConfigError(fmt::format("phi_d {} outside [0, {}]", d, kMaxPhiD));
  if (schedule == ScheduleKind::DP) {
    if (phi_i_grid.empty()) throw ConfigError("phi_i_grid must not be empty for dp");
    for (int v : phi_i_grid)
      if (v < 1) throw ConfigError("phi_i values must be >= 1");
  }
  if (interference_tasks < 1) throw ConfigError("interference_tasks must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (lambda_ewc < 0.0) throw ConfigError("lambda_ewc must be >= 0");
  if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw ConfigError("replay_ratio must lie in [0, 1]");
  if (replay_batch < 1 || buffer_capacity < 1) throw ConfigError("replay batch and buffer capacity must be >= 1");
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("hidden widths must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(rho_decay > 0.0 && rho_decay <= 1.0)) throw ConfigError("rho_decay must lie in (0, 1]");
  if (!(min_entry >= 0.0 && min_entry * n_states < 1.0)) throw ConfigError("min_entry must satisfy 0 <= min_entry < 1/n");
}

ScheduleSpec ExperimentConfig::schedule_spec(int phi_i) const {
  ScheduleSpec s;
  s.kind = schedule;
  s.phi = phi;
  s.k = k;
  s.phi_i = schedule == ScheduleKind::DP ? phi_i : 0;
  s.with_identifiers = with_identifiers;
  s.trailing_interference = trailing_interference;
  return s;
}

std::vector<int> ExperimentConfig::effective_phi_i_grid() const {
  if (schedule != ScheduleKind::DP) return {0};
  return phi_i_grid;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"n_states", c.n_states},
                     {"schedule", to_string(c.schedule)},
                     {"phi", c.phi},
                     {"K", c.k},
                     {"phi_i_grid", c.phi_i_grid},
                     {"with_identifiers", c.with_identifiers},
                     {"trailing_interference", c.trailing_interference},
                     {"phi_d_grid", c.phi_d_grid},
                     {"method", to_string(c.method)},
                     {"lr", c.lr},
                     {"lambda_ewc", c.lambda_ewc},
                     {"replay_ratio", c.replay_ratio},
                     {"replay_batch", c.replay_batch},
                     {"buffer_capacity", c.buffer_capacity},
                     {"reservoir", c.reservoir},
                     {"hidden1", c.hidden1},
                     {"hidden2", c.hidden2},
                     {"alpha", c.alpha},
                     {"rho_decay", c.rho_decay},
                     {"interference_tasks", c.interference_tasks},
                     {"fixed_interference_seed", nullptr},
                     {"min_entry", c.min_entry},
                     {"prediction_mode", c.prediction_mode == PredictionMode::Greedy ? "greedy" : "distribution"},
                     {"llm", c.llm},
                     {"repeats", c.repeats},
                     {"seed", c.seed},
                     {"out", c.out}};
  if (c.fixed_interference_seed) j["fixed_interference_seed"] = *c.fixed_interference_seed;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known{
      "n_states", "schedule",   "phi",          "K",          "phi_i_grid",          "with_identifiers",
      "trailing_interference",  "phi_d_grid",   "method",     "lr",                  "lambda_ewc",
      "replay_ratio",           "replay_batch", "buffer_capacity", "reservoir",      "hidden1",
      "hidden2",                "alpha",        "rho_decay",  "interference_tasks",  "fixed_interference_seed",
      "min_entry",              "prediction_mode", "llm",     "repeats",             "seed",
      "out"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config field: " + key);
  try {
    c.n_states = j.value("n_states", c.n_states);
    if (j.contains("schedule")) c.schedule = schedule_kind_from_string(j.at("schedule").get<std::string>());
    c.phi = j.value("phi", c.phi);
    c.k = j.value("K", c.k);
    c.phi_i_grid = j.value("phi_i_grid", c.phi_i_grid);
    c.with_identifiers = j.value("with_identifiers", c.with_identifiers);
    c.trailing_interference = j.value("trailing_interference", c.trailing_interference);
    c.phi_d_grid = j.value("phi_d_grid", c.phi_d_grid);
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    c.lr = j.value("lr", c.lr);
    c.lambda_ewc = j.value("lambda_ewc", c.lambda_ewc);
    c.replay_ratio = j.value("replay_ratio", c.replay_ratio);
    c.replay_batch = j.value("replay_batch", c.replay_batch);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.reservoir = j.value("reservoir", c.reservoir);
    c.hidden1 = j.value("hidden1", c.hidden1);
    c.hidden2 = j.value("hidden2", c.hidden2);
    c.alpha = j.value("alpha", c.alpha);
    c.rho_decay = j.value("rho_decay", c.rho_decay);
    c.interference_tasks = j.value("interference_tasks", c.interference_tasks);
    if (j.contains("fixed_interference_seed") && !j.at("fixed_interference_seed").is_null())
      c.fixed_interference_seed = j.at("fixed_interference_seed").get<std::uint64_t>();
    c.min_entry = j.value("min_entry", c.min_entry);
    if (j.contains("prediction_mode")) {
      const auto mode = j.at("prediction_mode").get<std::string>();
      if (mode == "greedy") c.prediction_mode = PredictionMode::Greedy;
      else if (mode == "distribution") c.prediction_mode = PredictionMode::Distribution;
      else throw ConfigError("unknown prediction_mode: " + mode);
    }
    if (j.contains("llm")) c.llm = j.at("llm").get<LlmClientConfig>();
    c.repeats = j.value("repeats", c.repeats);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not JSON: " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("config_hash")) j = j.at("config");
  ExperimentConfig c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

std::string config_hash(const ExperimentConfig& c) {
  const std::string text = nlohmann::json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

CellSeeds derive_cell_seeds(const ExperimentConfig& c, int phi_i, int repeat) {
  const auto n = static_cast<std::uint64_t>(c.n_states);
  const auto r = static_cast<std::uint64_t>(repeat);
  CellSeeds s;
  const std::uint64_t tasks = derive_seed(c.seed, {kTaskStream, n, r});
  s.target_task = derive_seed(tasks, {0});
  for (int j = 0; j < c.interference_tasks; ++j) {
    const auto jj = static_cast<std::uint64_t>(j);
    s.interference_tasks.push_back(c.fixed_interference_seed
                                       ? derive_seed(*c.fixed_interference_seed, {kFixedInterferenceStream, n, jj})
                                       : derive_seed(tasks, {1 + jj}));
  }
  s.sequence = derive_seed(c.seed, {kSequenceStream, n, static_cast<std::uint64_t>(phi_i), r});
  s.learner = derive_seed(c.seed, {kLearnerStream, n, r});
  return s;
}

namespace {

struct CellInputs {
  TaskSpec target;
  std::vector<TaskSpec> interference;
  HistoricalSequence sequence;
  CellSeeds seeds;
};

CellInputs make_inputs(const ExperimentConfig& c, int phi_i, int repeat, int phi_d) {
  const CellSeeds seeds = derive_cell_seeds(c, phi_i, repeat);
  GenerateOptions opts;
  opts.min_entry = c.min_entry;
  TaskSpec target = generate_task(c.n_states, 0, kTargetLabel, seeds.target_task, opts);
  std::vector<TaskSpec> interference;
  for (int j = 0; j < c.interference_tasks; ++j)
    interference.push_back(generate_task(c.n_states, 1 + j, kInterferenceLabel, seeds.interference_tasks[j], opts));
  HistoricalSequence seq = build_sequence(c.schedule_spec(phi_i), target, interference, phi_d, seeds.sequence);
  return {std::move(target), std::move(interference), std::move(seq), seeds};
}

std::unique_ptr<SequentialPredictor> make_predictor(const ExperimentConfig& c, std::uint64_t learner_seed) {
  BigramConfig bigram;
  bigram.n_states = c.n_states;
  bigram.alpha = c.alpha;
  gbcl::TrainerConfig trainer;
  trainer.learning_rate = c.lr;
  trainer.replay_ratio = c.replay_ratio;
  trainer.replay_batch = c.replay_batch;
  trainer.buffer_capacity = static_cast<std::size_t>(c.buffer_capacity);
  trainer.reservoir = c.reservoir;
  trainer.ewc_lambda = c.lambda_ewc;
  trainer.shape.n_states = c.n_states;
  trainer.shape.n_tasks = 1 + c.interference_tasks;
  trainer.shape.hidden1 = c.hidden1;
  trainer.shape.hidden2 = c.hidden2;
  switch (c.method) {
    case Method::Sgd: trainer.kind = gbcl::TrainerKind::Sgd; break;
    case Method::Er: trainer.kind = gbcl::TrainerKind::Er; break;
    case Method::Ewc: trainer.kind = gbcl::TrainerKind::Ewc; break;
    case Method::Bigram: return std::make_unique<BigramCounter>(bigram);
    case Method::BigramAware:
      bigram.identifier_aware = true;
      return std::make_unique<BigramCounter>(bigram);
    case Method::BigramDecay:
      bigram.identifier_aware = true;
      bigram.decay = c.rho_decay;
      return std::make_unique<BigramCounter>(bigram);
    case Method::Llm: throw ConfigError("llm method has no local predictor");
  }
  return std::make_unique<GbclPredictor>(trainer, learner_seed);
}

int max_phi_d(const ExperimentConfig& c) { return *std::max_element(c.phi_d_grid.begin(), c.phi_d_grid.end()); }

struct JobOutput {
  std::vector<double> values;  // one per phi_d, NaN on failure
  std::vector<long> t_eval;
  std::vector<std::string> errors;
  CellSeeds seeds;
};

JobOutput run_job(const ExperimentConfig& c, int phi_i, int repeat, LlmClient* client) {
  const std::size_t m = c.phi_d_grid.size();
  JobOutput out;
  out.values.assign(m, std::numeric_limits<double>::quiet_NaN());
  out.t_eval.assign(m, 0);
  out.errors.assign(m, {});
  std::optional<CellInputs> inputs;
  try {
    inputs.emplace(make_inputs(c, phi_i, repeat, max_phi_d(c)));
  } catch (const std::exception& e) {
    for (auto& err : out.errors) err = e.what();
    return out;
  }
  const CellInputs& in = *inputs;
  out.seeds = in.seeds;
  const long pre = pre_distractor_length(in.sequence);
  for (std::size_t i = 0; i < m; ++i) out.t_eval[i] = pre + c.phi_d_grid[i];

  if (is_local(c.method)) {
    try {
      auto predictor = make_predictor(c, in.seeds.learner);
      out.values = evaluate_predictor_curve(*predictor, in.sequence, in.target, c.phi_d_grid, c.prediction_mode);
    } catch (const std::exception& e) {
      for (auto& err : out.errors) err = e.what();
    }
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    try {
      out.values[i] = evaluate_llm(*client, with_distractor_length(in.sequence, c.phi_d_grid[i]), in.target);
    } catch (const std::exception& e) {
      out.errors[i] = e.what();
    }
  }
  return out;
}

RetentionMeasurement base_row(const ExperimentConfig& c) {
  RetentionMeasurement r;
  r.method = std::string(to_string(c.method));
  r.n_states = c.n_states;
  r.schedule = c.schedule;
  r.with_identifiers = c.with_identifiers;
  r.phi = c.phi;
  r.k = c.k;
  return r;
}

}  // namespace

double run_cell(const ExperimentConfig& config, int phi_i, int phi_d, int repeat) {
  config.validate();
  CellInputs in = make_inputs(config, config.schedule == ScheduleKind::DP ? phi_i : 0, repeat, phi_d);
  if (config.method == Method::Llm) {
    LlmClient client(config.llm);
    return evaluate_llm(client, in.sequence, in.target);
  }
  auto predictor = make_predictor(config, in.seeds.learner);
  return evaluate_predictor(*predictor, in.sequence, in.target, config.prediction_mode);
}

std::string measurements_csv(const std::vector<RetentionMeasurement>& rows) {
  std::string text = std::string(kMeasurementCsvHeader) + "\n";
  for (const auto& r : rows) text += to_csv_row(r) + "\n";
  return text;
}

std::vector<SummaryRow> summarize(const std::vector<RetentionMeasurement>& rows) {
  using Key = std::tuple<std::string, int, int, bool, int, int, int, int, long>;
  std::map<Key, std::vector<double>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    Key key{r.method, r.n_states, static_cast<int>(r.schedule), r.with_identifiers, r.phi, r.k, r.phi_i, r.phi_d,
            r.t_eval};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r.value);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    SummaryRow s;
    std::tie(s.method, s.n_states, std::ignore, s.with_identifiers, s.phi, s.k, s.phi_i, s.phi_d, s.t_eval) = key;
    s.schedule = static_cast<ScheduleKind>(std::get<2>(key));
    s.summary = summarize_values(groups[key]);
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_csv_row(const SummaryRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", r.method, r.n_states, to_string(r.schedule),
                     r.with_identifiers ? 1 : 0, r.phi, r.k, r.phi_i, r.phi_d, r.t_eval, r.summary.n,
                     format_optional(r.summary.mean), format_optional(r.summary.ci95));
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  if (options.jobs < 1) throw ConfigError("jobs must be >= 1");
  std::unique_ptr<LlmClient> client;
  if (config.method == Method::Llm) client = std::make_unique<LlmClient>(config.llm);

  const std::vector<int> phi_i_grid = config.effective_phi_i_grid();
  const std::size_t n_jobs = phi_i_grid.size() * static_cast<std::size_t>(config.repeats);
  std::vector<JobOutput> outputs(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t idx = next++; idx < n_jobs; idx = next++) {
      const int phi_i = phi_i_grid[idx / config.repeats];
      const int repeat = static_cast<int>(idx % config.repeats);
      outputs[idx] = run_job(config, phi_i, repeat, client.get());
    }
  };
  const int threads = std::min<int>(options.jobs, static_cast<int>(std::max<std::size_t>(n_jobs, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentResult result;
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t p = 0; p < phi_i_grid.size(); ++p) {
    for (int rep = 0; rep < config.repeats; ++rep) {
      const auto& out = outputs[p * config.repeats + rep];
      nlohmann::json interference = out.seeds.interference_tasks;
      cells.push_back({{"phi_i", phi_i_grid[p]},
                       {"repeat", rep},
                       {"target_task_seed", out.seeds.target_task},
                       {"interference_task_seeds", interference},
                       {"sequence_seed", out.seeds.sequence},
                       {"learner_seed", out.seeds.learner}});
    }
    for (std::size_t d = 0; d < config.phi_d_grid.size(); ++d) {
      for (int rep = 0; rep < config.repeats; ++rep) {
        const auto& out = outputs[p * config.repeats + rep];
        if (!out.errors[d].empty()) {
          result.failures.push_back({phi_i_grid[p], config.phi_d_grid[d], rep, out.errors[d]});
          continue;
        }
        RetentionMeasurement row = base_row(config);
        row.phi_i = phi_i_grid[p];
        row.phi_d = config.phi_d_grid[d];
        row.t_eval = out.t_eval[d];
        row.seed = out.seeds.sequence;
        row.value = out.values[d];
        result.rows.push_back(std::move(row));
      }
    }
  }
  result.summary = summarize(result.rows);

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : result.failures)
    failures.push_back({{"phi_i", f.phi_i}, {"phi_d", f.phi_d}, {"repeat", f.repeat}, {"error", f.error}});
  result.manifest = {{"tool", "iccl-bench"},
                     {"version", kToolVersion},
                     {"prompt_template_version", kPromptTemplateVersion},
                     {"config", config},
                     {"config_hash", config_hash(config)},
                     {"cells", cells},
                     {"artifacts", {{"results", "results.csv"}, {"summary", "summary.csv"}, {"manifest", "manifest.json"}}},
                     {"failures", failures},
                     {"complete", result.failures.empty()}};

  if (options.write_files) {
    const fs::path dir(config.out);
    fs::create_directories(dir);
    write_text(dir / "results.csv", measurements_csv(result.rows));
    std::string summary = std::string(kSummaryCsvHeader) + "\n";
    for (const auto& s : result.summary) summary += to_csv_row(s) + "\n";
    write_text(dir / "summary.csv", summary);
    write_text(dir / "manifest.json", result.manifest.dump(2) + "\n");
  }
  if (!result.failures.empty() && (!options.allow_partial || is_local(config.method))) {
    const auto& f = result.failures.front();
    throw TransportError(fmt::format("{} cell(s) failed (first: phi_i={} phi_d={} repeat={}: {}); rerun with "
                                     "--allow-partial to keep the completed cells",
                                     result.failures.size(), f.phi_i, f.phi_d, f.repeat, f.error));
  }
  return result;
}

std::string_view to_string(SweepDimension d) {
  switch (d) {
    case SweepDimension::PhiI: return "phi_i";
    case SweepDimension::LambdaEwc: return "lambda_ewc";
    case SweepDimension::RhoDecay: return "rho_decay";
  }
  return "?";
}

SweepDimension sweep_dimension_from_string(std::string_view s) {
  if (s == "phi_i") return SweepDimension::PhiI;
  if (s == "lambda_ewc" || s == "lambda") return SweepDimension::LambdaEwc;
  if (s == "rho_decay" || s == "rho") return SweepDimension::RhoDecay;
  throw ConfigError("unknown sweep dimension: " + std::string(s));
}

SweepResult summarize_sweep(SweepDimension dimension, const std::vector<double>& values,
                            const std::vector<std::vector<RetentionMeasurement>>& per_value_rows) {
  if (values.size() != per_value_rows.size()) throw InvalidArgument("summarize_sweep: size mismatch");
  if (values.empty()) throw InvalidArgument("summarize_sweep: no values");
  SweepResult result;
  result.dimension = dimension;
  for (std::size_t v = 0; v < values.size(); ++v) {
    // Within one phi_i, the order in which sequence seeds first appear is the repeat index.
    std::map<int, std::vector<std::uint64_t>> seeds_by_phi_i;
    for (const auto& r : per_value_rows[v]) {
      auto& seeds = seeds_by_phi_i[r.phi_i];
      if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
    }
    std::vector<double> sums, counts;
    for (const auto& r : per_value_rows[v]) {
      const auto& seeds = seeds_by_phi_i[r.phi_i];
      const auto repeat = static_cast<std::size_t>(std::find(seeds.begin(), seeds.end(), r.seed) - seeds.begin());
      if (repeat >= sums.size()) {
        sums.resize(repeat + 1, 0.0);
        counts.resize(repeat + 1, 0.0);
      }
      sums[repeat] += r.value;
      counts[repeat] += 1.0;
    }
    SweepPoint point;
    point.value = values[v];
    for (std::size_t i = 0; i < sums.size(); ++i)
      if (counts[i] > 0) point.per_seed.push_back(sums[i] / counts[i]);
    point.summary = summarize_values(point.per_seed);
    result.points.push_back(std::move(point));
  }
  for (std::size_t i = 1; i < result.points.size(); ++i)
    if (result.points[i].summary.mean > result.points[result.argmax].summary.mean) result.argmax = i;
  result.points[result.argmax].is_argmax = true;

  const std::size_t last = result.points.size() - 1;
  if (result.argmax != 0 && result.argmax != last) {
    const auto& best = result.points[result.argmax].per_seed;
    const auto& lo = result.points.front().per_seed;
    const auto& hi = result.points.back().per_seed;
    const std::size_t n = std::min({best.size(), lo.size(), hi.size()});
    for (std::size_t i = 0; i < n; ++i)
      if (best[i] > lo[i] && best[i] > hi[i]) ++result.interior_wins;
    result.interior_optimum = n > 0 && 4 * static_cast<std::size_t>(result.interior_wins) >= 3 * n;
  }
  if (result.interior_optimum) {
    result.verdict = fmt::format("interior optimum at {}={} ({} of {} repeats beat both endpoints)",
                                 to_string(dimension), format_real(result.points[result.argmax].value),
                                 result.interior_wins, result.points[result.argmax].per_seed.size());
  } else {
    result.verdict = fmt::format("no interior optimum (argmax at {}={}, {} repeats beat both endpoints)",
                                 to_string(dimension), format_real(result.points[result.argmax].value),
                                 result.interior_wins);
  }
  return result;
}

SweepResult sweep(const ExperimentConfig& config, SweepDimension dimension, const std::vector<double>& values,
                  const RunOptions& options) {
  if (values.empty()) throw ConfigError("sweep: no values");
  if (dimension == SweepDimension::PhiI && config.schedule != ScheduleKind::DP)
    throw ConfigError("sweep over phi_i requires the dp schedule");
  if (dimension == SweepDimension::LambdaEwc && config.method != Method::Ewc)
    throw ConfigError("sweep over lambda_ewc requires method ewc");
  if (dimension == SweepDimension::RhoDecay && config.method != Method::BigramDecay)
    throw ConfigError("sweep over rho_decay requires method bigram-decay");
  std::vector<std::vector<RetentionMeasurement>> rows;
  for (double v : values) {
    ExperimentConfig c = config;
    switch (dimension) {
      case SweepDimension::PhiI:
        if (v != std::floor(v)) throw ConfigError("phi_i sweep values must be integers");
        c.phi_i_grid = {static_cast<int>(v)};
        break;
      case SweepDimension::LambdaEwc: c.lambda_ewc = v; break;
      case SweepDimension::RhoDecay: c.rho_decay = v; break;
    }
    c.out = (fs::path(config.out) / fmt::format("{}_{}", to_string(dimension), format_real(v))).string();
    rows.push_back(run_experiment(c, options).rows);
  }
  SweepResult result = summarize_sweep(dimension, values, rows);
  if (options.write_files) {
    std::string csv = "dimension,value,n,mean,ci95,is_argmax\n";
    for (const auto& p : result.points)
      csv += fmt::format("{},{},{},{},{},{}\n", to_string(dimension), format_real(p.value), p.summary.n,
                         format_optional(p.summary.mean), format_optional(p.summary.ci95), p.is_argmax ? 1 : 0);
    write_text(fs::path(config.out) / "sweep_summary.csv", csv);
    nlohmann::json j{{"dimension", to_string(dimension)},
                     {"values", values},
                     {"argmax_value", result.points[result.argmax].value},
                     {"interior_optimum", result.interior_optimum},
                     {"interior_wins", result.interior_wins},
                     {"verdict", result.verdict}};
    write_text(fs::path(config.out) / "sweep.json", j.dump(2) + "\n");
  }
  return result;
}

namespace {

using ConditionKey = std::tuple<int, int, bool, int, int, int>;  // n_states, schedule, ids, phi, K, phi_i

ConditionKey condition_of(const RetentionMeasurement& r) {
  return {r.n_states, static_cast<int>(r.schedule), r.with_identifiers, r.phi, r.k, r.phi_i};
}

ScheduleSpec spec_of(const ConditionKey& key, bool trailing) {
  ScheduleSpec s;
  s.kind = static_cast<ScheduleKind>(std::get<1>(key));
  s.with_identifiers = std::get<2>(key);
  s.phi = std::get<3>(key);
  s.k = std::get<4>(key);
  s.phi_i = std::get<5>(key);
  s.trailing_interference = trailing;
  return s;
}

std::string condition_tag(const ConditionKey& key) {
  return fmt::format("n={} {} ids={} phi={} K={} phi_i={}", std::get<0>(key),
                     to_string(static_cast<ScheduleKind>(std::get<1>(key))), std::get<2>(key) ? 1 : 0,
                     std::get<3>(key), std::get<4>(key), std::get<5>(key));
}

struct CurvePoint {
  int phi_d;
  long t_eval;
  std::vector<double> values;
};

/// Per condition: points keyed by phi_d, in ascending order.
std::map<ConditionKey, std::map<int, CurvePoint>> group_curves(const std::vector<RetentionMeasurement>& rows,
                                                               const std::string& method) {
  std::map<ConditionKey, std::map<int, CurvePoint>> out;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    auto& point = out[condition_of(r)].try_emplace(r.phi_d, CurvePoint{r.phi_d, r.t_eval, {}}).first->second;
    point.values.push_back(r.value);
  }
  return out;
}

// The trailing-interference flag is recovered from the pre-distractor length.
bool infer_trailing(const ConditionKey& key, long pre_length) {
  const ScheduleSpec s = spec_of(key, false);
  if (s.kind != ScheduleKind::DP) return false;
  return pre_length > static_cast<long>(s.k) * s.phi + static_cast<long>(s.k - 1) * s.phi_i;
}

std::string resolve_method(const std::vector<RetentionMeasurement>& rows, const std::string& method) {
  std::set<std::string> methods;
  for (const auto& r : rows) methods.insert(r.method);
  if (!method.empty()) {
    if (!methods.count(method)) throw SchemaError("no rows for method " + method);
    return method;
  }
  if (methods.size() != 1) throw ConfigError("results hold several methods; choose one with --method");
  return *methods.begin();
}

std::vector<RetentionMeasurement> read_all(const std::vector<fs::path>& paths) {
  std::vector<RetentionMeasurement> rows;
  for (const auto& p : paths) {
    auto part = read_measurements_csv(p.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw SchemaError("no measurements in the given results");
  return rows;
}

}  // namespace

std::vector<actr::CurveData> curves_from_rows(const std::vector<RetentionMeasurement>& rows, const std::string& method,
                                              PracticeTimeConvention convention) {
  std::vector<actr::CurveData> curves;
  for (const auto& [key, points] : group_curves(rows, method)) {
    const auto& first = points.begin()->second;
    const bool trailing = infer_trailing(key, first.t_eval - first.phi_d);
    actr::CurveData curve;
    curve.practice = practice_times(spec_of(key, trailing), convention);
    curve.tag = condition_tag(key);
    const long last_practice = curve.practice.times.back();
    for (const auto& [phi_d, point] : points) {
      if (point.t_eval <= last_practice) continue;
      double mean = 0.0;
      for (double v : point.values) mean += v;
      curve.points.emplace_back(static_cast<double>(point.t_eval), mean / static_cast<double>(point.values.size()));
    }
    if (!curve.points.empty()) curves.push_back(std::move(curve));
  }
  return curves;
}

nlohmann::json fit_actr(const std::vector<fs::path>& results, const std::string& method,
                        const ActrFitOptions& options) {
  const auto rows = read_all(results);
  const std::string m = resolve_method(rows, method);
  const auto curves = curves_from_rows(rows, m, options.convention);
  if (curves.empty()) throw InsufficientSamples("no curve points after the last practice for method " + m);
  const actr::FitResult fit = actr::fit(curves, options.fit);
  nlohmann::json j = actr::to_json(fit, m, options.reference);
  j["practice_convention"] = options.convention == PracticeTimeConvention::BlockCorrected ? "block" : "literal";
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& c : curves) tags.push_back(c.tag);
  j["curves"] = tags;
  return j;
}

void report(const std::vector<fs::path>& results, const std::vector<fs::path>& fits, const fs::path& out_dir,
            const ReportOptions& options) {
  auto rows = read_all(results);
  if (options.clamp)
    for (auto& r : rows) r.value = std::clamp(r.value, 0.0, 1.0);
  fs::create_directories(out_dir);

  std::string curves = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& s : summarize(rows)) curves += to_csv_row(s) + "\n";
  write_text(out_dir / "retention_curves.csv", curves);

  // Block layout of every condition seen in the data.
  std::map<ConditionKey, std::pair<long, int>> layouts;  // pre length, max phi_d
  for (const auto& r : rows) {
    auto [it, inserted] = layouts.try_emplace(condition_of(r), r.t_eval - r.phi_d, r.phi_d);
    if (!inserted) it->second.second = std::max(it->second.second, r.phi_d);
  }
  std::string blocks = "n_states,schedule,with_identifiers,phi,K,phi_i,role,start,end\n";
  std::set<ConditionKey> written;
  for (const auto& [key, layout] : layouts) {
    const ScheduleSpec spec = spec_of(key, infer_trailing(key, layout.first));
    const auto prefix = fmt::format("{},{},{},{},{},{}", std::get<0>(key), to_string(spec.kind),
                                    spec.with_identifiers ? 1 : 0, spec.phi, spec.k, spec.phi_i);
    long t = 1;
    auto emit = [&](std::string_view role, long len) {
      blocks += fmt::format("{},{},{},{}\n", prefix, role, t, t + len - 1);
      t += len;
    };
    switch (spec.kind) {
      case ScheduleKind::SP: emit("target", spec.phi); break;
      case ScheduleKind::MP: emit("target", static_cast<long>(spec.k) * spec.phi); break;
      case ScheduleKind::DP:
        for (int b = 0; b < spec.k; ++b) {
          emit("target", spec.phi);
          if (b + 1 < spec.k || spec.trailing_interference) emit("interference", spec.phi_i);
        }
        break;
    }
    if (layout.second > 0) emit("distractor", layout.second);
  }
  write_text(out_dir / "retention_blocks.csv", blocks);

  // Average retention per method and condition, split by identifier presence.
  using DiffKey = std::tuple<std::string, int, int, int, int, int>;
  std::map<DiffKey, std::array<std::vector<double>, 2>> diff;
  for (const auto& r : rows)
    diff[{r.method, r.n_states, static_cast<int>(r.schedule), r.phi, r.k, r.phi_i}][r.with_identifiers ? 1 : 0]
        .push_back(r.value);
  std::string ids = "method,n_states,schedule,phi,K,phi_i,with_identifiers_mean,without_identifiers_mean,difference\n";
  for (const auto& [key, v] : diff) {
    if (v[0].empty() || v[1].empty()) continue;
    const double with = average_retention(std::span<const double>(v[1]));
    const double without = average_retention(std::span<const double>(v[0]));
    ids += fmt::format("{},{},{},{},{},{},{},{},{}\n", std::get<0>(key), std::get<1>(key),
                       to_string(static_cast<ScheduleKind>(std::get<2>(key))), std::get<3>(key), std::get<4>(key),
                       std::get<5>(key), format_real(with), format_real(without), format_real(with - without));
  }
  write_text(out_dir / "identifier_diff.csv", ids);

  // Sweet spot: per-seed average over phi_d, then across seeds, per phi_i.
  using SweetKey = std::tuple<std::string, int, bool, int, int>;  // method, n, ids, phi, K
  std::map<SweetKey, std::map<int, std::map<std::uint64_t, std::vector<double>>>> sweet;
  for (const auto& r : rows)
    if (r.schedule == ScheduleKind::DP)
      sweet[{r.method, r.n_states, r.with_identifiers, r.phi, r.k}][r.phi_i][r.seed].push_back(r.value);
  std::string spot = "method,n_states,with_identifiers,phi,K,phi_i,n,mean,ci95,is_argmax\n";
  for (const auto& [key, by_phi_i] : sweet) {
    std::vector<std::pair<int, CurveSummary>> points;
    for (const auto& [phi_i, by_seed] : by_phi_i) {
      std::vector<double> per_seed;
      for (const auto& [seed, values] : by_seed) per_seed.push_back(average_retention(std::span<const double>(values)));
      points.emplace_back(phi_i, summarize_values(per_seed));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < points.size(); ++i)
      if (points[i].second.mean > points[best].second.mean) best = i;
    for (std::size_t i = 0; i < points.size(); ++i)
      spot += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", std::get<0>(key), std::get<1>(key),
                          std::get<2>(key) ? 1 : 0, std::get<3>(key), std::get<4>(key), points[i].first,
                          points[i].second.n, format_optional(points[i].second.mean),
                          format_optional(points[i].second.ci95), i == best ? 1 : 0);
  }
  write_text(out_dir / "sweet_spot.csv", spot);

  if (fits.empty()) return;
  std::string overlay = "method,n_states,schedule,with_identifiers,phi,K,phi_i,phi_d,t_eval,measured,fitted\n";
  for (const auto& fit_path : fits) {
    std::ifstream in(fit_path);
    if (!in) throw ConfigError("cannot open fit " + fit_path.string());
    nlohmann::json j;
    actr::ActrParams params;
    std::string method;
    PracticeTimeConvention convention = PracticeTimeConvention::BlockCorrected;
    try {
      j = nlohmann::json::parse(in);
      method = j.at("method").get<std::string>();
      params = {j.at("d").get<double>(), j.at("s").get<double>(), j.at("kappa").get<double>(),
                j.at("gamma").get<double>()};
      if (j.value("practice_convention", std::string("block")) == "literal") convention = PracticeTimeConvention::Literal;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("fit file " + fit_path.string() + " is malformed: " + e.what());
    }
    for (const auto& [key, points] : group_curves(rows, method)) {
      const auto& first = points.begin()->second;
      const ScheduleSpec spec = spec_of(key, infer_trailing(key, first.t_eval - first.phi_d));
      const PracticeSchedule practice = practice_times(spec, convention);
      for (const auto& [phi_d, point] : points) {
        const double measured = average_retention(std::span<const double>(point.values));
        const std::string fitted = point.t_eval > practice.times.back()
                                       ? format_real(actr::retention_hat(params, practice, static_cast<double>(point.t_eval)))
                                       : std::string();
        overlay += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", method, std::get<0>(key), to_string(spec.kind),
                               spec.with_identifiers ? 1 : 0, spec.phi, spec.k, spec.phi_i, phi_d, point.t_eval,
                               format_real(measured), fitted);
      }
    }
  }
  write_text(out_dir / "actr_overlay.csv", overlay);
}

}  // namespace iccl
