#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iccl/actr.hpp"
#include "iccl/llm_client.hpp"
#include "iccl/metric.hpp"
#include "iccl/predictor.hpp"
#include "iccl/schedule.hpp"

namespace iccl {

inline constexpr const char* kToolVersion = "1.0.0";

enum class Method { Sgd, Er, Ewc, Bigram, BigramAware, BigramDecay, Llm };
std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
bool is_local(Method m);

/// Declarative experiment description; serializes field-for-field to JSON.
struct ExperimentConfig {
  int n_states = 4;
  ScheduleKind schedule = ScheduleKind::DP;
  int phi = 100;
  int k = 5;
  std::vector<int> phi_i_grid{10, 50, 100, 200, 400, 600};
  bool with_identifiers = true;
  bool trailing_interference = false;
  std::vector<int> phi_d_grid{0, 100, 200, 300, 400, 500, 600, 700};
  Method method = Method::Sgd;

  // gradient-based learners
  double lr = 1e-3;
  double lambda_ewc = 700.0;
  double replay_ratio = 0.5;
  int replay_batch = 32;
  int buffer_capacity = 8000;
  bool reservoir = false;
  int hidden1 = 64;
  int hidden2 = 64;

  // bigram stand-ins
  double alpha = 1.0;
  double rho_decay = 0.99;

  // tasks
  int interference_tasks = 1;
  /// When set, interference tasks are generated from this seed for every repeat.
  std::optional<std::uint64_t> fixed_interference_seed;
  double min_entry = 0.0;

  PredictionMode prediction_mode = PredictionMode::Distribution;
  LlmClientConfig llm{};

  int repeats = 16;
  std::uint64_t seed = 0;
  std::string out = "results";

  /// Throws ConfigError on invalid values.
  void validate() const;
  ScheduleSpec schedule_spec(int phi_i) const;
  /// phi_i grid actually iterated: {0} for SP/MP.
  std::vector<int> effective_phi_i_grid() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
/// Accepts a bare config or a manifest carrying one under "config".
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical (sorted-key) JSON of the config.
std::string config_hash(const ExperimentConfig& c);

/// Seeds for one (n_states, phi_i, repeat) job. Method and phi_d are not
/// inputs, so conditions and methods are evaluated on paired data.
struct CellSeeds {
  std::uint64_t target_task;
  std::vector<std::uint64_t> interference_tasks;
  std::uint64_t sequence;
  std::uint64_t learner;
};
CellSeeds derive_cell_seeds(const ExperimentConfig& c, int phi_i, int repeat);

struct CellFailure {
  int phi_i = 0;
  int phi_d = 0;
  int repeat = 0;
  std::string error;
};

struct SummaryRow {
  std::string method;
  int n_states = 0;
  ScheduleKind schedule = ScheduleKind::DP;
  bool with_identifiers = true;
  int phi = 0;
  int k = 0;
  int phi_i = 0;
  int phi_d = 0;
  long t_eval = 0;
  CurveSummary summary;
};

inline constexpr const char* kSummaryCsvHeader =
    "method,n_states,schedule,with_identifiers,phi,K,phi_i,phi_d,t_eval,n,mean,ci95";

struct ExperimentResult {
  std::vector<RetentionMeasurement> rows;
  std::vector<SummaryRow> summary;
  std::vector<CellFailure> failures;
  nlohmann::json manifest;
};

struct RunOptions {
  int jobs = 1;
  bool allow_partial = false;
  bool write_files = true;
};

/// Runs every (phi_i, phi_d, repeat) cell. Rows are ordered by phi_i, phi_d,
/// repeat regardless of `jobs`. Failed cells are always fatal for local
/// methods; for llm they are recorded and fatal unless allow_partial. Writes results.csv, summary.csv and
/// manifest.json under config.out when write_files is set.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Evaluates a single cell independently of the batched runner path.
double run_cell(const ExperimentConfig& config, int phi_i, int phi_d, int repeat);

std::vector<SummaryRow> summarize(const std::vector<RetentionMeasurement>& rows);
std::string to_csv_row(const SummaryRow& r);
std::string measurements_csv(const std::vector<RetentionMeasurement>& rows);

enum class SweepDimension { PhiI, LambdaEwc, RhoDecay };
std::string_view to_string(SweepDimension d);
SweepDimension sweep_dimension_from_string(std::string_view s);

struct SweepPoint {
  double value = 0.0;
  CurveSummary summary;
  std::vector<double> per_seed;  ///< average retention per repeat
  bool is_argmax = false;
};

struct SweepResult {
  SweepDimension dimension = SweepDimension::PhiI;
  std::vector<SweepPoint> points;
  std::size_t argmax = 0;
  bool interior_optimum = false;
  int interior_wins = 0;  ///< repeats where the argmax beats both endpoints
  std::string verdict;
};

/// Runs run_experiment per grid value and summarizes average retention.
/// Argmax ties go to the first value. An interior optimum is reported only
/// when the argmax is not an endpoint and beats both endpoints on at least
/// 75% of repeats.
SweepResult sweep(const ExperimentConfig& config, SweepDimension dimension, const std::vector<double>& values,
                  const RunOptions& options = {});
SweepResult summarize_sweep(SweepDimension dimension, const std::vector<double>& values,
                            const std::vector<std::vector<RetentionMeasurement>>& per_value_rows);

struct ActrFitOptions {
  actr::FitOptions fit{};
  PracticeTimeConvention convention = PracticeTimeConvention::BlockCorrected;
  actr::HumanReference reference{};
};

/// Seed-averaged curves for one method, grouped by condition. Points whose
/// t_eval is not after the last practice are dropped (activation undefined).
std::vector<actr::CurveData> curves_from_rows(const std::vector<RetentionMeasurement>& rows, const std::string& method,
                                              PracticeTimeConvention convention = PracticeTimeConvention::BlockCorrected);

/// Fits one ACT-R parameter set to all curves of `method` in the CSV files.
/// An empty method is allowed when the files hold exactly one method.
nlohmann::json fit_actr(const std::vector<std::filesystem::path>& results, const std::string& method,
                        const ActrFitOptions& options = {});

struct ReportOptions {
  /// Clamp retention values to [0, 1] before summarizing; raw files are untouched.
  bool clamp = false;
};

/// Writes retention_curves.csv, retention_blocks.csv, identifier_diff.csv,
/// sweet_spot.csv and (when fits are given) actr_overlay.csv under out_dir.
void report(const std::vector<std::filesystem::path>& results, const std::vector<std::filesystem::path>& fits,
            const std::filesystem::path& out_dir, const ReportOptions& options = {});

}  // namespace iccl
