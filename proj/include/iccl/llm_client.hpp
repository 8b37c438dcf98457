#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iccl/metric.hpp"
#include "iccl/schedule.hpp"

namespace iccl {

enum class LlmMode { Greedy, Logprob, Sampling };
std::string_view to_string(LlmMode mode);
LlmMode llm_mode_from_string(std::string_view s);

struct LlmClientConfig {
  /// Base URL, e.g. http://localhost:8000. Falls back to ICCL_LLM_ENDPOINT when empty.
  std::string endpoint;
  std::string model = "default";
  /// Name of the environment variable holding the API key.
  std::string api_key_env = "ICCL_LLM_API_KEY";
  LlmMode mode = LlmMode::Greedy;
  int n_samples = 1;         ///< sampling mode only
  double temperature = 0.0;  ///< greedy uses 0; sampling uses 1 unless overridden
  int top_logprobs = 20;
  int max_tokens = 4;
  double timeout_seconds = 60.0;
  int max_retries = 5;
  int max_parallel = 4;
  double backoff_base_seconds = 0.5;
  double backoff_factor = 2.0;
};

void to_json(nlohmann::json& j, const LlmClientConfig& c);
void from_json(const nlohmann::json& j, LlmClientConfig& c);

/// Probability floor reserved for states missing from a logprob response.
inline constexpr double kLogprobFloor = 1e-6;

/// First maximal run of decimal digits in `completion`, as a state index.
/// Throws ParseError when none is present or the value is >= n_states.
StateIndex parse_state_token(const std::string& completion, int n_states);

/// Turns (token, logprob) pairs into a distribution: tokens that parse as
/// whole states are kept and merged, the kept mass is renormalized, and a
/// total mass of kLogprobFloor is shared equally among states that did not
/// appear. Throws CoverageError when no token names a valid state.
Distribution distribution_from_logprobs(const std::vector<std::pair<std::string, double>>& top, int n_states);

/// Laplace-smoothed histogram of sampled states.
Distribution distribution_from_samples(const std::vector<StateIndex>& states, int n_states, double alpha = 1.0);

/// Client for an OpenAI-compatible chat-completions endpoint. Thread-safe;
/// at most `max_parallel` requests are in flight per client.
class LlmClient {
 public:
  explicit LlmClient(LlmClientConfig config);
  ~LlmClient();
  LlmClient(const LlmClient&) = delete;
  LlmClient& operator=(const LlmClient&) = delete;

  /// Predicts the next-state distribution for `prompt`.
  Distribution predict(const std::string& prompt, int n_states);

  /// Request body for `prompt` under the configured mode.
  nlohmann::json request_body(const std::string& prompt, int n) const;

  const LlmClientConfig& config() const noexcept { return config_; }

 private:
  nlohmann::json post(const nlohmann::json& body);

  LlmClientConfig config_;
  std::string host_;
  std::string path_prefix_;
  std::string api_key_;
  std::mutex mutex_;
  std::condition_variable slot_free_;
  int in_flight_ = 0;
};

/// Renders the full prompt once per query state and scores the replies.
double evaluate_llm(LlmClient& client, const HistoricalSequence& sequence, const TaskSpec& target);

}  // namespace iccl
