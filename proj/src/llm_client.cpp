#include "iccl/llm_client.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <thread>

#include <httplib.h>

#include "iccl/error.hpp"

namespace iccl {

std::string_view to_string(LlmMode mode) {
  switch (mode) {
    case LlmMode::Greedy: return "greedy";
    case LlmMode::Logprob: return "logprob";
    case LlmMode::Sampling: return "sampling";
  }
  return "?";
}

LlmMode llm_mode_from_string(std::string_view s) {
  if (s == "greedy") return LlmMode::Greedy;
  if (s == "logprob") return LlmMode::Logprob;
  if (s == "sampling") return LlmMode::Sampling;
  throw ConfigError("unknown llm mode: " + std::string(s));
}

void to_json(nlohmann::json& j, const LlmClientConfig& c) {
  j = nlohmann::json{{"endpoint", c.endpoint},
                     {"model", c.model},
                     {"api_key_env", c.api_key_env},
                     {"mode", to_string(c.mode)},
                     {"n_samples", c.n_samples},
                     {"temperature", c.temperature},
                     {"top_logprobs", c.top_logprobs},
                     {"max_tokens", c.max_tokens},
                     {"timeout_seconds", c.timeout_seconds},
                     {"max_retries", c.max_retries},
                     {"max_parallel", c.max_parallel},
                     {"backoff_base_seconds", c.backoff_base_seconds},
                     {"backoff_factor", c.backoff_factor}};
}

void from_json(const nlohmann::json& j, LlmClientConfig& c) {
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  if (j.contains("mode")) c.mode = llm_mode_from_string(j.at("mode").get<std::string>());
  c.n_samples = j.value("n_samples", c.n_samples);
  c.temperature = j.value("temperature", c.mode == LlmMode::Sampling ? 1.0 : c.temperature);
  c.top_logprobs = j.value("top_logprobs", c.top_logprobs);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.max_parallel = j.value("max_parallel", c.max_parallel);
  c.backoff_base_seconds = j.value("backoff_base_seconds", c.backoff_base_seconds);
  c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
}

StateIndex parse_state_token(const std::string& completion, int n_states) {
  std::size_t i = 0;
  while (i < completion.size() && !std::isdigit(static_cast<unsigned char>(completion[i]))) ++i;
  if (i == completion.size()) throw ParseError("completion contains no state token", completion);
  std::size_t j = i;
  while (j < completion.size() && std::isdigit(static_cast<unsigned char>(completion[j]))) ++j;
  const std::string digits = completion.substr(i, j - i);
  // Anything longer than 9 digits cannot be a valid state.
  if (digits.size() > 9) throw ParseError("state token out of range", completion);
  const int value = std::stoi(digits);
  if (value >= n_states) throw ParseError("state token out of range", completion);
  return value;
}

namespace {

// A token counts as a state only when, trimmed, it is all digits.
std::optional<StateIndex> token_state(const std::string& token, int n_states) {
  std::size_t b = 0, e = token.size();
  while (b < e && std::isspace(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(token[e - 1]))) --e;
  if (b == e || e - b > 9) return std::nullopt;
  for (std::size_t i = b; i < e; ++i)
    if (!std::isdigit(static_cast<unsigned char>(token[i]))) return std::nullopt;
  const int value = std::stoi(token.substr(b, e - b));
  if (value >= n_states) return std::nullopt;
  return value;
}

}  // namespace

Distribution distribution_from_logprobs(const std::vector<std::pair<std::string, double>>& top, int n_states) {
  std::vector<double> mass(static_cast<std::size_t>(n_states), 0.0);
  std::vector<bool> seen(static_cast<std::size_t>(n_states), false);
  double total = 0.0;
  for (const auto& [token, logprob] : top) {
    const auto state = token_state(token, n_states);
    if (!state) continue;
    const double p = std::exp(logprob);
    mass[*state] += p;
    seen[*state] = true;
    total += p;
  }
  if (!(total > 0.0)) throw CoverageError("logprob response names no valid state");
  std::size_t missing = 0;
  for (bool s : seen) missing += s ? 0 : 1;
  const double reserve = missing > 0 ? kLogprobFloor : 0.0;
  for (std::size_t y = 0; y < mass.size(); ++y)
    mass[y] = seen[y] ? (1.0 - reserve) * mass[y] / total : reserve / static_cast<double>(missing);
  return Distribution(std::move(mass));
}

Distribution distribution_from_samples(const std::vector<StateIndex>& states, int n_states, double alpha) {
  std::vector<double> counts(static_cast<std::size_t>(n_states), alpha);
  for (StateIndex s : states) {
    if (s < 0 || s >= n_states) throw InvalidArgument("distribution_from_samples: state out of range");
    counts[s] += 1.0;
  }
  const double total = static_cast<double>(states.size()) + alpha * n_states;
  for (double& c : counts) c /= total;
  return Distribution(std::move(counts));
}

LlmClient::LlmClient(LlmClientConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    if (const char* env = std::getenv("ICCL_LLM_ENDPOINT")) config_.endpoint = env;
  }
  if (config_.endpoint.empty()) throw ConfigError("llm client: no endpoint (set ICCL_LLM_ENDPOINT or config.endpoint)");
  if (config_.mode == LlmMode::Sampling && config_.n_samples < 1) throw ConfigError("llm client: n_samples must be >= 1");
  if (config_.temperature < 0.0) throw ConfigError("llm client: temperature must be >= 0");
  if (config_.max_parallel < 1) throw ConfigError("llm client: max_parallel must be >= 1");
  if (!config_.api_key_env.empty())
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;

  const auto scheme = config_.endpoint.find("://");
  const auto path_start = config_.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = config_.endpoint.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = config_.endpoint.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

LlmClient::~LlmClient() = default;

nlohmann::json LlmClient::request_body(const std::string& prompt, int n) const {
  nlohmann::json body{{"model", config_.model},
                      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                      {"max_tokens", config_.max_tokens}};
  switch (config_.mode) {
    case LlmMode::Greedy:
      body["temperature"] = 0.0;
      break;
    case LlmMode::Logprob:
      body["temperature"] = 0.0;
      body["logprobs"] = true;
      body["top_logprobs"] = config_.top_logprobs;
      break;
    case LlmMode::Sampling:
      body["temperature"] = config_.temperature > 0.0 ? config_.temperature : 1.0;
      body["n"] = n;
      break;
  }
  return body;
}

nlohmann::json LlmClient::post(const nlohmann::json& body) {
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [&] { return in_flight_ < config_.max_parallel; });
    ++in_flight_;
  }
  struct Release {
    LlmClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  httplib::Client client(host_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const std::string path = path_prefix_ + "/v1/chat/completions";
  const std::string payload = body.dump();

  thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double base = config_.backoff_base_seconds * std::pow(config_.backoff_factor, attempt - 1);
      const double jitter = std::uniform_real_distribution<double>(0.0, base)(jitter_rng);
      std::this_thread::sleep_for(std::chrono::duration<double>(base + jitter));
    }
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw TransportError("llm endpoint returned status " + std::to_string(res->status) + ": " + res->body);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("response is not JSON: ") + e.what(), res->body);
    }
  }
  throw TransportError("llm request failed after " + std::to_string(config_.max_retries) + " retries: " + last_error);
}

namespace {

std::string choice_content(const nlohmann::json& choice, const nlohmann::json& response) {
  try {
    return choice.at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("response choice has no message content", response.dump());
  }
}

}  // namespace

Distribution LlmClient::predict(const std::string& prompt, int n_states) {
  switch (config_.mode) {
    case LlmMode::Greedy: {
      const auto response = post(request_body(prompt, 1));
      if (!response.contains("choices") || response["choices"].empty())
        throw ParseError("response has no choices", response.dump());
      return one_hot(parse_state_token(choice_content(response["choices"][0], response), n_states), n_states);
    }
    case LlmMode::Logprob: {
      const auto response = post(request_body(prompt, 1));
      std::vector<std::pair<std::string, double>> top;
      try {
        for (const auto& entry : response.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs"))
          top.emplace_back(entry.at("token").get<std::string>(), entry.at("logprob").get<double>());
      } catch (const nlohmann::json::exception&) {
        throw ParseError("response carries no top_logprobs", response.dump());
      }
      return distribution_from_logprobs(top, n_states);
    }
    case LlmMode::Sampling: {
      std::vector<StateIndex> states;
      // Servers may return fewer choices than requested; ask again for the rest.
      for (int round = 0; round < config_.n_samples && static_cast<int>(states.size()) < config_.n_samples; ++round) {
        const int want = config_.n_samples - static_cast<int>(states.size());
        const auto response = post(request_body(prompt, want));
        if (!response.contains("choices") || response["choices"].empty())
          throw ParseError("response has no choices", response.dump());
        for (const auto& choice : response["choices"]) {
          if (static_cast<int>(states.size()) == config_.n_samples) break;
          states.push_back(parse_state_token(choice_content(choice, response), n_states));
        }
      }
      return distribution_from_samples(states, n_states, 1.0);
    }
  }
  throw ConfigError("llm client: unknown mode");
}

double evaluate_llm(LlmClient& client, const HistoricalSequence& sequence, const TaskSpec& target) {
  std::vector<std::pair<StateIndex, Distribution>> preds;
  for (StateIndex x = 0; x < target.n_states(); ++x)
    preds.emplace_back(x, client.predict(render_prompt(sequence, x, target.label()), target.n_states()));
  return retention(preds, target);
}

}  // namespace iccl
