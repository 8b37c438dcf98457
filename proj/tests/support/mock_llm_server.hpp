#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace iccl::testing {

/// Minimal chat-completions server on a free localhost port. The handler
/// receives the parsed request body and returns (status, response body).
class MockLlmServer {
 public:
  using Handler = std::function<std::pair<int, std::string>(const nlohmann::json& request, int call_index)>;

  explicit MockLlmServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int index = calls_++;
      nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
      {
        std::lock_guard lock(mutex_);
        requests_.push_back(body);
        auth_headers_.push_back(req.get_header_value("Authorization"));
      }
      auto [status, text] = handler_(body, index);
      res.status = status;
      res.set_content(text, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockLlmServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockLlmServer(const MockLlmServer&) = delete;
  MockLlmServer& operator=(const MockLlmServer&) = delete;

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int calls() const { return calls_.load(); }
  std::vector<nlohmann::json> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mutex_);
    return auth_headers_;
  }

  static std::string completion(const std::vector<std::string>& contents) {
    nlohmann::json choices = nlohmann::json::array();
    for (std::size_t i = 0; i < contents.size(); ++i)
      choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", contents[i]}}}});
    return nlohmann::json{{"object", "chat.completion"}, {"choices", choices}}.dump();
  }

  static std::string logprob_completion(const std::vector<std::pair<std::string, double>>& top) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [token, lp] : top) entries.push_back({{"token", token}, {"logprob", lp}});
    const std::string first = top.empty() ? std::string() : top.front().first;
    nlohmann::json choice{{"index", 0},
                          {"message", {{"role", "assistant"}, {"content", first}}},
                          {"logprobs", {{"content", nlohmann::json::array({{{"token", first}, {"top_logprobs", entries}}})}}}};
    return nlohmann::json{{"object", "chat.completion"}, {"choices", nlohmann::json::array({choice})}}.dump();
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> calls_{0};
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> requests_;
  std::vector<std::string> auth_headers_;
};

}  // namespace iccl::testing
