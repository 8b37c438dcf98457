#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "iccl/error.hpp"
#include "iccl/llm_client.hpp"
#include "iccl/predictor.hpp"
#include "mock_llm_server.hpp"

using namespace iccl;
using iccl::testing::MockLlmServer;

namespace {

Observation obs(int x, int y, SegmentRole role = SegmentRole::Target, bool labelled = true) {
  return {x, y, role == SegmentRole::Target ? 0 : 1, role, labelled};
}

LlmClientConfig client_config(const MockLlmServer& server, LlmMode mode) {
  LlmClientConfig c;
  c.endpoint = server.endpoint();
  c.mode = mode;
  c.backoff_base_seconds = 0.001;
  c.timeout_seconds = 5;
  return c;
}

ScheduleSpec dp_spec(int phi, int k, int phi_i) {
  ScheduleSpec s;
  s.kind = ScheduleKind::DP;
  s.phi = phi;
  s.k = k;
  s.phi_i = phi_i;
  return s;
}

}  // namespace

TEST_CASE("bigram observe examples") {
  SUBCASE("aware counter ignores labelled interference") {
    BigramCounter c({4, 1.0, 1.0, true});
    for (int i = 0; i < 10; ++i) c.observe(obs(i % 4, (i + 1) % 4, SegmentRole::Interference));
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y) CHECK(c.count(x, y) == 0.0);
  }
  SUBCASE("aware counter counts everything without labels") {
    BigramCounter c({4, 1.0, 1.0, true});
    c.observe(obs(0, 1, SegmentRole::Interference, false));
    CHECK(c.count(0, 1) == 1.0);
  }
  SUBCASE("no decay") {
    BigramCounter c({4, 1.0, 1.0, false});
    c.observe(obs(0, 1));
    c.observe(obs(0, 1));
    CHECK(c.count(0, 1) == 2.0);
  }
  SUBCASE("decay then increment") {
    BigramCounter c({4, 1.0, 0.5, false});
    c.observe(obs(0, 1));
    c.observe(obs(0, 2));
    CHECK(c.count(0, 1) == 0.5);
    CHECK(c.count(0, 2) == 1.0);
  }
}

TEST_CASE("bigram predict examples") {
  BigramCounter empty({4, 1.0, 1.0, false});
  const auto uniform = empty.predict(2);
  for (double p : uniform.probs()) CHECK(p == 0.25);
  BigramCounter c({2, 1.0, 1.0, false});
  // context "0 1 0 1" holds 0->1 twice and 1->0 once
  c.observe(obs(0, 1));
  c.observe(obs(1, 0));
  c.observe(obs(0, 1));
  CHECK(c.count(0, 1) == 2.0);
  CHECK(c.predict(0)[1] == doctest::Approx(0.75));
  CHECK_THROWS_AS(c.predict(2), InvalidArgument);
  CHECK_THROWS_AS(BigramCounter({4, 0.0, 1.0, false}), InvalidArgument);
}

TEST_CASE("evaluate_predictor examples") {
  const auto target = generate_task(4, 0, kTargetLabel, 3);
  const std::vector<TaskSpec> inter{generate_task(4, 1, kInterferenceLabel, 4)};

  SUBCASE("oracle predictor scores 1") {
    auto oracle = make_oracle_predictor(target);
    ScheduleSpec sp;
    sp.kind = ScheduleKind::SP;
    CHECK(evaluate_predictor(*oracle, build_sequence(sp, target, inter, 0, 1), target) == 1.0);
  }
  SUBCASE("aware bigram on a long SP run converges") {
    ScheduleSpec sp;
    sp.kind = ScheduleKind::SP;
    sp.phi = 20000;
    BigramCounter c({4, 1.0, 1.0, true});
    CHECK(evaluate_predictor(c, build_sequence(sp, target, inter, 0, 2), target) >= 0.9);
  }
  SUBCASE("unaware bigram loses to aware bigram under heavy interference") {
    int wins = 0;
    for (std::uint64_t s = 0; s < 16; ++s) {
      const auto t = generate_task(4, 0, kTargetLabel, 100 + s);
      const std::vector<TaskSpec> i{generate_task(4, 1, kInterferenceLabel, 200 + s)};
      const auto seq = build_sequence(dp_spec(100, 5, 1000), t, i, 0, s);
      BigramCounter aware({4, 1.0, 1.0, true}), blind({4, 1.0, 1.0, false});
      if (evaluate_predictor(aware, seq, t) > evaluate_predictor(blind, seq, t)) ++wins;
    }
    CHECK(sign_test_p(wins, 16) < 0.05);
  }
}

TEST_CASE("curve evaluation equals per-phi_d evaluation") {
  const auto target = generate_task(4, 0, kTargetLabel, 5);
  const std::vector<TaskSpec> inter{generate_task(4, 1, kInterferenceLabel, 6)};
  const auto spec = dp_spec(30, 3, 20);
  const std::vector<int> grid{0, 50, 10, 120};
  const auto full = build_sequence(spec, target, inter, 120, 8);
  gbcl::TrainerConfig cfg;
  cfg.kind = gbcl::TrainerKind::Er;
  cfg.replay_batch = 4;
  GbclPredictor learner(cfg, 3);
  BigramCounter decay({4, 1.0, 0.98, true});
  for (SequentialPredictor* p : std::initializer_list<SequentialPredictor*>{&learner, &decay}) {
    const auto curve = evaluate_predictor_curve(*p, full, target, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto seq = build_sequence(spec, target, inter, grid[i], 8);
      CHECK(curve[i] == evaluate_predictor(*p, seq, target));
      CHECK(evaluate_predictor(*p, with_distractor_length(full, grid[i]), target) == curve[i]);
    }
  }
  const std::vector<int> too_long{200};
  CHECK_THROWS_AS(evaluate_predictor_curve(decay, full, target, too_long), InvalidArgument);
}

TEST_CASE("greedy prediction mode scores one-hot argmax") {
  const auto target = generate_task(4, 0, kTargetLabel, 5);
  auto oracle = make_oracle_predictor(target);
  ScheduleSpec sp;
  sp.kind = ScheduleKind::SP;
  const auto seq = build_sequence(sp, target, {}, 0, 1);
  std::vector<std::pair<StateIndex, Distribution>> preds;
  for (int x = 0; x < 4; ++x) preds.emplace_back(x, one_hot(Distribution(ground_truth_row(target, x)).argmax(), 4));
  CHECK(evaluate_predictor(*oracle, seq, target, PredictionMode::Greedy) == retention(preds, target));
}

TEST_CASE("parse_state_token") {
  CHECK(parse_state_token("2", 4) == 2);
  CHECK(parse_state_token(" 3 →", 4) == 3);
  CHECK(parse_state_token("state 1, then 2", 4) == 1);
  CHECK_THROWS_AS(parse_state_token("four", 4), ParseError);
  CHECK_THROWS_AS(parse_state_token("12", 4), ParseError);
  try {
    parse_state_token("nope", 4);
  } catch (const ParseError& e) {
    CHECK(e.raw() == "nope");
  }
}

TEST_CASE("logprob and sampling arithmetic") {
  const auto d = distribution_from_logprobs({{"0", std::log(0.5)}, {"1", std::log(0.5)}}, 4);
  CHECK(d[0] == doctest::Approx(0.4999995).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.4999995).epsilon(1e-12));
  CHECK(d[2] == doctest::Approx(5e-7).epsilon(1e-12));
  CHECK(d[3] == doctest::Approx(5e-7).epsilon(1e-12));
  const auto merged = distribution_from_logprobs({{" 2", std::log(0.3)}, {"2", std::log(0.3)}, {"x", std::log(0.4)}}, 3);
  CHECK(merged[2] == doctest::Approx(1 - 1e-6));
  CHECK_THROWS_AS(distribution_from_logprobs({{"x", -0.1}, {"9", -1.0}}, 4), CoverageError);
  const auto s = distribution_from_samples({0, 0, 1, 3}, 4, 1.0);
  CHECK(s[0] == doctest::Approx(3.0 / 8));
  CHECK(s[1] == doctest::Approx(2.0 / 8));
  CHECK(s[2] == doctest::Approx(1.0 / 8));
  CHECK(s[3] == doctest::Approx(2.0 / 8));
}

TEST_CASE("LLM client round trips against a mock server") {
  SUBCASE("greedy") {
    MockLlmServer server([](const nlohmann::json&, int) { return std::pair{200, MockLlmServer::completion({"2"})}; });
    LlmClient client(client_config(server, LlmMode::Greedy));
    const auto d = client.predict("[TARGET_TASK]\n0 1\n[TARGET_TASK] 1 →", 4);
    CHECK(d == Distribution({0, 0, 1, 0}));
    const auto req = server.requests().at(0);
    CHECK(req["temperature"] == 0.0);
    CHECK(req["messages"][0]["content"] == "[TARGET_TASK]\n0 1\n[TARGET_TASK] 1 →");
  }
  SUBCASE("logprob") {
    MockLlmServer server([](const nlohmann::json&, int) {
      return std::pair{200, MockLlmServer::logprob_completion({{"0", std::log(0.5)}, {"1", std::log(0.5)}})};
    });
    LlmClient client(client_config(server, LlmMode::Logprob));
    const auto d = client.predict("p", 4);
    CHECK(d[0] == doctest::Approx(0.4999995).epsilon(1e-12));
    CHECK(d[3] == doctest::Approx(5e-7).epsilon(1e-12));
    CHECK(server.requests().at(0)["logprobs"] == true);
  }
  SUBCASE("sampling") {
    MockLlmServer server([](const nlohmann::json& req, int) {
      CHECK(req["n"] == 4);
      return std::pair{200, MockLlmServer::completion({"0", "0", "1", "3"})};
    });
    auto cfg = client_config(server, LlmMode::Sampling);
    cfg.n_samples = 4;
    cfg.temperature = 1.0;
    LlmClient client(cfg);
    const auto d = client.predict("p", 4);
    CHECK(d[0] == doctest::Approx(3.0 / 8));
    CHECK(d[3] == doctest::Approx(2.0 / 8));
  }
  SUBCASE("sampling tops up when the server returns fewer choices") {
    MockLlmServer server([](const nlohmann::json&, int) { return std::pair{200, MockLlmServer::completion({"1"})}; });
    auto cfg = client_config(server, LlmMode::Sampling);
    cfg.n_samples = 3;
    LlmClient client(cfg);
    CHECK(client.predict("p", 2)[1] == doctest::Approx(4.0 / 5));
    CHECK(server.calls() == 3);
  }
}

TEST_CASE("LLM client errors and retries") {
  SUBCASE("retries transient failures") {
    MockLlmServer server([](const nlohmann::json&, int i) {
      if (i < 2) return std::pair{i == 0 ? 503 : 429, std::string("{}")};
      return std::pair{200, MockLlmServer::completion({"1"})};
    });
    LlmClient client(client_config(server, LlmMode::Greedy));
    CHECK(client.predict("p", 4).argmax() == 1);
    CHECK(server.calls() == 3);
  }
  SUBCASE("gives up after the retry budget") {
    MockLlmServer server([](const nlohmann::json&, int) { return std::pair{500, std::string("{}")}; });
    auto cfg = client_config(server, LlmMode::Greedy);
    cfg.max_retries = 2;
    LlmClient client(cfg);
    CHECK_THROWS_AS(client.predict("p", 4), TransportError);
    CHECK(server.calls() == 3);
  }
  SUBCASE("client errors are not retried") {
    MockLlmServer server([](const nlohmann::json&, int) { return std::pair{400, std::string("{\"error\":1}")}; });
    LlmClient client(client_config(server, LlmMode::Greedy));
    CHECK_THROWS_AS(client.predict("p", 4), TransportError);
    CHECK(server.calls() == 1);
  }
  SUBCASE("unparseable completion carries the raw text") {
    MockLlmServer server([](const nlohmann::json&, int) { return std::pair{200, MockLlmServer::completion({"banana"})}; });
    LlmClient client(client_config(server, LlmMode::Greedy));
    try {
      client.predict("p", 4);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.raw() == "banana");
    }
  }
  SUBCASE("logprobs without a state token") {
    MockLlmServer server([](const nlohmann::json&, int) {
      return std::pair{200, MockLlmServer::logprob_completion({{"the", -0.1}})};
    });
    LlmClient client(client_config(server, LlmMode::Logprob));
    CHECK_THROWS_AS(client.predict("p", 4), CoverageError);
  }
  SUBCASE("unreachable endpoint") {
    LlmClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1";
    cfg.max_retries = 1;
    cfg.backoff_base_seconds = 0.001;
    cfg.timeout_seconds = 1;
    LlmClient client(cfg);
    CHECK_THROWS_AS(client.predict("p", 4), TransportError);
  }
  SUBCASE("no endpoint configured") {
    LlmClientConfig cfg;
    if (!std::getenv("ICCL_LLM_ENDPOINT")) CHECK_THROWS_AS(LlmClient{cfg}, ConfigError);
  }
}

TEST_CASE("LLM client sends the API key and respects the concurrency cap") {
  std::atomic<int> in_flight{0}, peak{0};
  MockLlmServer server([&](const nlohmann::json&, int) {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {}
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --in_flight;
    return std::pair{200, MockLlmServer::completion({"0"})};
  });
  ::setenv("ICCL_TEST_KEY", "sekret", 1);
  auto cfg = client_config(server, LlmMode::Greedy);
  cfg.api_key_env = "ICCL_TEST_KEY";
  cfg.max_parallel = 2;
  LlmClient client(cfg);
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { client.predict("p", 4); });
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 2);
  CHECK(server.calls() == 6);
  CHECK(server.auth_headers().at(0) == "Bearer sekret");
}

TEST_CASE("evaluate_llm renders one prompt per state") {
  const auto target = generate_task(3, 0, kTargetLabel, 5);
  MockLlmServer server([](const nlohmann::json& req, int) {
    const std::string prompt = req["messages"][0]["content"];
    // answer with the query state itself
    const auto arrow = prompt.rfind(" →");
    return std::pair{200, MockLlmServer::completion({prompt.substr(arrow - 1, 1)})};
  });
  LlmClient client(client_config(server, LlmMode::Greedy));
  ScheduleSpec sp;
  sp.kind = ScheduleKind::SP;
  sp.phi = 5;
  const auto seq = build_sequence(sp, target, {}, 0, 1);
  std::vector<std::pair<StateIndex, Distribution>> expect;
  for (int x = 0; x < 3; ++x) expect.emplace_back(x, one_hot(x, 3));
  CHECK(evaluate_llm(client, seq, target) == retention(expect, target));
  CHECK(server.calls() == 3);
}
