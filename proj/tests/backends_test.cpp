#include "subsel/backends.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

#include "test_support.hpp"

using namespace subsel;
using testsup::corpus_from_texts;
using testsup::StubChatServer;

namespace {

SelectionPrompt three_candidate_prompt(const Dataset& ds) {
  return build_selection_prompt(SampleView(ds, {}),
                                SampleView(ds, {0, 1, 2}), PromptTemplate{});
}

// Expected first draw of uniform_below(mt19937_64(seed), n), replicated from
// the documented algorithm: reject 64-bit words below 2^64 mod n, take the
// first survivor mod n.
std::size_t expected_uniform_below(std::uint64_t seed, std::uint64_t n) {
  std::mt19937_64 g(seed);
  const std::uint64_t min = (0 - n) % n;
  std::uint64_t word = g();
  while (word < min) word = g();
  return static_cast<std::size_t>(word % n);
}

TEST(ScriptedBackend, PlaysScriptInOrder) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  ScriptedBackend backend = ScriptedBackend::from_labels({'B', 'A'});
  std::mt19937_64 rng(1);
  SelectPolicy policy;

  SelectorDecision first = select(prompt, backend, policy, rng);
  EXPECT_EQ(first.chosen_id, 1);
  EXPECT_EQ(first.label, 'B');
  SelectorDecision second = select(prompt, backend, policy, rng);
  EXPECT_EQ(second.chosen_id, 0);
  EXPECT_EQ(backend.calls(), 2u);
}

TEST(ScriptedBackend, EmptyScriptFailsAtConstruction) {
  EXPECT_THROW(ScriptedBackend(std::vector<std::string>{}), config_error);
}

TEST(ScriptedBackend, UnderrunThrows) {
  ScriptedBackend backend({"only one"});
  backend.complete({});
  EXPECT_THROW(backend.complete({}), script_exhausted_error);
}

TEST(ScriptedBackend, LabelOutsideMapIsAParseFailure) {
  Dataset ds = corpus_from_texts({"t0", "t1"});
  SelectionPrompt prompt = build_selection_prompt(
      SampleView(ds, {}), SampleView(ds, {0, 1}), PromptTemplate{});
  EXPECT_THROW(parse_choice("[F]-Element", prompt), no_choice_error);
}

TEST(Select, RetriesOnGarbageThenParsesThirdCandidate) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  ScriptedBackend backend({"complete nonsense", "[C]-Element"});
  std::mt19937_64 rng(1);
  SelectPolicy policy{.max_parse_retries = 2,
                      .fallback = FallbackPolicy::abort_run};
  SelectorDecision d = select(prompt, backend, policy, rng);
  EXPECT_EQ(d.attempts, 2);
  EXPECT_EQ(d.chosen_id, 2);
  EXPECT_FALSE(d.used_fallback);
}

TEST(Select, SeededUniformRandomFallbackIsReproducible) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  SelectPolicy policy{.max_parse_retries = 1,
                      .fallback = FallbackPolicy::uniform_random};

  const std::size_t expected_idx = expected_uniform_below(99, 3);
  for (int repeat = 0; repeat < 3; ++repeat) {
    ScriptedBackend backend({"garbage", "garbage", "garbage"});
    std::mt19937_64 rng(99);
    SelectorDecision d = select(prompt, backend, policy, rng);
    EXPECT_TRUE(d.used_fallback);
    EXPECT_EQ(d.attempts, 2);  // max_parse_retries + 1
    EXPECT_EQ(d.chosen_id, prompt.b_window_ids[expected_idx]);
  }
}

TEST(Select, FirstCandidateAndAbortFallbacks) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  std::mt19937_64 rng(5);

  ScriptedBackend b1({"junk", "junk"});
  SelectorDecision d = select(
      prompt, b1,
      SelectPolicy{.max_parse_retries = 1,
                   .fallback = FallbackPolicy::first_candidate},
      rng);
  EXPECT_TRUE(d.used_fallback);
  EXPECT_EQ(d.chosen_id, 0);
  EXPECT_EQ(d.label, 'A');

  ScriptedBackend b2({"junk", "junk"});
  EXPECT_THROW(
      select(prompt, b2,
             SelectPolicy{.max_parse_retries = 1,
                          .fallback = FallbackPolicy::abort_run},
             rng),
      run_aborted_error);
}

TEST(Select, RetryAppendsFormatReminder) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  std::vector<std::string> seen_user_texts;
  CallbackBackend backend([&](const std::vector<ChatMessage>& messages) {
    seen_user_texts.push_back(messages.back().content);
    return seen_user_texts.size() == 1 ? "???" : "[B]-Element";
  });
  std::mt19937_64 rng(1);
  SelectorDecision d = select(prompt, backend, SelectPolicy{}, rng);
  EXPECT_EQ(d.chosen_id, 1);
  ASSERT_EQ(seen_user_texts.size(), 2u);
  EXPECT_EQ(seen_user_texts[0], prompt.user_text);
  EXPECT_EQ(seen_user_texts[1],
            prompt.user_text + "\n\n" + format_reminder_line());
}

TEST(Select, ChosenIdAlwaysFromCandidateWindow) {
  Dataset ds = corpus_from_texts({"t0", "t1", "t2", "t3", "t4", "t5"});
  SelectionPrompt prompt = build_selection_prompt(
      SampleView(ds, {0, 1}), SampleView(ds, {3, 5, 4}), PromptTemplate{});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    ScriptedBackend backend({"junk", "junk", "junk"});
    SelectorDecision d =
        select(prompt, backend,
               SelectPolicy{.max_parse_retries = 2,
                            .fallback = FallbackPolicy::uniform_random},
               rng);
    const auto& b = prompt.b_window_ids;
    EXPECT_NE(std::find(b.begin(), b.end(), d.chosen_id), b.end());
  }
}

TEST(BackendConfig, Validation) {
  BackendConfig cfg;
  cfg.temperature = -0.5;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg.temperature = 0.0;
  cfg.max_retries = -1;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg.max_retries = 0;
  cfg.validate();
}

TEST(HttpBackend, RequestBodyMatchesGoldenFixture) {
  BackendConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:9/v1/chat/completions";
  cfg.model_name = "test-model";
  cfg.temperature = 0.0;
  HttpChatBackend backend(cfg);
  const std::string body = backend.request_body(
      {{"system", "sys"}, {"user", "hello"}});
  EXPECT_EQ(body,
            R"({"messages":[{"content":"sys","role":"system"},)"
            R"({"content":"hello","role":"user"}],)"
            R"("model":"test-model","temperature":0.0})");
}

TEST(HttpBackend, RoundTripAgainstStubServer) {
  StubChatServer server({"[B]-Element"});
  BackendConfig cfg;
  cfg.endpoint_url = server.endpoint();
  cfg.model_name = "stub-model";
  cfg.api_key_env = "SUBSEL_TEST_KEY";
  setenv("SUBSEL_TEST_KEY", "secret-token", 1);
  HttpChatBackend backend(cfg);

  Dataset ds = corpus_from_texts({"t0", "t1", "t2"});
  SelectionPrompt prompt = three_candidate_prompt(ds);
  std::mt19937_64 rng(1);
  SelectorDecision d = select(prompt, backend, SelectPolicy{}, rng);
  EXPECT_EQ(d.chosen_id, 1);
  EXPECT_EQ(d.attempts, 1);

  const auto bodies = server.bodies();
  ASSERT_EQ(bodies.size(), 1u);
  EXPECT_EQ(bodies[0], backend.request_body({{"system", prompt.system_text},
                                             {"user", prompt.user_text}}));
  const auto auth = server.auth_headers();
  ASSERT_EQ(auth.size(), 1u);
  EXPECT_EQ(auth[0], "Bearer secret-token");
  unsetenv("SUBSEL_TEST_KEY");
}

TEST(HttpBackend, TransportErrorAfterRetriesWhenServerAbsent) {
  BackendConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";  // nothing here
  cfg.model_name = "m";
  cfg.max_retries = 1;
  cfg.backoff_base = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(300);
  HttpChatBackend backend(cfg);
  EXPECT_THROW(backend.complete({{"user", "hi"}}), transport_error);
}

TEST(HttpBackend, AuthenticationFailureDoesNotRetry) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions",
              [&](const httplib::Request&, httplib::Response& res) {
                ++hits;
                res.status = 401;
                res.set_content("{}", "application/json");
              });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig cfg;
  cfg.endpoint_url =
      "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.model_name = "m";
  cfg.max_retries = 3;
  cfg.backoff_base = std::chrono::milliseconds(1);
  HttpChatBackend backend(cfg);
  EXPECT_THROW(backend.complete({{"user", "hi"}}), transport_error);
  EXPECT_EQ(hits.load(), 1);
  server.stop();
  t.join();
}

// ---------------------------------------------------------------------------
// mock_ttr_oracle
// ---------------------------------------------------------------------------

TEST(TtrOracle, PrefersVocabularyThatSetAMisses) {
  // Brute force over both options: adding the duplicate text drops the
  // combined TTR below the base, adding fresh vocabulary keeps it at 100.
  std::vector<Sample> all = {
      testsup::make_sample(0, "the cat sat", "-"),
      testsup::make_sample(1, "pad", "-"),
      testsup::make_sample(2, "pad", "-"),
      testsup::make_sample(3, "pad", "-"),
      testsup::make_sample(4, "pad", "-"),
      testsup::make_sample(5, "pad", "-"),
      testsup::make_sample(6, "pad", "-"),
      testsup::make_sample(7, "the cat sat", "-"),
      testsup::make_sample(8, "pad", "-"),
      testsup::make_sample(9, "quantum flux rises", "-"),
  };
  Dataset ds = Dataset::from_samples(std::move(all));
  SelectorDecision d =
      mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {7, 9}),
                      FieldPolicy::instruction_only);
  EXPECT_EQ(d.chosen_id, 9);
}

TEST(TtrOracle, SingletonWindowPicksThatSample) {
  Dataset ds = corpus_from_texts({"a", "b"});
  SelectorDecision d = mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {1}));
  EXPECT_EQ(d.chosen_id, 1);
}

TEST(TtrOracle, IdenticalTextTieGoesToSmallerId) {
  Dataset ds = corpus_from_texts({"base text", "same same", "same same"});
  SelectorDecision d =
      mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {2, 1}));
  EXPECT_EQ(d.chosen_id, 1);
}

TEST(TtrOracle, PureFunctionOfItsInputs) {
  Dataset ds = corpus_from_texts({"alpha beta", "gamma delta", "alpha gamma"});
  SelectorDecision d1 =
      mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {1, 2}));
  SelectorDecision d2 =
      mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {1, 2}));
  EXPECT_EQ(d1.chosen_id, d2.chosen_id);
}

TEST(TtrOracle, EmptyCandidateWindowFails) {
  Dataset ds = corpus_from_texts({"a"});
  EXPECT_THROW(mock_ttr_oracle(SampleView(ds, {0}), SampleView(ds, {})),
               config_error);
}

}  // namespace
