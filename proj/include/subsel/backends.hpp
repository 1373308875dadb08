#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "subsel/errors.hpp"
#include "subsel/metrics.hpp"
#include "subsel/prompting.hpp"
#include "subsel/rng.hpp"

namespace subsel {

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Anything that can answer a chat request with a text completion.
/// Implementations must be safe to share across the judge's worker threads
/// unless documented otherwise.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
  virtual std::string name() const = 0;
};

struct BackendConfig {
  std::string endpoint_url = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model_name;
  double temperature = 0.0;
  int max_retries = 2;
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff_base{250};
  /// Name of the environment variable holding the bearer token. The key
  /// itself never appears in configs or provenance files.
  std::string api_key_env = "OPENAI_API_KEY";

  void validate() const {
    if (temperature < 0.0) throw config_error("temperature must be >= 0");
    if (max_retries < 0) throw config_error("max_retries must be >= 0");
    if (timeout.count() <= 0) throw config_error("timeout must be positive");
  }
};

/// Client for an OpenAI-compatible chat-completions endpoint. Request body:
/// {"messages": [{"content", "role"}...], "model": ..., "temperature": ...},
/// bearer token from the configured environment variable. Transport errors
/// retry with exponential backoff and jitter; authentication failures do not
/// retry. A fresh connection is opened per request.
// TODO: reuse connections across requests once call volume makes it matter.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto scheme_end = cfg_.endpoint_url.find("://");
    if (scheme_end == std::string::npos)
      throw config_error("endpoint_url must start with http:// or https://");
    const auto path_start = cfg_.endpoint_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
      throw config_error("endpoint_url must include a path");
    base_ = cfg_.endpoint_url.substr(0, path_start);
    path_ = cfg_.endpoint_url.substr(path_start);
  }

  /// The exact wire bytes for a request; exposed so conformance tests can
  /// compare against golden fixtures.
  std::string request_body(const std::vector<ChatMessage>& messages) const {
    nlohmann::json body;
    body["model"] = cfg_.model_name;
    body["temperature"] = cfg_.temperature;
    body["messages"] = nlohmann::json::array();
    for (const ChatMessage& m : messages)
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    return body.dump();
  }

  std::string complete(const std::vector<ChatMessage>& messages) override {
    const std::string body = request_body(messages);
    httplib::Headers headers{{"Content-Type", "application/json"}};
    if (const char* key = std::getenv(cfg_.api_key_env.c_str());
        key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_failure = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt);
      httplib::Client client(base_);
      client.set_connection_timeout(cfg_.timeout);
      client.set_read_timeout(cfg_.timeout);
      client.set_write_timeout(cfg_.timeout);
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_failure = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401 || res->status == 403)
        throw transport_error("authentication failed (HTTP " +
                              std::to_string(res->status) + ") at " + base_);
      if (res->status != 200) {
        last_failure = "HTTP " + std::to_string(res->status);
        continue;
      }
      try {
        const nlohmann::json reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content")
            .get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        last_failure = std::string("malformed completion payload: ") + e.what();
      }
    }
    throw transport_error("chat request to " + base_ + " failed after " +
                          std::to_string(cfg_.max_retries + 1) +
                          " attempts: " + last_failure);
  }

  std::string name() const override { return "http:" + cfg_.model_name; }

  const BackendConfig& config() const { return cfg_; }

 private:
  void backoff(int attempt) const {
    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    const auto base = cfg_.backoff_base.count();
    const auto delay = base << (attempt - 1);
    const auto jitter = static_cast<long long>(
        uniform_below(jitter_rng, static_cast<std::uint64_t>(base) / 2 + 1));
    std::this_thread::sleep_for(std::chrono::milliseconds(delay + jitter));
  }

  BackendConfig cfg_;
  std::string base_;
  std::string path_;
};

/// Replays a fixed list of responses, one per call, in order. Not
/// thread-safe; intended for the strictly sequential selection loop and for
/// deterministic tests.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> responses)
      : responses_(std::move(responses)) {
    if (responses_.empty())
      throw config_error("scripted backend needs at least one response");
  }

  static ScriptedBackend from_labels(const std::vector<char>& labels) {
    std::vector<std::string> responses;
    responses.reserve(labels.size());
    for (char l : labels)
      responses.push_back(std::string("[") + l + "]-Element");
    return ScriptedBackend(std::move(responses));
  }

  std::string complete(const std::vector<ChatMessage>&) override {
    if (next_ >= responses_.size())
      throw script_exhausted_error("script exhausted after " +
                                   std::to_string(responses_.size()) +
                                   " responses");
    ++calls_;
    return responses_[next_++];
  }

  std::string name() const override { return "scripted"; }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
  std::size_t calls_ = 0;
};

/// Adapts a function to the backend interface. Thread-safe iff the function
/// is.
class CallbackBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
  explicit CallbackBackend(Fn fn, std::string name = "callback")
      : fn_(std::move(fn)), name_(std::move(name)) {}

  std::string complete(const std::vector<ChatMessage>& messages) override {
    return fn_(messages);
  }
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

enum class FallbackPolicy { uniform_random, first_candidate, abort_run };

inline std::string to_string(FallbackPolicy p) {
  switch (p) {
    case FallbackPolicy::uniform_random: return "uniform-random";
    case FallbackPolicy::first_candidate: return "first-candidate";
    case FallbackPolicy::abort_run: return "abort";
  }
  return "uniform-random";
}

inline FallbackPolicy fallback_policy_from_string(std::string_view s) {
  if (s == "uniform-random") return FallbackPolicy::uniform_random;
  if (s == "first-candidate") return FallbackPolicy::first_candidate;
  if (s == "abort") return FallbackPolicy::abort_run;
  throw config_error("unknown fallback policy: " + std::string(s));
}

/// One oracle verdict for one selection step.
struct SelectorDecision {
  std::int64_t chosen_id = 0;
  char label = 0;
  std::string raw_response;
  int attempts = 1;
  std::chrono::duration<double> latency{0.0};
  std::string backend_name;
  bool used_fallback = false;
};

struct SelectPolicy {
  int max_parse_retries = 2;
  FallbackPolicy fallback = FallbackPolicy::uniform_random;
};

/// Queries the backend for a choice over the prompt's candidate window.
/// Unparseable replies are re-queried up to max_parse_retries times with the
/// format reminder appended to the user message. When retries run out, the
/// fallback policy decides: uniform_random draws one uniform_below(rng, |B'|)
/// index from `rng` (the only RNG consumption in this function),
/// first_candidate takes label A, abort_run throws. Transport errors
/// propagate untouched.
inline SelectorDecision select(const SelectionPrompt& prompt,
                               ChatBackend& backend,
                               const SelectPolicy& policy,
                               std::mt19937_64& rng) {
  std::vector<ChatMessage> messages;
  if (!prompt.system_text.empty())
    messages.push_back({"system", prompt.system_text});
  messages.push_back({"user", prompt.user_text});

  SelectorDecision decision;
  decision.backend_name = backend.name();

  const auto started = std::chrono::steady_clock::now();
  const auto stamp_latency = [&] {
    decision.latency = std::chrono::steady_clock::now() - started;
  };

  std::string raw;
  for (int attempt = 0; attempt <= policy.max_parse_retries; ++attempt) {
    raw = backend.complete(messages);
    decision.attempts = attempt + 1;
    try {
      const ParsedChoice choice = parse_choice(raw, prompt);
      decision.chosen_id = choice.candidate_id;
      decision.label = choice.label;
      decision.raw_response = std::move(raw);
      stamp_latency();
      return decision;
    } catch (const parse_error&) {
      if (attempt == 0) {
        // Resend immediately with the one-line reminder appended.
        messages.back().content =
            prompt.user_text + "\n\n" + format_reminder_line();
      }
    }
  }

  stamp_latency();
  decision.raw_response = std::move(raw);
  decision.used_fallback = true;
  switch (policy.fallback) {
    case FallbackPolicy::abort_run:
      throw run_aborted_error("selector response unparseable after " +
                              std::to_string(decision.attempts) +
                              " attempts and fallback policy is abort");
    case FallbackPolicy::first_candidate:
      decision.chosen_id = prompt.b_window_ids.front();
      break;
    case FallbackPolicy::uniform_random: {
      const auto idx = static_cast<std::size_t>(
          uniform_below(rng, prompt.b_window_ids.size()));
      decision.chosen_id = prompt.b_window_ids[idx];
      break;
    }
  }
  decision.label = *prompt.label_for_id(decision.chosen_id);
  return decision;
}

/// Deterministic offline stand-in for the LLM oracle: picks the candidate
/// with the largest marginal gain in concatenated-text TTR over the selected
/// window, ties broken by the smallest sample id. The TTR of an empty window
/// counts as zero.
inline SelectorDecision mock_ttr_oracle(
    const SampleView& a_window, const SampleView& b_window,
    FieldPolicy policy = FieldPolicy::instruction_and_answer) {
  if (b_window.empty())
    throw config_error("mock_ttr_oracle: empty candidate window");

  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> base_tokens;
  for (const Sample& s : a_window) {
    TokenStream stream = tokenize(sample_text(s, policy));
    base_tokens.insert(base_tokens.end(),
                       std::make_move_iterator(stream.tokens.begin()),
                       std::make_move_iterator(stream.tokens.end()));
  }
  const auto stream_ttr = [](const std::vector<std::string>& tokens) {
    if (tokens.empty()) return 0.0;
    TokenStream s;
    s.tokens = tokens;
    s.tokenizer_id = std::string(kDefaultTokenizer);
    return ttr(s);
  };
  const double base = stream_ttr(base_tokens);

  std::int64_t best_id = -1;
  double best_gain = 0.0;
  for (const Sample& s : b_window) {
    std::vector<std::string> merged = base_tokens;
    TokenStream stream = tokenize(sample_text(s, policy));
    merged.insert(merged.end(),
                  std::make_move_iterator(stream.tokens.begin()),
                  std::make_move_iterator(stream.tokens.end()));
    const double gain = stream_ttr(merged) - base;
    if (best_id < 0 || gain > best_gain ||
        (gain == best_gain && s.id < best_id)) {
      best_id = s.id;
      best_gain = gain;
    }
  }

  SelectorDecision decision;
  decision.chosen_id = best_id;
  decision.backend_name = "mock-ttr";
  decision.raw_response = "ttr marginal gain " + std::to_string(best_gain);
  decision.latency = std::chrono::steady_clock::now() - started;
  return decision;
}

/// The selection loop's oracle seam: given the rendered prompt and the two
/// windows, produce a decision. chosen_id must come from the candidate
/// window.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual SelectorDecision choose(const SelectionPrompt& prompt,
                                  const SampleView& a_window,
                                  const SampleView& b_window,
                                  std::mt19937_64& rng) = 0;
  virtual std::string name() const = 0;
};

/// F implemented by a chat backend through the selection prompt.
class LlmSelector : public Selector {
 public:
  LlmSelector(ChatBackend& backend, SelectPolicy policy)
      : backend_(backend), policy_(policy) {}

  SelectorDecision choose(const SelectionPrompt& prompt, const SampleView&,
                          const SampleView&, std::mt19937_64& rng) override {
    return select(prompt, backend_, policy_, rng);
  }
  std::string name() const override { return backend_.name(); }

 private:
  ChatBackend& backend_;
  SelectPolicy policy_;
};

/// F implemented by the deterministic TTR marginal-gain oracle.
class TtrOracleSelector : public Selector {
 public:
  explicit TtrOracleSelector(
      FieldPolicy policy = FieldPolicy::instruction_and_answer)
      : policy_(policy) {}

  SelectorDecision choose(const SelectionPrompt& prompt,
                          const SampleView& a_window,
                          const SampleView& b_window,
                          std::mt19937_64&) override {
    SelectorDecision d = mock_ttr_oracle(a_window, b_window, policy_);
    d.label = *prompt.label_for_id(d.chosen_id);
    return d;
  }
  std::string name() const override { return "mock-ttr"; }

 private:
  FieldPolicy policy_;
};

}  // namespace subsel
