#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsel/backends.hpp"
#include "subsel/corpus.hpp"
#include "subsel/errors.hpp"
#include "subsel/io.hpp"
#include "subsel/prompting.hpp"
#include "subsel/rng.hpp"

namespace subsel {

enum class InitPolicy { random_window, external_ids };

inline std::string to_string(InitPolicy p) {
  return p == InitPolicy::random_window ? "random" : "external-id-list";
}

inline InitPolicy init_policy_from_string(std::string_view s) {
  if (s == "random") return InitPolicy::random_window;
  if (s == "external-id-list") return InitPolicy::external_ids;
  throw config_error("unknown init policy: " + std::string(s));
}

/// Knobs of one selection run. `rounds` holds intermediate subset sizes for
/// coarse-to-fine refinement and must end in `target_size`; empty means one
/// round straight to `target_size`.
struct SelectionConfig {
  std::size_t target_size = 0;   ///< K
  std::size_t a_window = 20;     ///< L_A, also the random-init window size
  std::size_t b_window = 20;     ///< L_B
  std::uint64_t seed = 0;
  std::vector<std::size_t> rounds;
  InitPolicy init_policy = InitPolicy::random_window;
  std::vector<std::int64_t> init_ids;
  FallbackPolicy fallback = FallbackPolicy::uniform_random;
  int max_retries = 2;
  /// Carry the head of the previous round's selection into the next round's
  /// initial window instead of re-initializing randomly.
  bool carry_over = false;

  void validate(std::size_t n) const {
    std::vector<std::string> problems;
    if (n == 0) problems.push_back("dataset is empty");
    if (target_size == 0) problems.push_back("target size K must be >= 1");
    if (target_size > n)
      problems.push_back("target size K=" + std::to_string(target_size) +
                         " exceeds dataset size N=" + std::to_string(n));
    if (a_window == 0) problems.push_back("L_A must be >= 1");
    if (b_window == 0 || b_window > kMaxCandidateWindow)
      problems.push_back("L_B must lie in [1, 26]");
    if (a_window > target_size)
      problems.push_back("L_A must not exceed K");
    if (!rounds.empty()) {
      if (rounds.back() != target_size)
        problems.push_back("last round size must equal K");
      if (rounds.front() > n)
        problems.push_back("first round size exceeds dataset size");
      for (std::size_t i = 0; i + 1 < rounds.size(); ++i)
        if (rounds[i] <= rounds[i + 1]) {
          problems.push_back("round sizes must be strictly decreasing");
          break;
        }
      for (std::size_t size : rounds)
        if (size < a_window) {
          problems.push_back("every round size must be >= L_A");
          break;
        }
    }
    if (init_policy == InitPolicy::external_ids) {
      if (init_ids.empty())
        problems.push_back("external init policy needs a non-empty id list");
      if (init_ids.size() > target_size)
        problems.push_back("external init list is larger than K");
      std::unordered_set<std::int64_t> seen;
      for (std::int64_t id : init_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= n) {
          problems.push_back("external init id out of range: " +
                             std::to_string(id));
          break;
        }
        if (!seen.insert(id).second) {
          problems.push_back("external init list has duplicate id: " +
                             std::to_string(id));
          break;
        }
      }
    }
    if (max_retries < 0) problems.push_back("max_retries must be >= 0");
    if (!problems.empty()) {
      std::string msg = "invalid selection config:";
      for (const std::string& p : problems) msg += "\n  - " + p;
      throw config_error(msg);
    }
  }

  nlohmann::json to_json() const {
    return {{"k", target_size},
            {"a_window", a_window},
            {"b_window", b_window},
            {"seed", seed},
            {"rounds", rounds},
            {"init_policy", subsel::to_string(init_policy)},
            {"init_ids", init_ids},
            {"fallback", subsel::to_string(fallback)},
            {"max_retries", max_retries},
            {"carry_over", carry_over}};
  }

  static SelectionConfig from_json(const nlohmann::json& j) {
    SelectionConfig cfg;
    cfg.target_size = j.at("k").get<std::size_t>();
    cfg.a_window = j.value("a_window", std::size_t{20});
    cfg.b_window = j.value("b_window", std::size_t{20});
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.rounds = j.value("rounds", std::vector<std::size_t>{});
    cfg.init_policy =
        init_policy_from_string(j.value("init_policy", std::string("random")));
    cfg.init_ids = j.value("init_ids", std::vector<std::int64_t>{});
    cfg.fallback = fallback_policy_from_string(
        j.value("fallback", std::string("uniform-random")));
    cfg.max_retries = j.value("max_retries", 2);
    cfg.carry_over = j.value("carry_over", false);
    return cfg;
  }

  std::vector<std::size_t> round_targets() const {
    return rounds.empty() ? std::vector<std::size_t>{target_size} : rounds;
  }
};

/// Provenance of one selection step.
struct IterationRecord {
  std::size_t step = 0;   ///< 0-based across the whole run
  std::size_t round = 0;  ///< which refinement round produced it
  std::vector<std::int64_t> a_window_ids;
  std::vector<std::int64_t> b_window_ids;
  SelectorDecision decision;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"round", round},
            {"a_window", a_window_ids},
            {"b_window", b_window_ids},
            {"chosen_id", decision.chosen_id},
            {"label", std::string(1, decision.label ? decision.label : '?')},
            {"raw_response", decision.raw_response},
            {"attempts", decision.attempts},
            {"fallback", decision.used_fallback},
            {"backend", decision.backend_name},
            {"latency_ms", decision.latency.count() * 1000.0},
            {"wall_ms", wall_ms}};
  }

  static IterationRecord from_json(const nlohmann::json& j) {
    IterationRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.round = j.value("round", std::size_t{0});
    r.a_window_ids = j.at("a_window").get<std::vector<std::int64_t>>();
    r.b_window_ids = j.at("b_window").get<std::vector<std::int64_t>>();
    r.decision.chosen_id = j.at("chosen_id").get<std::int64_t>();
    const auto label = j.value("label", std::string("?"));
    r.decision.label = label.empty() || label == "?" ? 0 : label[0];
    r.decision.raw_response = j.value("raw_response", std::string());
    r.decision.attempts = j.value("attempts", 1);
    r.decision.used_fallback = j.value("fallback", false);
    r.decision.backend_name = j.value("backend", std::string());
    r.decision.latency =
        std::chrono::duration<double>(j.value("latency_ms", 0.0) / 1000.0);
    r.wall_ms = j.value("wall_ms", 0.0);
    return r;
  }
};

/// Live state of a run. `selected` and `candidates` partition the current
/// round's pool; ids dropped by earlier rounds are gone from both.
struct SelectionState {
  std::vector<std::int64_t> selected;
  std::vector<std::int64_t> candidates;  // kept sorted ascending
  std::mt19937_64 rng;
  std::vector<IterationRecord> log;
  std::size_t round_index = 0;
  std::vector<std::int64_t> round_pool;
  /// Initial window sizes per round, for the call-count bookkeeping.
  std::vector<std::size_t> round_initial_sizes;
};

namespace detail {

inline void start_round(SelectionState& state,
                        std::span<const std::int64_t> pool,
                        const SelectionConfig& cfg, std::size_t round_index) {
  state.round_index = round_index;
  state.round_pool.assign(pool.begin(), pool.end());
  std::sort(state.round_pool.begin(), state.round_pool.end());

  const std::size_t target = cfg.round_targets().at(round_index);
  if (target > state.round_pool.size())
    throw config_error("round " + std::to_string(round_index + 1) +
                       " target exceeds its pool size");

  if (round_index == 0 && cfg.init_policy == InitPolicy::external_ids) {
    state.selected = cfg.init_ids;
  } else if (round_index > 0 && cfg.carry_over) {
    const std::size_t keep = std::min(cfg.a_window, target);
    state.selected.resize(keep);
  } else {
    const std::size_t init = std::min(cfg.a_window, target);
    state.selected = sample_without_replacement(
        state.rng, std::span<const std::int64_t>(state.round_pool), init);
  }
  state.round_initial_sizes.push_back(state.selected.size());

  std::unordered_set<std::int64_t> chosen(state.selected.begin(),
                                          state.selected.end());
  state.candidates.clear();
  for (std::int64_t id : state.round_pool)
    if (!chosen.count(id)) state.candidates.push_back(id);
}

}  // namespace detail

/// Fresh state for round one: the initial window drawn from the whole
/// dataset (or taken verbatim from cfg.init_ids), everything else a
/// candidate.
inline SelectionState init_state(const Dataset& ds,
                                 const SelectionConfig& cfg) {
  cfg.validate(ds.size());
  SelectionState state;
  state.rng = std::mt19937_64(cfg.seed);
  const auto ids = ds.all_ids();
  detail::start_round(state, ids, cfg, 0);
  return state;
}

/// Draws the two windows for one step, A-window first, then B-window; both
/// without replacement from the current state, both consuming state.rng.
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>
sample_windows(SelectionState& state, const SelectionConfig& cfg) {
  if (state.candidates.empty())
    throw error("sample_windows: candidate pool is empty");
  auto a = sample_without_replacement(
      state.rng, std::span<const std::int64_t>(state.selected),
      std::min(cfg.a_window, state.selected.size()));
  auto b = sample_without_replacement(
      state.rng, std::span<const std::int64_t>(state.candidates),
      std::min(cfg.b_window, state.candidates.size()));
  return {std::move(a), std::move(b)};
}

/// One greedy iteration: draw windows, ask the selector, move the chosen id
/// from candidates to selected, log the step. On transport failure the state
/// (including the RNG stream) is rolled back so the step can be retried.
inline void step(SelectionState& state, const SelectionConfig& cfg,
                 const PromptTemplate& tmpl, const Dataset& ds,
                 Selector& selector) {
  const auto step_started = std::chrono::steady_clock::now();
  const std::mt19937_64 rng_snapshot = state.rng;
  auto [a_ids, b_ids] = sample_windows(state, cfg);

  IterationRecord record;
  record.step = state.log.size();
  record.round = state.round_index;
  record.a_window_ids = a_ids;
  record.b_window_ids = b_ids;

  try {
    const SampleView a_view(ds, std::move(a_ids));
    const SampleView b_view(ds, std::move(b_ids));
    const SelectionPrompt prompt = build_selection_prompt(a_view, b_view, tmpl);
    record.decision = selector.choose(prompt, a_view, b_view, state.rng);
  } catch (const transport_error&) {
    state.rng = rng_snapshot;
    throw;
  }

  auto it = std::find(state.candidates.begin(), state.candidates.end(),
                      record.decision.chosen_id);
  if (it == state.candidates.end())
    throw error("selector chose id " +
                std::to_string(record.decision.chosen_id) +
                " which is not in the candidate pool");
  state.candidates.erase(it);
  state.selected.push_back(record.decision.chosen_id);

  record.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - step_started)
                       .count();
  state.log.push_back(std::move(record));
}

/// Run-level efficiency accounting. `paper_noi` follows the paper's
/// convention of counting every element of the subset (the while-loop bound
/// |A| = K, summed over rounds); `selector_calls` counts actual oracle
/// invocations, which excludes the randomly initialized window(s).
struct RunCounters {
  std::size_t paper_noi = 0;
  std::size_t selector_calls = 0;
  double total_latency_s = 0.0;
  double mean_latency_s = 0.0;
  double wall_s = 0.0;

  nlohmann::json to_json() const {
    return {{"paper_noi", paper_noi},
            {"selector_calls", selector_calls},
            {"total_latency_s", total_latency_s},
            {"mean_latency_s", mean_latency_s},
            {"wall_s", wall_s}};
  }

  static RunCounters from_json(const nlohmann::json& j) {
    RunCounters c;
    c.paper_noi = j.value("paper_noi", std::size_t{0});
    c.selector_calls = j.value("selector_calls", std::size_t{0});
    c.total_latency_s = j.value("total_latency_s", 0.0);
    c.mean_latency_s = j.value("mean_latency_s", 0.0);
    c.wall_s = j.value("wall_s", 0.0);
    return c;
  }
};

struct SelectionResult {
  SelectionConfig config;
  std::string dataset_fingerprint;
  std::vector<std::int64_t> selected_ids;
  std::vector<IterationRecord> log;
  RunCounters counters;
  bool completed = true;

  nlohmann::json to_json() const {
    nlohmann::json records = nlohmann::json::array();
    for (const IterationRecord& r : log) records.push_back(r.to_json());
    return {{"schema", "subsel-result-v1"},
            {"config", config.to_json()},
            {"dataset_fingerprint", dataset_fingerprint},
            {"selected_ids", selected_ids},
            {"log", std::move(records)},
            {"counters", counters.to_json()},
            {"completed", completed}};
  }

  static SelectionResult from_json(const nlohmann::json& j) {
    SelectionResult r;
    r.config = SelectionConfig::from_json(j.at("config"));
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    r.selected_ids = j.at("selected_ids").get<std::vector<std::int64_t>>();
    for (const auto& rec : j.at("log"))
      r.log.push_back(IterationRecord::from_json(rec));
    r.counters = RunCounters::from_json(j.at("counters"));
    r.completed = j.value("completed", true);
    return r;
  }

  void save(const std::filesystem::path& path) const {
    write_json_atomic(path, to_json());
  }

  static SelectionResult load(const std::filesystem::path& path) {
    return from_json(load_json_file(path));
  }
};

/// Checkpoint schema: the full result plus the live pools and RNG stream,
/// atomically replaced after every step.
inline void save_checkpoint(const SelectionState& state,
                            const SelectionConfig& cfg,
                            const std::string& fingerprint,
                            const std::filesystem::path& path) {
  nlohmann::json records = nlohmann::json::array();
  for (const IterationRecord& r : state.log) records.push_back(r.to_json());
  const nlohmann::json j{{"schema", "subsel-checkpoint-v1"},
                         {"config", cfg.to_json()},
                         {"dataset_fingerprint", fingerprint},
                         {"round_index", state.round_index},
                         {"round_pool", state.round_pool},
                         {"round_initial_sizes", state.round_initial_sizes},
                         {"selected", state.selected},
                         {"candidates", state.candidates},
                         {"rng", rng_to_string(state.rng)},
                         {"log", std::move(records)}};
  write_json_atomic(path, j);
}

inline SelectionState load_checkpoint(const std::filesystem::path& path,
                                      const SelectionConfig& cfg,
                                      const std::string& fingerprint) {
  const nlohmann::json j = load_json_file(path);
  if (j.value("schema", std::string()) != "subsel-checkpoint-v1")
    throw data_error(path.string() + ": not a subsel checkpoint");
  if (j.at("dataset_fingerprint").get<std::string>() != fingerprint)
    throw data_error(path.string() +
                     ": checkpoint belongs to a different dataset");
  if (SelectionConfig::from_json(j.at("config")).to_json() != cfg.to_json())
    throw data_error(path.string() +
                     ": checkpoint belongs to a different configuration");
  SelectionState state;
  state.round_index = j.at("round_index").get<std::size_t>();
  state.round_pool = j.at("round_pool").get<std::vector<std::int64_t>>();
  state.round_initial_sizes =
      j.at("round_initial_sizes").get<std::vector<std::size_t>>();
  state.selected = j.at("selected").get<std::vector<std::int64_t>>();
  state.candidates = j.at("candidates").get<std::vector<std::int64_t>>();
  state.rng = rng_from_string(j.at("rng").get<std::string>());
  for (const auto& rec : j.at("log"))
    state.log.push_back(IterationRecord::from_json(rec));
  return state;
}

struct RunOptions {
  /// Checkpoint file, written after every step when non-empty.
  std::filesystem::path checkpoint_path;
  /// Continue from checkpoint_path when it exists.
  bool resume = false;
  /// Invoked before each step; returning true stops the run early with
  /// completed=false (state is checkpointed when checkpointing is on).
  std::function<bool(const SelectionState&)> should_stop;
};

/// Executes the greedy loop over every configured round. Round r+1 re-runs
/// selection with the previous round's output as its entire pool.
inline SelectionResult run_multiround(const Dataset& ds,
                                      const SelectionConfig& cfg,
                                      const PromptTemplate& tmpl,
                                      Selector& selector,
                                      const RunOptions& opts = {}) {
  cfg.validate(ds.size());
  const auto run_started = std::chrono::steady_clock::now();

  SelectionState state;
  if (opts.resume && !opts.checkpoint_path.empty() &&
      std::filesystem::exists(opts.checkpoint_path)) {
    state = load_checkpoint(opts.checkpoint_path, cfg, ds.fingerprint());
  } else {
    state = init_state(ds, cfg);
  }

  const auto checkpoint = [&] {
    if (!opts.checkpoint_path.empty())
      save_checkpoint(state, cfg, ds.fingerprint(), opts.checkpoint_path);
  };
  checkpoint();

  const std::vector<std::size_t> targets = cfg.round_targets();
  bool stopped = false;
  for (; state.round_index < targets.size() && !stopped;) {
    const std::size_t target = targets[state.round_index];
    while (state.selected.size() < target) {
      if (opts.should_stop && opts.should_stop(state)) {
        stopped = true;
        break;
      }
      step(state, cfg, tmpl, ds, selector);
      checkpoint();
    }
    if (stopped) break;
    if (state.round_index + 1 < targets.size()) {
      const std::vector<std::int64_t> pool = state.selected;
      detail::start_round(state, pool, cfg, state.round_index + 1);
      checkpoint();
    } else {
      ++state.round_index;  // all rounds done
      break;
    }
  }

  SelectionResult result;
  result.config = cfg;
  result.dataset_fingerprint = ds.fingerprint();
  result.selected_ids = state.selected;
  result.log = std::move(state.log);
  result.completed = !stopped;
  result.counters.paper_noi =
      std::accumulate(targets.begin(), targets.end(), std::size_t{0});
  result.counters.selector_calls = result.log.size();
  for (const IterationRecord& r : result.log)
    result.counters.total_latency_s += r.decision.latency.count();
  result.counters.mean_latency_s =
      result.log.empty()
          ? 0.0
          : result.counters.total_latency_s /
                static_cast<double>(result.log.size());
  result.counters.wall_s = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - run_started)
                               .count();
  return result;
}

/// Single-round convenience wrapper; cfg.rounds must be empty or {K}.
inline SelectionResult run(const Dataset& ds, const SelectionConfig& cfg,
                           const PromptTemplate& tmpl, Selector& selector,
                           const RunOptions& opts = {}) {
  if (cfg.rounds.size() > 1)
    throw config_error("run() handles a single round; use run_multiround()");
  return run_multiround(ds, cfg, tmpl, selector, opts);
}

/// Uniform K-subset of {0..n-1} without replacement, in draw order.
inline std::vector<std::int64_t> random_baseline(std::size_t n, std::size_t k,
                                                 std::uint64_t seed) {
  if (k > n) throw config_error("random_baseline: K exceeds N");
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  std::mt19937_64 rng(seed);
  return sample_without_replacement(rng, std::span<const std::int64_t>(ids),
                                    k);
}

/// Ids of the K largest scores, ties to the smaller id, in rank order.
inline std::vector<std::int64_t> pointwise_rank_baseline(
    std::span<const double> scores, std::size_t k) {
  if (k > scores.size())
    throw config_error("pointwise_rank_baseline: K exceeds N");
  std::vector<std::int64_t> ids(scores.size());
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  std::stable_sort(ids.begin(), ids.end(),
                   [&](std::int64_t a, std::int64_t b) {
                     const double sa = scores[static_cast<std::size_t>(a)];
                     const double sb = scores[static_cast<std::size_t>(b)];
                     if (sa != sb) return sa > sb;
                     return a < b;
                   });
  ids.resize(k);
  return ids;
}

/// Turns a run log back into the label script that reproduces it: each step's
/// chosen id mapped to its position in that step's candidate window.
inline std::vector<std::string> script_from_log(
    std::span<const IterationRecord> log) {
  std::vector<std::string> script;
  script.reserve(log.size());
  for (const IterationRecord& r : log) {
    const auto it = std::find(r.b_window_ids.begin(), r.b_window_ids.end(),
                              r.decision.chosen_id);
    if (it == r.b_window_ids.end())
      throw data_error("log step " + std::to_string(r.step) +
                       ": chosen id is not in its candidate window");
    const char label =
        static_cast<char>('A' + (it - r.b_window_ids.begin()));
    script.push_back(std::string("[") + label + "]-Element");
  }
  return script;
}

}  // namespace subsel
