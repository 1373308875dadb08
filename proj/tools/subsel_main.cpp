// subsel command-line interface: select / metrics / judge / baseline.
//
// Configuration comes from a single JSON file (--config) plus flag
// overrides; flags win. Every command writes its artifacts under --out with
// stable filenames and emits a config snapshot sufficient to reproduce the
// run. API keys are only ever read from an environment variable.

#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "subsel/backends.hpp"
#include "subsel/corpus.hpp"
#include "subsel/io.hpp"
#include "subsel/judge.hpp"
#include "subsel/metrics.hpp"
#include "subsel/prompting.hpp"
#include "subsel/selection.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;
constexpr int kExitData = 4;

volatile std::sig_atomic_t g_interrupted = 0;
void handle_interrupt(int) { g_interrupted = 1; }

// ---------------------------------------------------------------------------
// config file + flag override plumbing
// ---------------------------------------------------------------------------

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json cfg = subsel::load_json_file(path);
  if (!cfg.is_object())
    throw subsel::config_error(path + ": config root must be a JSON object");
  return cfg;
}

const json* section(const json& root, const char* name) {
  const auto it = root.find(name);
  if (it == root.end()) return nullptr;
  if (!it->is_object())
    throw subsel::config_error(std::string("config section \"") + name +
                               "\" must be an object");
  return &*it;
}

template <typename T>
T pick(const std::optional<T>& flag, const json* sec, const char* key, T def) {
  if (flag) return *flag;
  if (sec != nullptr) {
    const auto it = sec->find(key);
    if (it != sec->end()) {
      try {
        return it->get<T>();
      } catch (const json::exception&) {
        throw subsel::config_error(std::string("config key \"") + key +
                                   "\" has the wrong type");
      }
    }
  }
  return def;
}

subsel::DatasetFormat format_from_string(const std::string& s) {
  if (s == "auto") return subsel::DatasetFormat::auto_detect;
  if (s == "jsonl") return subsel::DatasetFormat::jsonl;
  if (s == "json-array" || s == "json")
    return subsel::DatasetFormat::json_array;
  throw subsel::config_error("unknown dataset format: " + s);
}

std::vector<std::int64_t> load_id_list(const fs::path& path) {
  const json j = subsel::load_json_file(path);
  if (j.is_array()) return j.get<std::vector<std::int64_t>>();
  if (j.is_object() && j.contains("selected_ids"))
    return j.at("selected_ids").get<std::vector<std::int64_t>>();
  if (j.is_object() && j.contains("ids"))
    return j.at("ids").get<std::vector<std::int64_t>>();
  throw subsel::data_error(path.string() +
                           ": expected a JSON id array (or an object with "
                           "\"selected_ids\"/\"ids\")");
}

std::vector<std::string> load_script_file(const fs::path& path) {
  const json j = subsel::load_json_file(path);
  if (!j.is_array())
    throw subsel::data_error(path.string() +
                             ": script must be a JSON array of responses");
  return j.get<std::vector<std::string>>();
}

struct DatasetArgs {
  std::optional<std::string> path;
  std::optional<std::string> format;

  subsel::Dataset load(const json& cfg) const {
    const json* sec = section(cfg, "dataset");
    const std::string p =
        pick(path, sec, "path", std::string());
    if (p.empty())
      throw subsel::config_error("no dataset path given (--dataset or "
                                 "config dataset.path)");
    const std::string f = pick(format, sec, "format", std::string("auto"));
    return subsel::load_dataset(p, format_from_string(f));
  }
};

void add_dataset_flags(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--dataset", args.path, "dataset file (JSONL or JSON array)");
  cmd->add_option("--format", args.format,
                  "dataset format: auto | jsonl | json-array");
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

struct SelectArgs {
  DatasetArgs dataset;
  std::optional<std::size_t> k;
  std::optional<double> fraction;
  std::optional<std::size_t> la, lb;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::size_t>> rounds;
  std::optional<std::string> init_ids_path;
  std::optional<std::string> fallback;
  std::optional<int> max_retries;
  std::optional<std::string> backend_kind;
  std::optional<std::string> endpoint, model, api_key_env;
  std::optional<double> temperature;
  std::optional<int> timeout_ms;
  std::optional<std::string> template_path;
  std::optional<std::string> script_path;
  std::optional<std::string> replay_path;
  std::optional<std::string> metrics_policy;
  bool resume = false;
};

subsel::BackendConfig backend_config_from(const SelectArgs& a, const json& cfg) {
  const json* sec = section(cfg, "backend");
  subsel::BackendConfig b;
  b.endpoint_url = pick(a.endpoint, sec, "endpoint_url", b.endpoint_url);
  b.model_name = pick(a.model, sec, "model", b.model_name);
  b.temperature = pick(a.temperature, sec, "temperature", b.temperature);
  b.max_retries = pick(a.max_retries, sec, "max_retries", b.max_retries);
  b.timeout = std::chrono::milliseconds(
      pick(a.timeout_ms, sec, "timeout_ms",
           static_cast<int>(b.timeout.count())));
  b.api_key_env = pick(a.api_key_env, sec, "api_key_env", b.api_key_env);
  return b;
}

subsel::PromptTemplate template_from(
    const std::optional<std::string>& flag_path, const json& cfg) {
  const json* sec = section(cfg, "prompt");
  const std::string path =
      pick(flag_path, sec, "template_path", std::string());
  subsel::PromptTemplate t = path.empty()
                                 ? subsel::default_prompt_template()
                                 : subsel::load_prompt_template(path);
  if (sec != nullptr) {
    if (sec->contains("icl_demo")) t.icl_demo = sec->at("icl_demo");
    if (sec->contains("a_answer_char_budget"))
      t.a_answer_char_budget = sec->at("a_answer_char_budget");
    if (sec->contains("sample_char_budget"))
      t.sample_char_budget = sec->at("sample_char_budget");
  }
  return t;
}

int cmd_select(const SelectArgs& args, const std::string& config_path,
               const fs::path& out_dir) {
  const json cfg = load_config_file(config_path);
  const subsel::Dataset ds = args.dataset.load(cfg);
  const json* sel = section(cfg, "selection");

  subsel::SelectionConfig sc;
  const auto fraction = pick(args.fraction, sel, "fraction", 0.0);
  sc.target_size = pick(args.k, sel, "k", std::size_t{0});
  if (sc.target_size == 0 && fraction > 0.0)
    sc.target_size = static_cast<std::size_t>(
        fraction * static_cast<double>(ds.size()));
  sc.a_window = pick(args.la, sel, "a_window", sc.a_window);
  sc.b_window = pick(args.lb, sel, "b_window", sc.b_window);
  sc.seed = pick(args.seed, sel, "seed", sc.seed);
  sc.rounds = pick(args.rounds, sel, "rounds", sc.rounds);
  sc.fallback = subsel::fallback_policy_from_string(
      pick(args.fallback, sel, "fallback", std::string("uniform-random")));
  sc.max_retries = pick(args.max_retries, sel, "max_retries", sc.max_retries);
  const std::string init_path =
      pick(args.init_ids_path, sel, "init_ids_path", std::string());
  if (!init_path.empty()) {
    sc.init_policy = subsel::InitPolicy::external_ids;
    sc.init_ids = load_id_list(init_path);
  }
  if (sel != nullptr && sel->contains("carry_over"))
    sc.carry_over = sel->at("carry_over").get<bool>();

  subsel::PromptTemplate tmpl = template_from(args.template_path, cfg);

  // Replay adopts the recorded run's configuration wholesale; only the
  // output directory comes from this invocation.
  std::string backend_kind = pick(args.backend_kind, section(cfg, "backend"),
                                  "kind", std::string("http"));
  std::optional<subsel::SelectionResult> replay_source;
  if (args.replay_path) {
    replay_source = subsel::SelectionResult::load(*args.replay_path);
    sc = replay_source->config;
    backend_kind = "replay";
    if (replay_source->dataset_fingerprint != ds.fingerprint())
      throw subsel::data_error(
          "replay file was recorded against a different dataset");
  }

  sc.validate(ds.size());

  std::unique_ptr<subsel::ChatBackend> chat;
  std::unique_ptr<subsel::Selector> selector;
  subsel::BackendConfig bc = backend_config_from(args, cfg);
  const subsel::SelectPolicy policy{sc.max_retries, sc.fallback};
  if (backend_kind == "http") {
    bc.validate();
    if (bc.model_name.empty())
      throw subsel::config_error("http backend needs a model name");
    const char* key = std::getenv(bc.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw subsel::config_error("environment variable " + bc.api_key_env +
                                 " is empty; the http backend needs an API key");
    chat = std::make_unique<subsel::HttpChatBackend>(bc);
    selector = std::make_unique<subsel::LlmSelector>(*chat, policy);
  } else if (backend_kind == "mock-ttr") {
    const std::string mp = pick(args.metrics_policy, section(cfg, "metrics"),
                                "field_policy",
                                std::string("instruction+answer"));
    selector = std::make_unique<subsel::TtrOracleSelector>(
        subsel::field_policy_from_string(mp));
  } else if (backend_kind == "scripted") {
    if (!args.script_path)
      throw subsel::config_error("scripted backend needs --script");
    chat = std::make_unique<subsel::ScriptedBackend>(
        load_script_file(*args.script_path));
    selector = std::make_unique<subsel::LlmSelector>(*chat, policy);
  } else if (backend_kind == "replay") {
    chat = std::make_unique<subsel::ScriptedBackend>(
        subsel::script_from_log(replay_source->log));
    selector = std::make_unique<subsel::LlmSelector>(*chat, policy);
  } else {
    throw subsel::config_error("unknown backend kind: " + backend_kind);
  }

  fs::create_directories(out_dir);
  json snapshot{{"command", "select"},
                {"dataset",
                 {{"path", ds.source_path()},
                  {"fingerprint", ds.fingerprint()},
                  {"n", ds.size()}}},
                {"selection", sc.to_json()},
                {"backend",
                 {{"kind", backend_kind},
                  {"endpoint_url", bc.endpoint_url},
                  {"model", bc.model_name},
                  {"temperature", bc.temperature},
                  {"api_key_env", bc.api_key_env}}},
                {"template_hash", subsel::prompt_template_hash(tmpl)}};
  subsel::write_json_atomic(out_dir / "config_snapshot.json", snapshot);

  subsel::RunOptions opts;
  opts.checkpoint_path = out_dir / "checkpoint.json";
  opts.resume = args.resume;
  opts.should_stop = [](const subsel::SelectionState&) {
    return g_interrupted != 0;
  };
  std::signal(SIGINT, handle_interrupt);

  const subsel::SelectionResult result =
      subsel::run_multiround(ds, sc, tmpl, *selector, opts);
  result.save(out_dir / "result.json");

  std::printf("selected            %zu ids\n", result.selected_ids.size());
  std::printf("NoI (paper)         %zu\n", result.counters.paper_noi);
  std::printf("selector calls      %zu\n", result.counters.selector_calls);
  std::printf("mean call latency   %.3f s\n", result.counters.mean_latency_s);
  std::printf("wall time (PTC)     %.2f s\n", result.counters.wall_s);
  std::printf("result              %s\n",
              (out_dir / "result.json").string().c_str());
  if (!result.completed) {
    std::printf("run interrupted; resume with --resume\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct MetricsArgs {
  DatasetArgs dataset;
  std::optional<std::string> ids_path;
  std::optional<std::string> scores_path;
  std::optional<std::string> policy;
};

void print_report_row(const char* name, const subsel::MetricsReport& r) {
  std::printf("%-8s n=%-6zu ttr=%-8.3f mtld=%-8.3f sdi=%-8.4f pooled_ttr=%-8.3f "
              "pooled_sdi=%-8.4f instr_tokens=%-6.2f",
              name, r.n_samples, r.ttr, r.mtld, r.sdi, r.pooled_ttr,
              r.pooled_sdi, r.mean_instruction_tokens);
  if (r.mean_quality) std::printf(" quality=%.3f", *r.mean_quality);
  std::printf("\n");
}

int cmd_metrics(const MetricsArgs& args, const std::string& config_path,
                const fs::path& out_dir) {
  const json cfg = load_config_file(config_path);
  const subsel::Dataset ds = args.dataset.load(cfg);
  const subsel::FieldPolicy policy = subsel::field_policy_from_string(
      pick(args.policy, section(cfg, "metrics"), "field_policy",
           std::string("instruction-only")));

  std::optional<subsel::ExternalScores> scores;
  if (args.scores_path) {
    scores = subsel::load_external_scores(*args.scores_path);
    subsel::validate_scores(*scores, ds);
  }
  const subsel::ExternalScores* scores_ptr = scores ? &*scores : nullptr;

  fs::create_directories(out_dir);
  json snapshot{{"command", "metrics"},
                {"dataset",
                 {{"path", ds.source_path()},
                  {"fingerprint", ds.fingerprint()},
                  {"n", ds.size()}}},
                {"field_policy", subsel::to_string(policy)}};
  if (args.ids_path) snapshot["ids_path"] = *args.ids_path;
  if (args.scores_path) snapshot["scores_path"] = *args.scores_path;
  subsel::write_json_atomic(out_dir / "config_snapshot.json", snapshot);

  const subsel::MetricsReport full =
      subsel::corpus_report(ds.samples(), policy, scores_ptr);
  json out{{"dataset_fingerprint", ds.fingerprint()},
           {"full", full.to_json()}};
  print_report_row("full", full);

  if (args.ids_path) {
    const auto ids = load_id_list(*args.ids_path);
    const subsel::SampleView view = subsel::subset_by_ids(ds, ids);
    const subsel::MetricsReport subset =
        subsel::corpus_report(view, policy, scores_ptr);
    out["subset"] = subset.to_json();
    out["subset_ids"] = ids;
    print_report_row("subset", subset);
  }

  subsel::write_json_atomic(out_dir / "metrics_report.json", out);
  std::printf("report              %s\n",
              (out_dir / "metrics_report.json").string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// judge
// ---------------------------------------------------------------------------

struct JudgeArgs {
  std::string file_x, file_y;
  std::optional<std::string> backend_kind;
  std::optional<std::string> endpoint, model, api_key_env;
  std::optional<double> temperature;
  std::optional<int> max_retries, timeout_ms;
  std::optional<std::string> template_path;
  std::optional<std::string> script_path;
  std::optional<int> concurrency;
  bool swap = false;
};

int cmd_judge(const JudgeArgs& args, const std::string& config_path,
              const fs::path& out_dir) {
  const json cfg = load_config_file(config_path);
  const json* jsec = section(cfg, "judge");

  subsel::JudgeTemplate tmpl;
  const std::string tpath =
      pick(args.template_path, jsec, "template_path", std::string());
  if (!tpath.empty()) tmpl = subsel::load_judge_template(tpath);

  int concurrency = pick(args.concurrency, jsec, "concurrency", 4);
  const int max_retries = pick(args.max_retries, jsec, "max_retries", 2);

  std::unique_ptr<subsel::ChatBackend> backend;
  const std::string kind = pick(args.backend_kind, section(cfg, "backend"),
                                "kind", std::string("http"));
  if (kind == "scripted") {
    if (!args.script_path)
      throw subsel::config_error("scripted judge needs --script");
    backend = std::make_unique<subsel::ScriptedBackend>(
        load_script_file(*args.script_path));
    concurrency = 1;  // scripted replies are positional
  } else if (kind == "http") {
    SelectArgs shim;
    shim.endpoint = args.endpoint;
    shim.model = args.model;
    shim.temperature = args.temperature;
    shim.max_retries = args.max_retries;
    shim.timeout_ms = args.timeout_ms;
    shim.api_key_env = args.api_key_env;
    subsel::BackendConfig bc = backend_config_from(shim, cfg);
    bc.validate();
    if (bc.model_name.empty())
      throw subsel::config_error("http judge needs a model name");
    const char* key = std::getenv(bc.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw subsel::config_error("environment variable " + bc.api_key_env +
                                 " is empty; the http judge needs an API key");
    backend = std::make_unique<subsel::HttpChatBackend>(bc);
  } else {
    throw subsel::config_error("unknown judge backend kind: " + kind);
  }

  const auto pairs = subsel::pair_response_files(args.file_x, args.file_y);
  const subsel::JudgeRunResult forward = subsel::run_judgement(
      pairs, *backend, tmpl, concurrency, max_retries);

  fs::create_directories(out_dir);
  std::string verdict_lines;
  for (const subsel::JudgeVerdict& v : forward.verdicts)
    verdict_lines += v.to_json().dump() + "\n";
  subsel::write_text_file_atomic(out_dir / "verdicts.jsonl", verdict_lines);

  json summary{{"file_x", args.file_x},
               {"file_y", args.file_y},
               {"summary", forward.summary.to_json()}};
  if (!forward.invalid.empty()) {
    json inv = json::array();
    for (const auto& p : forward.invalid)
      inv.push_back({{"question_id", p.question_id}, {"reason", p.reason}});
    summary["invalid_pairs"] = inv;
  }

  std::printf("pairs=%zu win=%zu tie=%zu lose=%zu invalid=%zu win_score=%.4f\n",
              pairs.size(), forward.summary.wins, forward.summary.ties,
              forward.summary.losses, forward.summary.invalid,
              forward.summary.score);

  int exit_code = kExitOk;
  if (args.swap) {
    std::vector<subsel::ResponsePair> swapped;
    swapped.reserve(pairs.size());
    for (const subsel::ResponsePair& p : pairs)
      swapped.push_back({p.question_id, p.question, p.answer_y, p.answer_x});
    const subsel::JudgeRunResult backward = subsel::run_judgement(
        swapped, *backend, tmpl, concurrency, max_retries);
    summary["swapped_summary"] = backward.summary.to_json();
    const double identity = forward.summary.score + backward.summary.score;
    summary["antisymmetry_sum"] = identity;
    std::printf("swapped win_score=%.4f identity_sum=%.6f\n",
                backward.summary.score, identity);
    if (std::abs(identity - 2.0) > 1e-9) {
      std::fprintf(stderr,
                   "antisymmetry violated: win_score(X,Y)+win_score(Y,X)=%f\n",
                   identity);
      exit_code = kExitData;
    }
  }

  subsel::write_json_atomic(out_dir / "judge_summary.json", summary);
  std::printf("summary             %s\n",
              (out_dir / "judge_summary.json").string().c_str());
  return exit_code;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

struct BaselineArgs {
  DatasetArgs dataset;
  std::string method;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scores_path;
};

int cmd_baseline(const BaselineArgs& args, const std::string& config_path,
                 const fs::path& out_dir) {
  const json cfg = load_config_file(config_path);
  const subsel::Dataset ds = args.dataset.load(cfg);
  const std::size_t k = pick(args.k, section(cfg, "selection"), "k",
                             std::size_t{0});
  if (k == 0) throw subsel::config_error("baseline needs --k >= 1");

  std::vector<std::int64_t> ids;
  json meta{{"method", args.method},
            {"k", k},
            {"dataset_fingerprint", ds.fingerprint()}};
  if (args.method == "random") {
    const std::uint64_t seed = args.seed.value_or(0);
    ids = subsel::random_baseline(ds.size(), k, seed);
    meta["seed"] = seed;
  } else if (args.method == "pointwise") {
    if (!args.scores_path)
      throw subsel::config_error("pointwise baseline needs --scores");
    const subsel::ExternalScores scores =
        subsel::load_external_scores(*args.scores_path);
    subsel::validate_scores(scores, ds);
    std::vector<double> dense(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto it = scores.scores.find(static_cast<std::int64_t>(i));
      if (it == scores.scores.end())
        throw subsel::data_error("scores file is missing id " +
                                 std::to_string(i));
      dense[i] = it->second;
    }
    ids = subsel::pointwise_rank_baseline(dense, k);
  } else {
    throw subsel::config_error("unknown baseline method: " + args.method);
  }

  meta["ids"] = ids;
  fs::create_directories(out_dir);
  subsel::write_json_atomic(out_dir / "baseline_ids.json", meta);
  std::printf("baseline %s wrote %zu ids to %s\n", args.method.c_str(),
              ids.size(), (out_dir / "baseline_ids.json").string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subsel: choice-based greedy selection of instruction-tuning "
               "subsets, with diversity metrics and pairwise judging"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  app.add_option("--config", config_path, "JSON config file")
      ->envname("SUBSEL_CONFIG");
  app.add_option("--out", out_dir, "output directory (default: out)");

  SelectArgs select_args;
  CLI::App* select = app.add_subcommand(
      "select", "run the greedy choice-based selection loop");
  select->fallthrough();
  add_dataset_flags(select, select_args.dataset);
  select->add_option("--k", select_args.k, "target subset size K");
  select->add_option("--fraction", select_args.fraction,
                     "target size as a fraction of N (floor), used when --k "
                     "is absent");
  select->add_option("--la", select_args.la, "selected-window size L_A");
  select->add_option("--lb", select_args.lb, "candidate-window size L_B");
  select->add_option("--seed", select_args.seed, "RNG seed");
  select
      ->add_option("--rounds", select_args.rounds,
                   "intermediate round sizes ending in K, e.g. 9000,5000")
      ->delimiter(',');
  select->add_option("--init-ids", select_args.init_ids_path,
                     "JSON id list seeding the initial window "
                     "(e.g. a clustering-based initialization)");
  select->add_option("--fallback", select_args.fallback,
                     "parse-failure fallback: uniform-random | "
                     "first-candidate | abort");
  select->add_option("--max-retries", select_args.max_retries,
                     "parse/transport retry budget");
  select->add_option("--backend", select_args.backend_kind,
                     "selector backend: http | mock-ttr | scripted");
  select->add_option("--endpoint", select_args.endpoint,
                     "chat-completions endpoint URL");
  select->add_option("--model", select_args.model, "selector model name");
  select->add_option("--temperature", select_args.temperature,
                     "sampling temperature (default 0.0)");
  select->add_option("--timeout-ms", select_args.timeout_ms,
                     "per-request timeout");
  select->add_option("--api-key-env", select_args.api_key_env,
                     "environment variable holding the API key");
  select->add_option("--template", select_args.template_path,
                     "selection prompt template file");
  select->add_option("--script", select_args.script_path,
                     "scripted backend response file (JSON array)");
  select->add_option("--replay", select_args.replay_path,
                     "replay a recorded result.json (adopts its config)");
  select->add_flag("--resume", select_args.resume,
                   "resume from the checkpoint in --out");

  MetricsArgs metrics_args;
  CLI::App* metrics = app.add_subcommand(
      "metrics", "diversity/quality report for a dataset and optional subset");
  metrics->fallthrough();
  add_dataset_flags(metrics, metrics_args.dataset);
  metrics->add_option("--ids", metrics_args.ids_path,
                      "JSON id list (or a result.json) naming the subset");
  metrics->add_option("--scores", metrics_args.scores_path,
                      "external per-id quality scores JSON");
  metrics->add_option("--policy", metrics_args.policy,
                      "field policy: instruction-only | instruction+answer");

  JudgeArgs judge_args;
  CLI::App* judge = app.add_subcommand(
      "judge", "order-swapped pairwise comparison of two response files");
  judge->fallthrough();
  judge->add_option("--file-x", judge_args.file_x, "model X responses (JSONL)")
      ->required();
  judge->add_option("--file-y", judge_args.file_y, "model Y responses (JSONL)")
      ->required();
  judge->add_option("--backend", judge_args.backend_kind,
                    "judge backend: http | scripted");
  judge->add_option("--endpoint", judge_args.endpoint, "endpoint URL");
  judge->add_option("--model", judge_args.model, "judge model name");
  judge->add_option("--temperature", judge_args.temperature, "temperature");
  judge->add_option("--timeout-ms", judge_args.timeout_ms, "request timeout");
  judge->add_option("--api-key-env", judge_args.api_key_env,
                    "environment variable holding the API key");
  judge->add_option("--max-retries", judge_args.max_retries, "retry budget");
  judge->add_option("--template", judge_args.template_path,
                    "judge prompt template file");
  judge->add_option("--script", judge_args.script_path,
                    "scripted judge response file (JSON array)");
  judge->add_option("--concurrency", judge_args.concurrency,
                    "max pairs in flight");
  judge->add_flag("--swap", judge_args.swap,
                  "rerun with files exchanged and check the antisymmetry "
                  "identity");

  BaselineArgs baseline_args;
  CLI::App* baseline =
      app.add_subcommand("baseline", "random or pointwise top-K id list");
  baseline->fallthrough();
  add_dataset_flags(baseline, baseline_args.dataset);
  baseline
      ->add_option("--method", baseline_args.method,
                   "baseline method: random | pointwise")
      ->required();
  baseline->add_option("--k", baseline_args.k, "subset size K");
  baseline->add_option("--seed", baseline_args.seed, "RNG seed (random)");
  baseline->add_option("--scores", baseline_args.scores_path,
                       "external scores JSON (pointwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (select->parsed())
      return cmd_select(select_args, config_path, out_dir);
    if (metrics->parsed())
      return cmd_metrics(metrics_args, config_path, out_dir);
    if (judge->parsed()) return cmd_judge(judge_args, config_path, out_dir);
    if (baseline->parsed())
      return cmd_baseline(baseline_args, config_path, out_dir);
  } catch (const subsel::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const subsel::transport_error& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
    return kExitTransport;
  } catch (const subsel::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const subsel::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
