#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsel/backends.hpp"
#include "subsel/errors.hpp"
#include "subsel/io.hpp"

namespace subsel {

/// One question with the two model answers under comparison.
struct ResponsePair {
  std::string question_id;
  std::string question;
  std::string answer_x;
  std::string answer_y;
};

enum class PairOutcome { win, tie, lose };

inline std::string to_string(PairOutcome o) {
  switch (o) {
    case PairOutcome::win: return "win";
    case PairOutcome::tie: return "tie";
    case PairOutcome::lose: return "lose";
  }
  return "tie";
}

/// Scores of one judging order, already mapped back to model X and model Y
/// regardless of presentation order.
struct OrderScores {
  double score_x = 0.0;
  double score_y = 0.0;
  std::string raw_response;
};

struct JudgeVerdict {
  std::string question_id;
  OrderScores order_xy;  ///< X presented first
  OrderScores order_yx;  ///< Y presented first
  PairOutcome outcome = PairOutcome::tie;

  nlohmann::json to_json() const {
    return {{"question_id", question_id},
            {"order_xy", {{"score_x", order_xy.score_x},
                          {"score_y", order_xy.score_y}}},
            {"order_yx", {{"score_x", order_yx.score_x},
                          {"score_y", order_yx.score_y}}},
            {"outcome", to_string(outcome)}};
  }
};

/// Pairwise judging template; {QUESTION}, {ANSWER_A} and {ANSWER_B} mark
/// where the question and the two presented answers go.
struct JudgeTemplate {
  std::string system_text =
      "You are an impartial judge of AI assistant response quality.";
  std::string user_template =
      R"(Compare the two assistant answers to the user question below.
Judge helpfulness, relevance, accuracy, depth and level of detail. Do not
let the order of presentation, the answer length, or the assistant names
influence the verdict.

[Question]
{QUESTION}

[Answer A]
{ANSWER_A}

[Answer B]
{ANSWER_B}

Rate each answer on a 1-10 scale. Output the two scores on the final line
in exactly this format: [[score_a, score_b]])";
};

inline JudgeTemplate default_judge_template() { return JudgeTemplate{}; }

inline JudgeTemplate load_judge_template(const std::filesystem::path& path) {
  JudgeTemplate t;
  t.user_template = read_text_file(path);
  for (std::string_view ph : {"{QUESTION}", "{ANSWER_A}", "{ANSWER_B}"})
    if (t.user_template.find(ph) == std::string::npos)
      throw config_error(path.string() + ": template is missing placeholder " +
                         std::string(ph));
  return t;
}

/// Extracts the two scores from a judge reply. Accepts the bracketed
/// "[[a, b]]" convention anywhere in the text, else a line consisting of
/// exactly two numbers separated by a comma.
inline std::pair<double, double> parse_judge_scores(std::string_view response) {
  const std::string text(response);
  static const std::regex bracketed(
      R"(\[\[\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\]\])");
  std::smatch m;
  if (std::regex_search(text, m, bracketed))
    return {std::stod(m.str(1)), std::stod(m.str(2))};

  static const std::regex pair_line(
      R"(^\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*$)");
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    if (std::regex_match(line, m, pair_line))
      return {std::stod(m.str(1)), std::stod(m.str(2))};
    if (end == text.size()) break;
    start = end + 1;
  }
  throw parse_error("no score pair found in judge response");
}

namespace detail {

enum class OrderResult { win, tie, lose };

inline OrderResult order_result(double score_x, double score_y) {
  if (score_x > score_y) return OrderResult::win;
  if (score_x < score_y) return OrderResult::lose;
  return OrderResult::tie;
}

// The order-swapped outcome table:
//   Win  = wins both orders, or wins one and ties the other.
//   Tie  = ties both orders, or wins one and loses the other.
//   Lose = loses both orders, or loses one and ties the other.
inline PairOutcome combine_orders(OrderResult first, OrderResult second) {
  const auto value = [](OrderResult r) {
    return r == OrderResult::win ? 1 : r == OrderResult::lose ? -1 : 0;
  };
  const int sum = value(first) + value(second);
  if (sum > 0) return PairOutcome::win;
  if (sum < 0) return PairOutcome::lose;
  return PairOutcome::tie;
}

inline std::string render_judge_prompt(const JudgeTemplate& tmpl,
                                       const ResponsePair& pair,
                                       bool x_first) {
  std::string text = tmpl.user_template;
  const auto replace_one = [&](std::string_view ph, const std::string& value) {
    const auto pos = text.find(ph);
    if (pos != std::string::npos) text.replace(pos, ph.size(), value);
  };
  replace_one("{QUESTION}", pair.question);
  replace_one("{ANSWER_A}", x_first ? pair.answer_x : pair.answer_y);
  replace_one("{ANSWER_B}", x_first ? pair.answer_y : pair.answer_x);
  return text;
}

inline std::string judge_score_reminder() {
  return "Reminder: output exactly two numeric scores in the format "
         "[[score_a, score_b]].";
}

// One judge call with parse retries; scores come back in presentation order.
inline std::pair<double, double> judge_once(const JudgeTemplate& tmpl,
                                            const ResponsePair& pair,
                                            bool x_first, ChatBackend& backend,
                                            int max_retries,
                                            std::string& raw_out) {
  const std::string user = render_judge_prompt(tmpl, pair, x_first);
  std::vector<ChatMessage> messages;
  if (!tmpl.system_text.empty())
    messages.push_back({"system", tmpl.system_text});
  messages.push_back({"user", user});

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    raw_out = backend.complete(messages);
    try {
      return parse_judge_scores(raw_out);
    } catch (const parse_error&) {
      if (attempt == max_retries) throw;
      messages.back().content = user + "\n\n" + judge_score_reminder();
    }
  }
  throw parse_error("unreachable");
}

}  // namespace detail

/// Judges one pair in both presentation orders and combines the two
/// per-order results through the outcome table. Throws parse_error when a
/// judge reply stays unparseable after retries.
inline JudgeVerdict judge_pair(const ResponsePair& pair, ChatBackend& backend,
                               const JudgeTemplate& tmpl,
                               int max_retries = 2) {
  if (pair.answer_x.empty() || pair.answer_y.empty())
    throw data_error("pair " + pair.question_id + ": empty answer");

  JudgeVerdict verdict;
  verdict.question_id = pair.question_id;

  auto [a1, b1] = detail::judge_once(tmpl, pair, /*x_first=*/true, backend,
                                     max_retries, verdict.order_xy.raw_response);
  verdict.order_xy.score_x = a1;
  verdict.order_xy.score_y = b1;

  auto [a2, b2] = detail::judge_once(tmpl, pair, /*x_first=*/false, backend,
                                     max_retries, verdict.order_yx.raw_response);
  verdict.order_yx.score_x = b2;  // X was presented second
  verdict.order_yx.score_y = a2;

  verdict.outcome = detail::combine_orders(
      detail::order_result(verdict.order_xy.score_x, verdict.order_xy.score_y),
      detail::order_result(verdict.order_yx.score_x, verdict.order_yx.score_y));
  return verdict;
}

/// (#Win - #Lose) / #All + 1; above 1.0 means model X beats the reference.
inline double win_score(std::size_t wins, std::size_t ties,
                        std::size_t losses) {
  const std::size_t total = wins + ties + losses;
  if (total == 0) throw data_error("win_score: no judged pairs");
  return (static_cast<double>(wins) - static_cast<double>(losses)) /
             static_cast<double>(total) +
         1.0;
}

struct WinScoreSummary {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  std::size_t invalid = 0;
  double score = 1.0;

  nlohmann::json to_json() const {
    return {{"wins", wins},
            {"ties", ties},
            {"losses", losses},
            {"invalid", invalid},
            {"win_score", score}};
  }
};

struct InvalidPair {
  std::string question_id;
  std::string reason;
};

struct JudgeRunResult {
  std::vector<JudgeVerdict> verdicts;
  std::vector<InvalidPair> invalid;
  WinScoreSummary summary;
};

/// Judges every pair, up to `concurrency` pairs in flight at once. Pairs
/// whose scores stay unparseable are excluded from the summary and reported
/// in `invalid`. Transport errors abort the run. The reduction is by pair
/// index, so the summary does not depend on thread scheduling.
inline JudgeRunResult run_judgement(std::span<const ResponsePair> pairs,
                                    ChatBackend& backend,
                                    const JudgeTemplate& tmpl,
                                    int concurrency = 4, int max_retries = 2) {
  if (concurrency < 1) throw config_error("concurrency must be >= 1");

  struct Slot {
    std::optional<JudgeVerdict> verdict;
    std::optional<InvalidPair> invalid;
  };
  std::vector<Slot> slots(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pairs.size()) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        slots[i].verdict = judge_pair(pairs[i], backend, tmpl, max_retries);
      } catch (const parse_error& e) {
        slots[i].invalid = InvalidPair{pairs[i].question_id, e.what()};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(concurrency),
                            std::max<std::size_t>(pairs.size(), 1));
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  JudgeRunResult result;
  for (Slot& slot : slots) {
    if (slot.verdict) {
      switch (slot.verdict->outcome) {
        case PairOutcome::win: ++result.summary.wins; break;
        case PairOutcome::tie: ++result.summary.ties; break;
        case PairOutcome::lose: ++result.summary.losses; break;
      }
      result.verdicts.push_back(std::move(*slot.verdict));
    } else if (slot.invalid) {
      ++result.summary.invalid;
      result.invalid.push_back(std::move(*slot.invalid));
    }
  }
  const std::size_t judged =
      result.summary.wins + result.summary.ties + result.summary.losses;
  result.summary.score =
      judged == 0 ? 1.0
                  : win_score(result.summary.wins, result.summary.ties,
                              result.summary.losses);
  return result;
}

/// One model's responses over a test set: JSONL of
/// {"question_id": ..., "question": ..., "answer": ...}.
struct ResponseRecord {
  std::string question_id;
  std::string question;
  std::string answer;
};

inline std::vector<ResponseRecord> load_response_file(
    const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<ResponseRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string_view line(text.data() + start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (!blank) {
      const std::string where =
          path.string() + " line " + std::to_string(line_no);
      const nlohmann::json j = parse_json_strict(std::string(line), where);
      ResponseRecord r;
      try {
        if (j.at("question_id").is_string())
          r.question_id = j.at("question_id").get<std::string>();
        else
          r.question_id = j.at("question_id").dump();
        r.question = j.value("question", std::string());
        r.answer = j.at("answer").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw data_error(where + ": " + e.what());
      }
      records.push_back(std::move(r));
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  if (records.empty()) throw data_error(path.string() + ": no responses");
  return records;
}

/// Aligns two response files into judged pairs. The files must cover exactly
/// the same question ids; the error reports every id present on one side
/// only.
inline std::vector<ResponsePair> pair_response_files(
    const std::filesystem::path& file_x, const std::filesystem::path& file_y) {
  const auto xs = load_response_file(file_x);
  const auto ys = load_response_file(file_y);

  std::map<std::string, const ResponseRecord*> y_by_id;
  for (const ResponseRecord& r : ys) {
    if (!y_by_id.emplace(r.question_id, &r).second)
      throw data_error(file_y.string() + ": duplicate question_id " +
                       r.question_id);
  }

  std::vector<std::string> only_x, only_y;
  std::vector<ResponsePair> pairs;
  std::map<std::string, bool> seen_x;
  for (const ResponseRecord& r : xs) {
    if (!seen_x.emplace(r.question_id, true).second)
      throw data_error(file_x.string() + ": duplicate question_id " +
                       r.question_id);
    const auto it = y_by_id.find(r.question_id);
    if (it == y_by_id.end()) {
      only_x.push_back(r.question_id);
      continue;
    }
    pairs.push_back(ResponsePair{r.question_id, r.question, r.answer,
                                 it->second->answer});
  }
  for (const auto& [id, rec] : y_by_id)
    if (!seen_x.count(id)) only_y.push_back(id);

  if (!only_x.empty() || !only_y.empty()) {
    std::string msg = "question id mismatch between response files";
    const auto list = [&](const char* side, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string("; only in ") + side + ":";
      for (const std::string& id : ids) msg += " " + id;
    };
    list("X", only_x);
    list("Y", only_y);
    throw data_error(msg);
  }
  return pairs;
}

}  // namespace subsel
