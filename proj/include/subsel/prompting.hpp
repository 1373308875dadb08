#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "subsel/corpus.hpp"
#include "subsel/errors.hpp"
#include "subsel/io.hpp"

namespace subsel {

inline constexpr std::string_view kDefaultSystemText =
    "You are a careful data curation assistant. Follow the requested output "
    "format exactly.";

// The default wording asks for the Set B element with the highest response
// quality and the largest diversity contribution to Set A, shows one
// demonstration, and pins the reply format to a single [X]-Element token.
inline constexpr std::string_view kDefaultUserTemplate =
    R"(You are selecting training data for instruction tuning, one element at a time.

Set A lists the elements selected so far. Set B lists candidate elements,
each labeled [A], [B], [C], and so on.

Pick the single element of Set B whose answer quality is highest and which
would contribute the most diversity to Set A: prefer candidates that
introduce topics, task types, or vocabulary that Set A does not cover yet,
and whose answers are accurate, complete, and well written.

{ICL_DEMO}

### Set A (already selected)
{SET_A}

### Set B (candidates)
{SET_B}

State your choice as a single token of the form [X]-Element, where X is the
label of the chosen candidate. You may add a brief justification after it.
)";

inline constexpr std::string_view kDefaultIclDemo =
    R"(Here is a demonstration of the task.

Set A contains one element whose instruction is "Convert 37 degrees Celsius
to Fahrenheit." Set B offers:

[A]-Element:
Instruction: Convert 100 degrees Fahrenheit to Celsius.
Answer: 100 degrees Fahrenheit is 37.78 degrees Celsius.

[B]-Element:
Instruction: Write a haiku about autumn.
Answer: Leaves spiral earthward / the pond mirrors a gray sky / geese call their goodbyes.

Both answers are correct, but Set A already covers temperature conversion,
so the diverse choice is [B]-Element.)";

/// Selection prompt template. `user_template` must contain the {SET_A},
/// {SET_B} and {ICL_DEMO} placeholders.
struct PromptTemplate {
  std::string system_text{kDefaultSystemText};
  std::string user_template{kDefaultUserTemplate};
  std::string icl_demo{kDefaultIclDemo};
  /// Set A answers are clipped to this many bytes with a marker; 0 disables.
  /// Set B candidates are never clipped.
  std::size_t a_answer_char_budget = 600;
  /// Hard cap on any single rendered sample block; exceeding it is an error
  /// naming the sample, so oversized records surface instead of silently
  /// blowing the selector's context.
  std::size_t sample_char_budget = 16000;
};

namespace detail {

inline void require_placeholder(const std::string& tmpl, std::string_view ph,
                                const std::string& where) {
  if (tmpl.find(ph) == std::string::npos)
    throw config_error(where + ": template is missing placeholder " +
                       std::string(ph));
}

inline std::string replace_all(std::string text, std::string_view from,
                               std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

// Clips to at most `budget` bytes without splitting a UTF-8 sequence.
inline std::string clip_utf8(std::string_view s, std::size_t budget) {
  if (s.size() <= budget) return std::string(s);
  std::size_t end = budget;
  while (end > 0 &&
         (static_cast<unsigned char>(s[end]) & 0xC0) == 0x80)
    --end;
  return std::string(s.substr(0, end)) + "…[truncated]";
}

}  // namespace detail

inline PromptTemplate default_prompt_template() { return PromptTemplate{}; }

/// Content hash of a template, recorded in provenance snapshots so a run can
/// be tied to the exact prompt wording that produced it.
inline std::string prompt_template_hash(const PromptTemplate& t) {
  std::uint64_t h = detail::kFnvOffset;
  h = detail::fnv1a64(h, t.system_text);
  h = detail::fnv1a64(h, '\x1f');
  h = detail::fnv1a64(h, t.user_template);
  h = detail::fnv1a64(h, '\x1f');
  h = detail::fnv1a64(h, t.icl_demo);
  return detail::to_hex64(h);
}

/// Loads the user template from a plain-text asset. The file must contain
/// all three placeholders; the demonstration and budgets stay at their
/// defaults unless overridden afterwards.
inline PromptTemplate load_prompt_template(const std::filesystem::path& path) {
  PromptTemplate t;
  t.user_template = read_text_file(path);
  detail::require_placeholder(t.user_template, "{SET_A}", path.string());
  detail::require_placeholder(t.user_template, "{SET_B}", path.string());
  detail::require_placeholder(t.user_template, "{ICL_DEMO}", path.string());
  return t;
}

/// A fully rendered selection prompt. Labels are single letters assigned in
/// order over the candidate window only.
struct SelectionPrompt {
  std::string system_text;
  std::string user_text;
  std::vector<std::pair<char, std::int64_t>> label_map;
  std::vector<std::int64_t> a_window_ids;
  std::vector<std::int64_t> b_window_ids;

  std::optional<std::int64_t> id_for_label(char label) const {
    const char upper = static_cast<char>(
        std::toupper(static_cast<unsigned char>(label)));
    for (const auto& [l, id] : label_map)
      if (l == upper) return id;
    return std::nullopt;
  }

  std::optional<char> label_for_id(std::int64_t id) const {
    for (const auto& [l, mapped] : label_map)
      if (mapped == id) return l;
    return std::nullopt;
  }
};

inline constexpr std::size_t kMaxCandidateWindow = 26;

/// Renders the selection prompt from the two windows. Deterministic:
/// identical windows and template produce byte-identical text.
inline SelectionPrompt build_selection_prompt(const SampleView& a_window,
                                              const SampleView& b_window,
                                              const PromptTemplate& tmpl) {
  if (b_window.empty())
    throw config_error("candidate window is empty");
  if (b_window.size() > kMaxCandidateWindow)
    throw config_error("candidate window of " +
                       std::to_string(b_window.size()) +
                       " exceeds the 26 single-letter labels");
  detail::require_placeholder(tmpl.user_template, "{SET_A}", "prompt template");
  detail::require_placeholder(tmpl.user_template, "{SET_B}", "prompt template");
  detail::require_placeholder(tmpl.user_template, "{ICL_DEMO}",
                              "prompt template");

  const auto check_budget = [&](const std::string& block, std::int64_t id) {
    if (tmpl.sample_char_budget != 0 && block.size() > tmpl.sample_char_budget)
      throw config_error("rendered sample " + std::to_string(id) +
                         " exceeds the context budget of " +
                         std::to_string(tmpl.sample_char_budget) + " bytes");
  };

  std::string set_a;
  if (a_window.empty()) {
    set_a = "Set A is currently empty.";
  } else {
    for (std::size_t i = 0; i < a_window.size(); ++i) {
      const Sample& s = a_window.at(i);
      std::string block = std::to_string(i + 1) + ". Instruction: " +
                          s.instruction + "\n   Answer: " +
                          (tmpl.a_answer_char_budget == 0
                               ? s.answer
                               : detail::clip_utf8(s.answer,
                                                   tmpl.a_answer_char_budget));
      check_budget(block, s.id);
      set_a += block;
      if (i + 1 < a_window.size()) set_a += "\n";
    }
  }

  SelectionPrompt prompt;
  prompt.system_text = tmpl.system_text;
  prompt.a_window_ids = a_window.ids();
  prompt.b_window_ids = b_window.ids();

  std::string set_b;
  for (std::size_t i = 0; i < b_window.size(); ++i) {
    const Sample& s = b_window.at(i);
    const char label = static_cast<char>('A' + i);
    prompt.label_map.emplace_back(label, s.id);
    std::string block = std::string("[") + label + "]-Element:\n" +
                        "Instruction: " + s.instruction + "\n";
    if (s.input) block += "Input: " + *s.input + "\n";
    block += "Answer: " + s.answer;
    check_budget(block, s.id);
    set_b += block;
    if (i + 1 < b_window.size()) set_b += "\n\n";
  }

  std::string user = detail::replace_all(tmpl.user_template, "{ICL_DEMO}",
                                         tmpl.icl_demo);
  user = detail::replace_all(std::move(user), "{SET_A}", set_a);
  user = detail::replace_all(std::move(user), "{SET_B}", set_b);
  prompt.user_text = std::move(user);
  return prompt;
}

/// The parsed verdict of a selector response.
struct ParsedChoice {
  char label = 0;
  std::int64_t candidate_id = 0;
  std::string matched_text;
};

/// One-line reminder appended to the prompt when the selector's previous
/// reply could not be parsed.
inline std::string format_reminder_line() {
  return "Reminder: reply with exactly one token of the form [X]-Element, "
         "where X is one of the candidate labels shown in Set B.";
}

/// Maps a selector response back to a candidate. Primary rule: the first
/// occurrence of "[X]-Element" (case-insensitive, whitespace-tolerant)
/// whose letter is a prompt label. Fallback: a bare bracketed "[X]" works
/// when exactly one distinct valid label appears that way.
inline ParsedChoice parse_choice(std::string_view response,
                                 const SelectionPrompt& prompt) {
  if (response.empty()) throw no_choice_error("empty selector response");
  const std::string text(response);

  static const std::regex labeled(
      R"(\[\s*([A-Za-z])\s*\]\s*-\s*element)",
      std::regex::icase);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), labeled);
       it != std::sregex_iterator(); ++it) {
    const char letter = static_cast<char>(
        std::toupper(static_cast<unsigned char>(it->str(1)[0])));
    if (auto id = prompt.id_for_label(letter)) {
      return ParsedChoice{letter, *id, it->str(0)};
    }
  }

  static const std::regex bare(R"(\[\s*([A-Za-z])\s*\])");
  std::vector<char> valid;
  std::string first_match;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), bare);
       it != std::sregex_iterator(); ++it) {
    const char letter = static_cast<char>(
        std::toupper(static_cast<unsigned char>(it->str(1)[0])));
    if (!prompt.id_for_label(letter)) continue;
    if (std::find(valid.begin(), valid.end(), letter) == valid.end()) {
      valid.push_back(letter);
      if (valid.size() == 1) first_match = it->str(0);
    }
  }
  if (valid.empty())
    throw no_choice_error("no candidate label found in selector response");
  if (valid.size() > 1) {
    std::string letters;
    for (char c : valid) {
      if (!letters.empty()) letters += ", ";
      letters += c;
    }
    throw ambiguous_choice_error("multiple distinct bare labels: " + letters);
  }
  return ParsedChoice{valid[0], *prompt.id_for_label(valid[0]), first_match};
}

}  // namespace subsel
