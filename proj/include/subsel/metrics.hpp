#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsel/corpus.hpp"
#include "subsel/errors.hpp"
#include "subsel/io.hpp"

namespace subsel {

/// A tokenized text tagged with the tokenizer that produced it. Reports are
/// comparable only within one tokenizer_id.
struct TokenStream {
  std::vector<std::string> tokens;
  std::string tokenizer_id;
};

namespace detail {

// Decodes one UTF-8 code point starting at `i`; advances `i` past it.
// Malformed bytes are passed through as single-byte code points.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) {
    return static_cast<unsigned char>(s[k]);
  };
  const unsigned char b0 = byte(i);
  std::size_t len = 1;
  char32_t cp = b0;
  if ((b0 & 0x80) == 0) {
    len = 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return b0;
  }
  if (i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = byte(i + k);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += len;
  return cp;
}

inline bool is_token_whitespace(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Punctuation stripped from token edges: ASCII punctuation plus common
// typographic quotes, dashes and ellipsis.
inline bool is_edge_punctuation(char32_t cp) {
  if (cp < 0x80) {
    const unsigned char c = static_cast<unsigned char>(cp);
    return std::ispunct(c) != 0;
  }
  switch (cp) {
    case 0x2018: case 0x2019: case 0x201C: case 0x201D:
    case 0x2013: case 0x2014: case 0x2026: case 0xAB: case 0xBB:
    case 0xA1: case 0xBF:
      return true;
    default:
      return false;
  }
}

inline void append_code_point(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

}  // namespace detail

inline constexpr std::string_view kDefaultTokenizer = "whitespace-lower";

/// The "whitespace-lower" tokenizer: split on Unicode whitespace, strip
/// leading/trailing punctuation (fixed class above), lowercase ASCII
/// letters, drop tokens that end up empty.
inline TokenStream tokenize(std::string_view text,
                            std::string_view tokenizer_id = kDefaultTokenizer) {
  if (tokenizer_id != kDefaultTokenizer)
    throw config_error("unknown tokenizer_id: " + std::string(tokenizer_id));

  TokenStream stream;
  stream.tokenizer_id = std::string(tokenizer_id);

  std::vector<char32_t> word;
  const auto flush = [&] {
    std::size_t lo = 0, hi = word.size();
    while (lo < hi && detail::is_edge_punctuation(word[lo])) ++lo;
    while (hi > lo && detail::is_edge_punctuation(word[hi - 1])) --hi;
    if (lo < hi) {
      std::string token;
      for (std::size_t k = lo; k < hi; ++k) {
        char32_t cp = word[k];
        if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
        detail::append_code_point(token, cp);
      }
      stream.tokens.push_back(std::move(token));
    }
    word.clear();
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = detail::next_code_point(text, i);
    if (detail::is_token_whitespace(cp)) {
      flush();
    } else {
      word.push_back(cp);
    }
  }
  flush();
  return stream;
}

/// Type-token ratio: unique types over total tokens, times 100.
inline double ttr(const TokenStream& stream) {
  if (stream.tokens.empty()) throw data_error("ttr: empty token stream");
  std::unordered_set<std::string_view> types(stream.tokens.begin(),
                                             stream.tokens.end());
  return 100.0 * static_cast<double>(types.size()) /
         static_cast<double>(stream.tokens.size());
}

namespace detail {

// One MTLD pass. Scans tokens keeping a running TTR for the current factor;
// a factor completes when the running TTR drops to the threshold or below.
// The trailing partial factor counts as (1 - TTR) / (1 - threshold). A
// stream whose tokens are all unique never completes or starts a factor;
// the convention for that case is MTLD = token count.
template <typename Iter>
double mtld_pass(Iter first, Iter last, std::size_t total, double threshold) {
  double factors = 0.0;
  std::unordered_set<std::string_view> types;
  std::size_t factor_tokens = 0;
  double running_ttr = 1.0;
  for (Iter it = first; it != last; ++it) {
    ++factor_tokens;
    types.insert(std::string_view(*it));
    running_ttr = static_cast<double>(types.size()) /
                  static_cast<double>(factor_tokens);
    if (running_ttr <= threshold) {
      factors += 1.0;
      types.clear();
      factor_tokens = 0;
      running_ttr = 1.0;
    }
  }
  if (factor_tokens > 0) factors += (1.0 - running_ttr) / (1.0 - threshold);
  if (factors == 0.0) return static_cast<double>(total);
  return static_cast<double>(total) / factors;
}

}  // namespace detail

/// Bidirectional MTLD: mean of the forward and reverse factor-count passes.
inline double mtld(const TokenStream& stream, double threshold = 0.72) {
  if (stream.tokens.empty()) throw data_error("mtld: empty token stream");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw config_error("mtld: threshold must lie in (0, 1)");
  const std::size_t n = stream.tokens.size();
  const double fwd =
      detail::mtld_pass(stream.tokens.begin(), stream.tokens.end(), n, threshold);
  const double rev =
      detail::mtld_pass(stream.tokens.rbegin(), stream.tokens.rend(), n, threshold);
  return 0.5 * (fwd + rev);
}

/// Simpson diversity index, the paper's convention: sum over types of the
/// squared type proportion. Lower means more diverse.
inline double sdi(const TokenStream& stream) {
  if (stream.tokens.empty()) throw data_error("sdi: empty token stream");
  std::unordered_map<std::string_view, std::size_t> counts;
  for (const std::string& t : stream.tokens) ++counts[std::string_view(t)];
  const double total = static_cast<double>(stream.tokens.size());
  double d = 0.0;
  for (const auto& [type, count] : counts) {
    const double p = static_cast<double>(count) / total;
    d += p * p;
  }
  return d;
}

enum class FieldPolicy { instruction_only, instruction_and_answer };

inline std::string to_string(FieldPolicy p) {
  return p == FieldPolicy::instruction_only ? "instruction-only"
                                            : "instruction+answer";
}

inline FieldPolicy field_policy_from_string(std::string_view s) {
  if (s == "instruction-only") return FieldPolicy::instruction_only;
  if (s == "instruction+answer") return FieldPolicy::instruction_and_answer;
  throw config_error("unknown field policy: " + std::string(s));
}

/// The text of a sample under a field policy. instruction+answer includes
/// the optional input between the two.
inline std::string sample_text(const Sample& s, FieldPolicy policy) {
  if (policy == FieldPolicy::instruction_only) return s.instruction;
  std::string text = s.instruction;
  if (s.input) {
    text += '\n';
    text += *s.input;
  }
  text += '\n';
  text += s.answer;
  return text;
}

/// Diversity statistics for a sample set.
///
/// ttr/mtld/sdi are means of the per-sample metrics, the aggregation used
/// for corpus-level tables (samples whose token stream is empty after
/// tokenization are skipped). pooled_* are the same metrics over the single
/// concatenated token stream of all samples, which is what collective
/// redundancy shows up in: duplicating a sample lowers pooled_ttr and raises
/// pooled_sdi while leaving the per-sample means unchanged.
struct MetricsReport {
  double ttr = 0.0;
  double mtld = 0.0;
  double sdi = 0.0;
  double pooled_ttr = 0.0;
  double pooled_mtld = 0.0;
  double pooled_sdi = 0.0;
  double mean_instruction_tokens = 0.0;
  std::optional<double> mean_quality;
  std::size_t n_samples = 0;
  std::string tokenizer_id;
  FieldPolicy field_policy = FieldPolicy::instruction_only;

  nlohmann::json to_json() const {
    nlohmann::json j{{"ttr", ttr},
                     {"mtld", mtld},
                     {"sdi", sdi},
                     {"pooled_ttr", pooled_ttr},
                     {"pooled_mtld", pooled_mtld},
                     {"pooled_sdi", pooled_sdi},
                     {"mean_instruction_tokens", mean_instruction_tokens},
                     {"n_samples", n_samples},
                     {"tokenizer_id", tokenizer_id},
                     {"field_policy", to_string(field_policy)}};
    if (mean_quality) j["mean_quality"] = *mean_quality;
    return j;
  }
};

/// Externally computed per-sample quality scores (e.g. reward-model or
/// LLM-graded values), bound to a corpus by its fingerprint. Scores are only
/// aggregated here, never computed.
struct ExternalScores {
  std::string fingerprint;
  std::unordered_map<std::int64_t, double> scores;
};

/// File schema: {"fingerprint": "...", "scores": {"<id>": <number>, ...}}
inline ExternalScores load_external_scores(const std::filesystem::path& path) {
  const nlohmann::json j = load_json_file(path);
  if (!j.is_object() || !j.contains("fingerprint") || !j.contains("scores"))
    throw data_error(path.string() +
                     ": expected {\"fingerprint\": ..., \"scores\": {...}}");
  ExternalScores out;
  out.fingerprint = j.at("fingerprint").get<std::string>();
  for (const auto& [key, value] : j.at("scores").items()) {
    std::int64_t id = 0;
    try {
      id = std::stoll(key);
    } catch (...) {
      throw data_error(path.string() + ": non-integer score id \"" + key + "\"");
    }
    if (!value.is_number())
      throw data_error(path.string() + ": score for id " + key +
                       " is not a number");
    out.scores[id] = value.get<double>();
  }
  return out;
}

inline void validate_scores(const ExternalScores& scores, const Dataset& ds) {
  if (scores.fingerprint != ds.fingerprint())
    throw data_error("external scores fingerprint " + scores.fingerprint +
                     " does not match dataset fingerprint " + ds.fingerprint());
}

/// Computes the report for any range of Sample. Quality means come from
/// `scores` when given; every sample in the range must then have a score.
template <typename SampleRange>
MetricsReport corpus_report(const SampleRange& samples, FieldPolicy policy,
                            const ExternalScores* scores = nullptr,
                            std::string_view tokenizer_id = kDefaultTokenizer) {
  MetricsReport report;
  report.tokenizer_id = std::string(tokenizer_id);
  report.field_policy = policy;

  TokenStream pooled;
  pooled.tokenizer_id = std::string(tokenizer_id);
  double sum_ttr = 0.0, sum_mtld = 0.0, sum_sdi = 0.0;
  double sum_instruction_tokens = 0.0;
  double sum_quality = 0.0;
  std::size_t measured = 0;

  for (const Sample& s : samples) {
    ++report.n_samples;
    TokenStream stream = tokenize(sample_text(s, policy), tokenizer_id);
    sum_instruction_tokens += static_cast<double>(
        policy == FieldPolicy::instruction_only
            ? stream.tokens.size()
            : tokenize(s.instruction, tokenizer_id).tokens.size());
    if (scores) {
      auto it = scores->scores.find(s.id);
      if (it == scores->scores.end())
        throw data_error("no external score for sample id " +
                         std::to_string(s.id));
      sum_quality += it->second;
    }
    if (!stream.tokens.empty()) {
      ++measured;
      sum_ttr += ttr(stream);
      sum_mtld += mtld(stream);
      sum_sdi += sdi(stream);
      pooled.tokens.insert(pooled.tokens.end(),
                           std::make_move_iterator(stream.tokens.begin()),
                           std::make_move_iterator(stream.tokens.end()));
    }
  }

  if (report.n_samples == 0) throw data_error("corpus_report: empty sample set");
  if (measured == 0)
    throw data_error("corpus_report: every sample tokenized to nothing");

  report.ttr = sum_ttr / static_cast<double>(measured);
  report.mtld = sum_mtld / static_cast<double>(measured);
  report.sdi = sum_sdi / static_cast<double>(measured);
  report.pooled_ttr = ttr(pooled);
  report.pooled_mtld = mtld(pooled);
  report.pooled_sdi = sdi(pooled);
  report.mean_instruction_tokens =
      sum_instruction_tokens / static_cast<double>(report.n_samples);
  if (scores)
    report.mean_quality = sum_quality / static_cast<double>(report.n_samples);
  return report;
}

}  // namespace subsel
