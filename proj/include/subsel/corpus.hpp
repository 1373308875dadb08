#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsel/errors.hpp"
#include "subsel/io.hpp"

namespace subsel {

/// One instruction-tuning record. `input` is absent when the source field is
/// missing or empty; it is never stored as an empty string.
struct Sample {
  std::int64_t id = 0;  ///< 0-based position in the source file
  std::string instruction;
  std::optional<std::string> input;
  std::string answer;
};

namespace detail {

inline bool is_blank(std::string_view s) {
  for (unsigned char c : s)
    if (!std::isspace(c)) return false;
  return true;
}

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::uint64_t h, char byte) {
  return fnv1a64(h, std::string_view(&byte, 1));
}

inline std::string to_hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace detail

/// Content hash over the ordered (instruction, input, answer) tuples.
/// FNV-1a 64 with 0x1F between fields and 0x1E between records; absent input
/// hashes as the empty string (loaders normalize "" to absent, so the two
/// can never disagree).
inline std::string corpus_fingerprint(std::span<const Sample> samples) {
  std::uint64_t h = detail::kFnvOffset;
  for (const Sample& s : samples) {
    h = detail::fnv1a64(h, s.instruction);
    h = detail::fnv1a64(h, '\x1f');
    h = detail::fnv1a64(h, s.input ? std::string_view(*s.input) : std::string_view{});
    h = detail::fnv1a64(h, '\x1f');
    h = detail::fnv1a64(h, s.answer);
    h = detail::fnv1a64(h, '\x1e');
  }
  return detail::to_hex64(h);
}

/// An immutable, loaded corpus. Safe to share read-only across threads.
class Dataset {
 public:
  Dataset() = default;

  /// Samples must already carry ids 0..N-1 in order.
  static Dataset from_samples(std::vector<Sample> samples,
                              std::string source_path = "") {
    if (samples.empty()) throw data_error("dataset has zero records");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].id != static_cast<std::int64_t>(i))
        throw data_error("dataset ids must equal record ordinals");
    }
    Dataset ds;
    ds.samples_ = std::move(samples);
    ds.source_path_ = std::move(source_path);
    ds.fingerprint_ = corpus_fingerprint(ds.samples_);
    return ds;
  }

  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const std::string& source_path() const { return source_path_; }
  const std::string& fingerprint() const { return fingerprint_; }

  const Sample& at(std::int64_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= samples_.size())
      throw data_error("sample id out of range: " + std::to_string(id));
    return samples_[static_cast<std::size_t>(id)];
  }

  std::vector<std::int64_t> all_ids() const {
    std::vector<std::int64_t> ids(samples_.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      ids[i] = static_cast<std::int64_t>(i);
    return ids;
  }

 private:
  std::vector<Sample> samples_;
  std::string source_path_;
  std::string fingerprint_;
};

/// Ordered, duplicate-free view into a Dataset. The underlying Dataset must
/// outlive the view; the view never copies or mutates samples.
class SampleView {
 public:
  SampleView() = default;

  SampleView(const Dataset& ds, std::vector<std::int64_t> ids)
      : ds_(&ds), ids_(std::move(ids)) {
    std::unordered_set<std::int64_t> seen;
    for (std::int64_t id : ids_) {
      if (id < 0 || static_cast<std::size_t>(id) >= ds.size())
        throw data_error("view id out of range: " + std::to_string(id));
      if (!seen.insert(id).second)
        throw data_error("view has duplicate id: " + std::to_string(id));
    }
  }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::int64_t>& ids() const { return ids_; }

  const Sample& at(std::size_t i) const {
    if (i >= ids_.size()) throw data_error("view index out of range");
    return ds_->at(ids_[i]);
  }

  struct const_iterator {
    const SampleView* view;
    std::size_t pos;
    const Sample& operator*() const { return view->at(pos); }
    const_iterator& operator++() {
      ++pos;
      return *this;
    }
    bool operator!=(const const_iterator& other) const {
      return pos != other.pos;
    }
  };
  const_iterator begin() const { return {this, 0}; }
  const_iterator end() const { return {this, ids_.size()}; }

 private:
  const Dataset* ds_ = nullptr;
  std::vector<std::int64_t> ids_;
};

inline SampleView subset_by_ids(const Dataset& ds,
                                std::vector<std::int64_t> ids) {
  return SampleView(ds, std::move(ids));
}

enum class DatasetFormat { auto_detect, json_array, jsonl };

namespace detail {

/// Maps one parsed record onto a Sample. `where` names the record ("line 3"
/// for JSONL, "record 3" for arrays). Alpaca's `output` and the generic
/// `answer` are interchangeable on read; `answer` wins when both are present.
inline Sample record_to_sample(const nlohmann::json& rec, std::int64_t id,
                               const std::string& where) {
  if (!rec.is_object()) throw data_error(where + ": record is not an object");

  const auto str_field = [&](const char* key) -> std::optional<std::string> {
    auto it = rec.find(key);
    if (it == rec.end() || it->is_null()) return std::nullopt;
    if (!it->is_string())
      throw data_error(where + ": field \"" + key + "\" is not a string");
    return it->get<std::string>();
  };

  Sample s;
  s.id = id;
  auto instruction = str_field("instruction");
  if (!instruction) throw data_error(where + ": missing \"instruction\"");
  s.instruction = std::move(*instruction);

  auto answer = str_field("answer");
  if (!answer) answer = str_field("output");
  if (!answer)
    throw data_error(where + ": missing answer field (\"answer\" or \"output\")");
  s.answer = std::move(*answer);

  auto input = str_field("input");
  if (input && !input->empty()) s.input = std::move(*input);
  return s;
}

inline DatasetFormat sniff_format(const std::string& text) {
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    return c == '[' ? DatasetFormat::json_array : DatasetFormat::jsonl;
  }
  throw data_error("dataset file is empty");
}

}  // namespace detail

/// Loads a corpus from JSONL (one object per line) or a single JSON array.
/// Ids are assigned by record order. Records whose instruction is empty
/// after whitespace trimming fail the load, with every offender reported.
inline Dataset load_dataset(const std::filesystem::path& path,
                            DatasetFormat format = DatasetFormat::auto_detect) {
  const std::string text = read_text_file(path);
  if (format == DatasetFormat::auto_detect) format = detail::sniff_format(text);

  std::vector<Sample> samples;
  std::vector<std::string> empty_instruction_at;

  const auto add_record = [&](const nlohmann::json& rec, const std::string& where) {
    Sample s = detail::record_to_sample(
        rec, static_cast<std::int64_t>(samples.size()), where);
    if (detail::is_blank(s.instruction)) empty_instruction_at.push_back(where);
    samples.push_back(std::move(s));
  };

  if (format == DatasetFormat::jsonl) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      ++line_no;
      std::string_view line(text.data() + start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!detail::is_blank(line)) {
        const std::string where = "line " + std::to_string(line_no);
        add_record(parse_json_strict(std::string(line), where), where);
      }
      if (end == text.size()) break;
      start = end + 1;
    }
  } else {
    nlohmann::json root = parse_json_strict(text, path.string());
    if (!root.is_array())
      throw data_error(path.string() + ": expected a top-level JSON array");
    for (std::size_t i = 0; i < root.size(); ++i)
      add_record(root[i], "record " + std::to_string(i));
  }

  if (!empty_instruction_at.empty()) {
    std::string msg = path.string() + ": empty instruction at ";
    for (std::size_t i = 0; i < empty_instruction_at.size(); ++i) {
      if (i) msg += ", ";
      msg += empty_instruction_at[i];
    }
    throw data_error(msg);
  }
  if (samples.empty()) throw data_error(path.string() + ": zero valid records");
  return Dataset::from_samples(std::move(samples), path.string());
}

/// Canonical JSONL: one object per line with keys answer / input (only when
/// present) / instruction. Reloading yields an identical fingerprint.
inline void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::string out;
  for (const Sample& s : ds.samples()) {
    nlohmann::json rec;
    rec["instruction"] = s.instruction;
    if (s.input) rec["input"] = *s.input;
    rec["answer"] = s.answer;
    out += rec.dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace subsel
