#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes via a sibling temporary file and renames it into place, so readers
/// never observe a half-written file.
inline void write_text_file_atomic(const std::filesystem::path& path,
                                   const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write file: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw data_error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Parses JSON and rejects objects with duplicate keys (nlohmann would
/// silently keep the last occurrence). `where` seeds error messages.
inline nlohmann::json parse_json_strict(const std::string& text,
                                        const std::string& where) {
  std::vector<std::set<std::string>> key_stack;
  auto cb = [&](int /*depth*/, nlohmann::json::parse_event_t event,
                nlohmann::json& parsed) {
    using event_t = nlohmann::json::parse_event_t;
    if (event == event_t::object_start) {
      key_stack.emplace_back();
    } else if (event == event_t::object_end) {
      key_stack.pop_back();
    } else if (event == event_t::key) {
      const auto key = parsed.get<std::string>();
      if (!key_stack.back().insert(key).second)
        throw data_error(where + ": duplicate key \"" + key + "\"");
    }
    return true;
  };
  try {
    return nlohmann::json::parse(text, cb);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error(where + ": malformed JSON: " + e.what());
  }
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  return parse_json_strict(read_text_file(path), path.string());
}

inline void write_json_atomic(const std::filesystem::path& path,
                              const nlohmann::json& value, int indent = 2) {
  write_text_file_atomic(path, value.dump(indent) + "\n");
}

}  // namespace subsel
