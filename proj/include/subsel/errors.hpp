#pragma once

#include <stdexcept>
#include <string>

namespace subsel {

/// Base class for every error thrown by the library. The CLI maps the
/// subclasses below to its exit codes.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad window sizes, malformed rounds, missing
/// template placeholders, out-of-range knobs.
class config_error : public error {
 public:
  using error::error;
};

/// Bad input data: unreadable files, malformed records, id mismatches,
/// fingerprint mismatches.
class data_error : public error {
 public:
  using error::error;
};

/// HTTP-level failure that survived the retry budget (connection refused,
/// timeout, authentication rejection, persistent non-200 status).
class transport_error : public error {
 public:
  using error::error;
};

/// A model response could not be mapped back to a structured result.
class parse_error : public error {
 public:
  using error::error;
};

/// No label in the response matched the prompt's label map.
class no_choice_error : public parse_error {
 public:
  using parse_error::parse_error;
};

/// The bare-label fallback found more than one distinct valid label.
class ambiguous_choice_error : public parse_error {
 public:
  using parse_error::parse_error;
};

/// A scripted backend ran past the end of its script.
class script_exhausted_error : public error {
 public:
  using error::error;
};

/// The abort-run fallback policy fired after parse retries were exhausted.
class run_aborted_error : public error {
 public:
  using error::error;
};

}  // namespace subsel
