#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stnas {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an API precondition (non-scalar loss, duplicate round, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad user-supplied data (negative adjacency, too few steps, empty split).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed text input. `line()` is 1-based, 0 when not line oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// The LLM endpoint could not be reached or kept failing.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, int last_status = 0)
      : std::runtime_error(what), last_status_(last_status) {}
  int last_status() const noexcept { return last_status_; }

 private:
  int last_status_;
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, int epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class EmptyBankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stnas
