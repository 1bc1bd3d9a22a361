#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace proxrefl {

// Error classes map onto distinct CLI exit codes (see cli.hpp).
enum class ErrorKind {
  Usage,
  Domain,
  Data,
  Convergence,
  Transport,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Invalid argument to a numeric model (power-law singularity, non-positive reading, bad bounds).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error(ErrorKind::Domain, message) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error(ErrorKind::Usage, message) {}
};

// Malformed or inconsistent input data. `violations` lists every problem found,
// so callers can report all of them at once instead of the first one.
class DataError : public Error {
 public:
  explicit DataError(const std::string& message, std::vector<std::string> violations = {})
      : Error(ErrorKind::Data, compose(message, violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string compose(const std::string& message, const std::vector<std::string>& violations) {
    std::string out = message;
    for (const auto& v : violations) {
      out += "\n  - ";
      out += v;
    }
    return out;
  }

  std::vector<std::string> violations_;
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& message, std::vector<std::string> failed = {})
      : Error(ErrorKind::Transport, message), failed_(std::move(failed)) {}

  // Identifiers (query names, endpoints) that could not be served.
  const std::vector<std::string>& failed() const noexcept { return failed_; }

 private:
  std::vector<std::string> failed_;
};

}  // namespace proxrefl
