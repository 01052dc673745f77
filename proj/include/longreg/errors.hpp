#pragma once

#include <stdexcept>
#include <string>

namespace longreg {

// Malformed or missing input (bad file, bad field in a manifest or config).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The optimization produced a non-finite loss or parameter.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& term, const std::string& message)
      : std::runtime_error(message), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace longreg
