#pragma once

#include <stdexcept>
#include <string>

namespace percflow {

// Base for every error the library raises. Callers that only care about
// "something in percflow failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CacheError : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradientError : public Error {
 public:
  using Error::Error;
};

class SymmetryError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Raised when a rollout or training step produces non-finite or exploding
// state. `step_index` is the schedule index of the failing transition, or -1
// when the failure is not tied to a transition (e.g. a non-finite loss).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step_index)
      : Error(what), step_index_(step_index) {}
  int step_index() const { return step_index_; }

 private:
  int step_index_;
};

class ConditionError : public Error {
 public:
  using Error::Error;
};

class GroupSizeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line + 1) + ": " + what
                        : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace percflow
