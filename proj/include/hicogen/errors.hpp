#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hicogen {

/// Training loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& msg)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + msg),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A policy update produced a non-finite gradient; carries the parameters
/// the update started from so the run can be inspected or resumed.
class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(std::vector<double> snapshot, const std::string& msg)
      : std::runtime_error(msg), snapshot_(std::move(snapshot)) {}
  const std::vector<double>& snapshot() const noexcept { return snapshot_; }

 private:
  std::vector<double> snapshot_;
};

/// Rollout group could not be scored; the whole group is discarded.
class GroupAbortError : public std::runtime_error {
 public:
  GroupAbortError(std::size_t member, const std::string& msg)
      : std::runtime_error("group aborted at member " + std::to_string(member) + ": " + msg),
        member_(member) {}
  std::size_t member() const noexcept { return member_; }

 private:
  std::size_t member_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RemoteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hicogen
