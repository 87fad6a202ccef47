#pragma once

#include <stdexcept>
#include <string>

namespace gmrl {

// Invalid or infeasible configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was called outside its precondition, e.g. stepping a
// finished episode.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A training stage or evaluation needs an artifact that does not exist.
class MissingPrerequisite : public std::runtime_error {
 public:
  MissingPrerequisite(std::string stage, const std::string& detail)
      : std::runtime_error("missing prerequisite stage '" + stage + "': " + detail),
        stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Training diverged: too many consecutive non-finite losses.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmrl
