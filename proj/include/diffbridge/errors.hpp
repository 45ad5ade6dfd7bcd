#pragma once

#include <stdexcept>
#include <string>

namespace diffbridge {

// Argument outside the mathematical domain of an operation (e.g. t <= 0).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite state or drift during SDE/ODE integration.
struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss, gradient or divergence in a training loop.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failure inside one IPF half-step or round; keeps the iteration and direction.
struct IpfError : std::runtime_error {
  IpfError(int iteration, std::string direction, const std::string& what)
      : std::runtime_error("IPF iteration " + std::to_string(iteration) + " (" + direction + "): " + what),
        iteration_(iteration),
        direction_(std::move(direction)) {}
  int iteration() const noexcept { return iteration_; }
  const std::string& direction() const noexcept { return direction_; }

 private:
  int iteration_;
  std::string direction_;
};

struct UnsupportedError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace diffbridge
