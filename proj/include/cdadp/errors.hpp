#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdadp {

// Shape or layout disagreement between arguments.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A model was evaluated outside the region where it is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A rollout left the model domain; `step` is the control step that failed.
class TrajectoryInvalid : public std::runtime_error {
 public:
  TrajectoryInvalid(std::size_t step, const std::string& what)
      : std::runtime_error("trajectory invalid at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// An iterative solver stopped without meeting its tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual, int iterations)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + " after " +
                           std::to_string(iterations) + " iterations)"),
        residual_(residual),
        iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

// A direction or weight vector collapsed below the normalization threshold.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The linearized constraints cannot be met inside the requested trust region.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdadp
