#pragma once

#include <stdexcept>
#include <string>

namespace iclcot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Token sequence does not fit the model's positional budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class NumericAbort : public Error {
 public:
  NumericAbort(std::size_t step, double learning_rate, const std::string& what)
      : Error(what), step_(step), learning_rate_(learning_rate) {}

  std::size_t step() const { return step_; }
  double learning_rate() const { return learning_rate_; }

 private:
  std::size_t step_;
  double learning_rate_;
};

}  // namespace iclcot
