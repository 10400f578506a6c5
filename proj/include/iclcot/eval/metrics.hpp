#pragma once

#include <cstddef>
#include <span>

#include "iclcot/error.hpp"

namespace iclcot {

// A metric that has no value for the given sample (e.g. AUC with one class).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

// (pred - truth)^2 / d
double mse_normalized(double pred, double truth, std::size_t d);

// ROC AUC of `preds` as scores against labels truth_i > median(truths).
// Tied scores count one half. Throws UndefinedMetric when every label is the
// same class.
double auc_binarized(std::span<const double> preds, std::span<const double> truths);

double median_of(std::span<const double> values);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Sample mean and standard error (0 for fewer than two values).
MeanStderr mean_stderr(std::span<const double> values);

// Two-sided exact sign test on paired differences; zero differences are
// dropped. Returns 1 when no informative pair remains.
double sign_test_p(std::span<const double> differences);

}  // namespace iclcot
