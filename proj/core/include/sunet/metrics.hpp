#pragma once

// Evaluation metrics: per-region Dice overlap and regression error rates.

#include <cstdint>
#include <vector>

#include "sunet/tensor.hpp"

namespace sunet {

struct DiceReport {
  std::vector<double> per_roi;   // 2|P∩G| / (|P|+|G|); 0 for absent regions
  std::vector<uint8_t> present;  // region appears in prediction or truth
  double mean = 0;               // unweighted over present regions
};

// Labels must lie in [0, k). Regions absent from both prediction and truth
// are excluded from the mean.
DiceReport dice(const std::vector<int32_t>& pred, const std::vector<int32_t>& gt, int k);

struct RegressionErrors {
  double mae = 0;  // mean |p - g|, in the target's units
  double mre = 0;  // 100 * mean(|p - g| / g) over vertices with g > 1e-5
};

template <typename T>
RegressionErrors mae_mre(const Tensor<T>& pred, const Tensor<T>& gt);

}  // namespace sunet
