#pragma once

// Optimizers and learning-rate schedules.

#include <vector>

#include "sunet/autodiff.hpp"

namespace sunet {

// Classic momentum SGD with coupled weight decay:
//   g <- grad + wd * p;  m <- mu * m + g;  p <- p - lr * m
// Momentum buffers live in the parameters and are zero on first use.
// Parameters with no populated gradient are rejected.
template <typename T>
void sgd_step(const std::vector<Parameter<T>*>& params, T lr, T momentum, T weight_decay);

// Bias-corrected Adam. Per-parameter step counters and moment buffers live
// in the parameters.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8));

// Divides the learning rate by `factor` once a higher-is-better metric has
// gone `patience` consecutive epochs without beating the best seen by more
// than 1e-4; the stagnation counter restarts after each cut.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(double factor = 5.0, int patience = 2);

  // Feed one epoch's metric; returns the multiplier in force afterwards.
  double observe(double metric);
  double multiplier() const { return mult_; }

 private:
  double factor_;
  int patience_;
  double best_;
  int stale_ = 0;
  double mult_ = 1.0;
};

// factor^(-floor(epoch / every)), epochs counted from 0
double step_lr_multiplier(int epoch, double factor = 10.0, int every = 3);

}  // namespace sunet
