#pragma once

// Training loop, rotation augmentation, and evaluation for both tasks.

#include <cstdint>
#include <string>
#include <vector>

#include "sunet/dataio.hpp"
#include "sunet/metrics.hpp"
#include "sunet/models.hpp"
#include "sunet/optim.hpp"

namespace sunet {

enum class Optimizer { Sgd, Adam };
enum class Schedule { Plateau, Step };

std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);
std::string schedule_name(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  Task task = Task::Parcellation;
  Optimizer optimizer = Optimizer::Sgd;
  double lr = 0.1;
  double momentum = 0.99;
  double weight_decay = 1e-4;
  Schedule schedule = Schedule::Plateau;
  double factor = 5.0;  // plateau divisor, or step divisor
  int patience = 2;     // plateau: stale epochs before a cut
  int every = 3;        // step: epochs between cuts
  int epochs = 20;
  int batch = 1;
  PoolMode pooling = PoolMode::Mean;
  uint64_t seed = 0;
  bool augment = false;

  // Throws UsageError on lr <= 0, factor <= 1, patience/every/epochs/batch < 1.
  void validate() const;

  // Published defaults: parcellation = sgd 0.1 / momentum 0.99 / wd 1e-4 /
  // plateau(5, 2); regression = adam 1e-4 / step(10, 3) / 15 epochs.
  static TrainConfig defaults(Task task);
};

struct MetricReport {
  Task task = Task::Parcellation;
  double dice = 0.0;            // mean of per-subject mean Dice
  std::vector<double> per_roi;  // per-ROI Dice averaged over subjects with the ROI present
  double mae = 0.0;             // mm, averaged over subjects
  double mre = 0.0;             // percent, averaged over subjects
  std::vector<double> loss_curve;  // per-epoch training loss (train() only)
};

// Compact JSON rendering with task-relevant keys.
std::string metric_report_json(const MetricReport& r);

// Applies one of the 60 icosahedral rotations (drawn from rng) to features
// and labels / target jointly via the exact vertex permutation. Permutations
// for the sample's level are computed once and cached.
Sample icosahedral_rotation_augment(const Sample& s, const IcoSphere& mesh, Rng& rng);

// All 60 vertex permutations of a mesh, identity first, cached per level.
const std::vector<std::vector<uint32_t>>& level_permutations(const IcoSphere& mesh);

// Eval-mode forward of one sample; returns (N x out_channels) logits for
// parcellation or the (N x 1) predicted map for regression.
Tensor<float> forward_eval(Model<float>& model, const Sample& s);

std::vector<int32_t> argmax_rows(const Tensor<float>& logits);

// Eval-mode metrics over the listed samples, per-subject values averaged.
MetricReport evaluate(Model<float>& model, const Dataset& data, const std::vector<int>& idx);

struct TrainResult {
  MetricReport report;  // metrics of the restored best model on the
                        // validation samples (training samples if none)
  std::vector<std::string> log_lines;  // one compact JSON object per epoch
  int best_epoch = -1;
  double best_metric = 0.0;  // higher-is-better model-selection score
};

// Runs the full loop: seeded shuffling, optional rotation augmentation,
// scheduler updates each epoch, validation each epoch, best-model snapshot
// and restore. The model is left holding the best weights. Reproducible
// bit-for-bit given (seed, thread count). Non-finite loss aborts with a
// NumericalError naming the epoch.
TrainResult train(Model<float>& model, const Dataset& data, const std::vector<int>& train_idx,
                  const std::vector<int>& val_idx, const TrainConfig& cfg);

}  // namespace sunet
