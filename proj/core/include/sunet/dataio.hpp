#pragma once

// Synthetic dataset generators, sample/manifest file formats, and VTK export.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sunet/icosphere.hpp"
#include "sunet/neighborhood.hpp"
#include "sunet/rng.hpp"
#include "sunet/tensor.hpp"

namespace sunet {

enum class Task { Parcellation, Regression };

std::string task_name(Task t);
Task parse_task(const std::string& name);

// One spherical surface: features, and either per-vertex labels
// (parcellation) or a per-vertex scalar target in mm (regression).
struct Sample {
  std::string id;
  Tensor<float> features;       // N x C
  std::vector<int32_t> labels;  // parcellation only
  Tensor<float> target;         // regression only, N x 1
};

struct Dataset {
  Task task = Task::Parcellation;
  int level = 0;
  int num_classes = 0;  // parcellation only
  std::vector<Sample> samples;
  std::vector<std::vector<int>> folds;  // partition of sample indices
};

// Iterated 7-slot neighbor-mean smoothing (pentagon centers count twice,
// matching the pooling convention).
Tensor<float> smooth_field(const Tensor<float>& x, const NeighborTable& table, int rounds);

// Farthest-point sampling under great-circle distance; first seed is drawn
// from rng, ties broken toward the lowest vertex index.
std::vector<int64_t> farthest_point_seeds(const IcoSphere& mesh, int k, Rng& rng);

// Nearest-seed assignment under great-circle distance, ties toward the
// lowest seed index.
std::vector<int32_t> voronoi_labels(const IcoSphere& mesh, const std::vector<int64_t>& seeds);

// K geodesic-Voronoi regions seeded by farthest-point sampling; per-region
// 3-channel prototypes; each sample = smoothed prototype field + Gaussian
// noise + a random icosahedral rotation applied jointly to features and
// labels. Deterministic per (level, k, n, seed).
Dataset synth_parcellation(int level, int k, int n_samples, uint64_t seed);

// The regression target rule: t1 = t0 + 0.5*tanh(s) + 0.1*(nbr_mean(t0) -
// t0) + noise(sigma = 0.05), clamped to >= 0.2 mm. Pass noise_rng = nullptr
// for the noise-free rule.
Tensor<float> regression_target(const Tensor<float>& s, const Tensor<float>& t0,
                                const NeighborTable& table, Rng* noise_rng);

// Two smooth input channels (a zero-mean depth-like field and a thickness
// field in [1,5] mm) and the regression target above. Deterministic per
// (level, n, seed).
Dataset synth_regression(int level, int n_samples, uint64_t seed);

// Contiguous near-equal split of sample indices into n_folds parts.
std::vector<std::vector<int>> make_folds(int n_samples, int n_folds);

// Feature file: magic "SFMP", u32 version, u32 N, u32 C, f32 row-major LE.
void write_features(const std::string& path, const Tensor<float>& f);
Tensor<float> read_features(const std::string& path);

// Label file: magic "SLBL", u32 N, then one u32 per vertex.
void write_labels(const std::string& path, const std::vector<int32_t>& labels);
std::vector<int32_t> read_labels(const std::string& path);

// Writes every sample plus manifest.json into dir (created if absent);
// load re-validates the manifest (files exist, folds partition samples,
// labels within range) and reads everything back.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Legacy ASCII VTK POLYDATA with one SCALARS block per named array.
void export_vtk(const IcoSphere& mesh,
                const std::vector<std::pair<std::string, std::vector<float>>>& scalars,
                const std::vector<std::pair<std::string, std::vector<int32_t>>>& labels,
                const std::string& path);

// Minimal reader for the dialect export_vtk writes (round-trip checks).
struct VtkData {
  Tensor<double> points;  // N x 3
  IndexMatrix polygons;   // T x 3
  std::vector<std::pair<std::string, std::vector<float>>> scalars;
  std::vector<std::pair<std::string, std::vector<int32_t>>> labels;
};
VtkData read_vtk(const std::string& path);

}  // namespace sunet
