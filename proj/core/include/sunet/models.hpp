#pragma once

// Assembly of the spherical U-Net family from the layer ops, plus parameter
// accounting and the per-vertex linear-regression baseline.

#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sunet/layers.hpp"

namespace sunet {

enum class Variant { Unet, Unet18Dine, Unet18Repa, NaiveDine, SegnetBasic, SegnetInter };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
std::string pool_mode_name(PoolMode m);
PoolMode parse_pool_mode(const std::string& name);

// Resolution steps the variant runs at (encoder depth): 5 for unet and both
// segnets, 4 for the 18-layer nets. naive_dine has no resolution steps.
int default_steps(Variant v);

struct ModelSpec {
  Variant variant = Variant::Unet;
  int in_channels = 3;
  int out_channels = 36;
  int base_channels = 64;  // C1, channels of the finest step
  int top_level = 5;       // mesh level of inputs and outputs
  PoolMode pooling = PoolMode::Mean;
  int steps = 0;  // 0 = variant default; segnet_basic always pools max
};

// Meshes, slot tables and parent tables for levels 0..top_level, with
// optional 3x3 tangent-grid samplers (built only when a RePa model needs
// them; spacing defaults to the level's mean edge arc).
struct Hierarchy {
  int top_level = 0;
  std::vector<IcoSphere> meshes;
  std::vector<NeighborTable> tables;
  std::vector<IndexMatrix> parents;  // parents[k] maps level k-1 -> k; [0] empty
  std::vector<std::shared_ptr<const RePaSampler>> samplers;

  static std::shared_ptr<Hierarchy> build(int top_level, bool with_repa = false);
  const RePaSampler& sampler(int level) const;
};

enum class LayerKind {
  DineConv,
  RePaConv,
  BatchNorm,
  Relu,
  Pool,
  TransposedConv,
  MaxUnpool,
  InterpUpsample,
  VertexLinear,
  SaveSkip,
  ConcatSkip,
};

// One step of the executed sequence. `level` is the layer's operating level:
// the input (fine) level for Pool, the output (fine) level for the three
// up-ops, and the constant level otherwise. in_ch/out_ch/win carry the
// declared dimensions for formula-based parameter accounting.
template <typename T>
struct Layer {
  LayerKind kind;
  std::string name;
  int level = 0;
  int in_ch = 0;
  int out_ch = 0;
  int win = 0;  // filter support: 7 DiNe, rows*cols RePa, 1 vertexwise
  PoolMode pool_mode = PoolMode::Mean;
  int slot = -1;  // skip or pooling-index registry entry
  std::vector<Parameter<T>> params;
  Tensor<T> running_mean, running_var;  // BatchNorm only
};

template <typename T>
class Model {
 public:
  ModelSpec spec;
  std::shared_ptr<const Hierarchy> hier;
  std::vector<Layer<T>> layers;
  int skip_count = 0;
  int arg_count = 0;

  // x is (batch * N_top) x C_in, samples stacked contiguously; returns
  // (batch * N_top) x C_out. Train mode drives batch-norm statistics.
  Value<T> forward(const Value<T>& x, int batch = 1, bool train = false);

  std::vector<Parameter<T>*> parameters();

  // Every learnable tensor plus the batch-norm running buffers, in layer
  // order, named for serialization.
  std::vector<std::pair<std::string, Tensor<T>*>> state();

  // Closed-form count from the declared layer dimensions (win*in*out + out
  // per biased conv, 7*out*in per transposed conv, 2*out per batch norm),
  // never reading tensor shapes. Optionally reports per-layer subtotals.
  int64_t param_count(std::vector<std::pair<std::string, int64_t>>* per_layer = nullptr) const;

 private:
  const IndexMatrix& full_slots(int level, int batch);
  const IndexMatrix& pool_slots(int level, int batch);
  const IndexMatrix& interp_slots(int level, int batch);
  const IndexMatrix& repa_anchors(int level, int batch);
  const Tensor<T>& repa_weights(int level, int batch);

  std::map<std::tuple<int, int, int>, IndexMatrix> index_cache_;
  std::map<std::pair<int, int>, Tensor<T>> repa_weight_cache_;
};

// Draws parameters in layer order from rng (uniform Xavier bounds), so a
// fixed seed reproduces the network bit for bit.
template <typename T>
Model<T> build_model(const ModelSpec& spec, std::shared_ptr<const Hierarchy> hier, Rng& rng);

// Batch expansion of an index table: `copies` stacked copies of idx, copy b
// offset by b * stride.
IndexMatrix tile_index(const IndexMatrix& idx, int copies, uint32_t stride);

// Per-vertex ordinary least squares of target against two features plus an
// intercept. inputs: one N x 2 array per subject; targets: one N x 1 per
// subject (at least 3). Near-singular normal equations fall back to a ridge
// with lambda = 1e-6. Returns N x 3 coefficients (w1, w2, intercept).
Tensor<double> linear_baseline_fit(const std::vector<Tensor<double>>& inputs,
                                   const std::vector<Tensor<double>>& targets);
Tensor<double> linear_baseline_predict(const Tensor<double>& coeffs,
                                       const Tensor<double>& inputs);

}  // namespace sunet
