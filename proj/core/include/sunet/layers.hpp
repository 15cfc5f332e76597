#pragma once

// Spherical network layers: DiNe and RePa convolution, pooling, transposed
// convolution, the two non-learned upsamplers, batch normalization and the
// vertex-wise head. Each op exists in two forms: a FeatureMap wrapper that
// validates mesh-level arithmetic, and a row-level worker that takes raw
// index tables so callers can substitute batch-expanded tables.

#include <cstdint>
#include <string>

#include "sunet/autodiff.hpp"
#include "sunet/icosphere.hpp"
#include "sunet/neighborhood.hpp"
#include "sunet/rng.hpp"

namespace sunet {

enum class PoolMode { Mean, Max };

// Per-vertex feature array bound to the mesh level it lives on. Row count is
// always vertex_count(level); channel count is free.
template <typename T>
struct FeatureMap {
  int level = 0;
  Value<T> values;  // N x C

  int64_t n() const { return values.data().rows(); }
  int64_t channels() const { return values.data().cols(); }
};

// filter weight (7D x F, slot-major rows) plus bias (1 x F)
template <typename T>
struct DiNeConvParams {
  Parameter<T> weight;
  Parameter<T> bias;

  DiNeConvParams() = default;
  DiNeConvParams(const std::string& prefix, int64_t in_channels, int64_t out_channels, Rng& rng);
};

// scale/shift (1 x C) with running first/second-moment buffers (C), the
// latter initialized to mean 0 / variance 1
template <typename T>
struct BatchNormParams {
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormParams() = default;
  BatchNormParams(const std::string& prefix, int64_t channels);
};

// Uniform init in +-sqrt(6 / (rows + cols)).
template <typename T>
Tensor<T> xavier_uniform(int64_t rows, int64_t cols, Rng& rng);

// Copy of the first n rows of an index table (the coarse-center prefix).
IndexMatrix head_rows(const IndexMatrix& idx, int64_t n);

// Index table driving linear upsampling: row v < coarse_rows is {v, v}, each
// later row holds the two coarse parents of that new vertex. Averaging the
// two referenced rows reproduces the coarse value on old vertices and the
// parent midpoint on new ones.
IndexMatrix interp_index_table(const IndexMatrix& parents, int64_t coarse_rows);

// ---- row-level workers ------------------------------------------------------

template <typename T>
Value<T> dine_conv_rows(const Value<T>& x, const Value<T>& weight, const Value<T>& bias,
                        const IndexMatrix& slots);

template <typename T>
Value<T> repa_conv_rows(const Value<T>& x, const Value<T>& weight, const Value<T>& bias,
                        const IndexMatrix& anchors, const Tensor<T>& interp, int64_t patch);

// coarse_slots must be the coarse-center prefix of the fine level's slot
// table; arg_out is filled in max mode with the winning slot per
// (vertex, channel).
template <typename T>
Value<T> pool_rows(const Value<T>& x, const IndexMatrix& coarse_slots, PoolMode mode,
                   IndexMatrix* arg_out = nullptr);

template <typename T>
Value<T> transposed_conv_rows(const Value<T>& y, const Value<T>& weight,
                              const IndexMatrix& coarse_slots, int64_t fine_rows);

template <typename T>
Value<T> strided_dine_conv_rows(const Value<T>& x, const Value<T>& weight,
                                const IndexMatrix& coarse_slots);

template <typename T>
Value<T> max_unpool_rows(const Value<T>& y, const IndexMatrix& coarse_slots,
                         const IndexMatrix& arg, int64_t fine_rows);

// table from interp_index_table (optionally batch-expanded)
template <typename T>
Value<T> interp_apply(const Value<T>& y, const IndexMatrix& table);

template <typename T>
Value<T> vertexwise_linear(const Value<T>& x, const Value<T>& weight, const Value<T>& bias);

// ---- level-checked wrappers -------------------------------------------------

// O = gather(x, slots) * W + b; level preserved.
template <typename T>
FeatureMap<T> dine_conv(const FeatureMap<T>& x, const DiNeConvParams<T>& p,
                        const NeighborTable& table);

// Tangent-grid resampling followed by the same dense filter product; weight
// is (rows*cols*D) x F.
template <typename T>
FeatureMap<T> repa_conv(const FeatureMap<T>& x, const RePaSampler& sampler,
                        const Value<T>& weight, const Value<T>& bias);

// Mean or max over each surviving coarse vertex's 7-slot row (pentagon
// centers appear twice, exactly as stored). Max mode records winning slots.
template <typename T>
FeatureMap<T> pool(const FeatureMap<T>& x, const NeighborTable& table, PoolMode mode,
                   IndexMatrix* arg_out = nullptr);

// For each coarse vertex v and slot j: out[slots[v][j]] += y[v] * W_j^T,
// where W_j is rows [jD, (j+1)D) of the 7D x F weight. No bias; this is the
// exact adjoint of strided_dine_conv with the same weight.
template <typename T>
FeatureMap<T> transposed_conv(const FeatureMap<T>& y, const Value<T>& weight,
                              const NeighborTable& fine_table);

// DiNe gather evaluated only at the surviving coarse centers, then the dense
// filter product. Weight only, no bias.
template <typename T>
FeatureMap<T> strided_dine_conv(const FeatureMap<T>& x, const Value<T>& weight,
                                const NeighborTable& fine_table);

// Routes each coarse value to the fine position its max-pool slot recorded;
// colliding restores sum.
template <typename T>
FeatureMap<T> max_unpool(const FeatureMap<T>& y, const NeighborTable& fine_table,
                         const IndexMatrix& arg);

// Old vertices copy the coarse value; each new vertex averages its two
// parents.
template <typename T>
FeatureMap<T> interp_upsample(const FeatureMap<T>& y, const IndexMatrix& parents, int fine_level);

template <typename T>
FeatureMap<T> batch_norm(const FeatureMap<T>& x, BatchNormParams<T>& p, bool train);

template <typename T>
FeatureMap<T> relu(const FeatureMap<T>& x);

template <typename T>
FeatureMap<T> vertexwise_linear(const FeatureMap<T>& x, const Value<T>& weight,
                                const Value<T>& bias);

}  // namespace sunet
