#include "sunet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "sunet/errors.hpp"

namespace sunet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace

template <typename T>
DiNeConvParams<T>::DiNeConvParams(const std::string& prefix, int64_t in_channels,
                                  int64_t out_channels, Rng& rng)
    : weight(prefix + ".weight", xavier_uniform<T>(7 * in_channels, out_channels, rng)),
      bias(prefix + ".bias", Tensor<T>({1, out_channels})) {}

template <typename T>
BatchNormParams<T>::BatchNormParams(const std::string& prefix, int64_t channels)
    : gamma(prefix + ".gamma", Tensor<T>::full({1, channels}, T(1))),
      beta(prefix + ".beta", Tensor<T>({1, channels})),
      running_mean(Tensor<T>({channels})),
      running_var(Tensor<T>::full({channels}, T(1))) {}

template <typename T>
Tensor<T> xavier_uniform(int64_t rows, int64_t cols, Rng& rng) {
  require(rows > 0 && cols > 0, "xavier_uniform: nonpositive dimensions");
  const T bound = T(std::sqrt(6.0 / double(rows + cols)));
  return Tensor<T>::uniform({rows, cols}, rng, -bound, bound);
}

IndexMatrix head_rows(const IndexMatrix& idx, int64_t n) {
  require(n >= 0 && n <= idx.rows, "head_rows: row prefix exceeds table");
  IndexMatrix out(n, idx.cols);
  std::copy(idx.data.begin(), idx.data.begin() + n * idx.cols, out.data.begin());
  return out;
}

IndexMatrix interp_index_table(const IndexMatrix& parents, int64_t coarse_rows) {
  require(parents.cols == 2, "interp_index_table: parent table must have 2 columns");
  const int64_t fine = coarse_rows + parents.rows;
  IndexMatrix table(fine, 2);
  for (int64_t v = 0; v < coarse_rows; ++v) {
    table.at(v, 0) = uint32_t(v);
    table.at(v, 1) = uint32_t(v);
  }
  for (int64_t r = 0; r < parents.rows; ++r) {
    table.at(coarse_rows + r, 0) = parents.at(r, 0);
    table.at(coarse_rows + r, 1) = parents.at(r, 1);
  }
  return table;
}

// ---- row-level workers ------------------------------------------------------

template <typename T>
Value<T> dine_conv_rows(const Value<T>& x, const Value<T>& weight, const Value<T>& bias,
                        const IndexMatrix& slots) {
  require(slots.cols == 7, "dine_conv: slot table must have 7 columns");
  require(weight.data().rank() == 2 && weight.data().rows() == 7 * x.data().cols(),
          "dine_conv: weight rows must be 7x input channels");
  return add_bias_row(matmul(gather_rows(x, slots), weight), bias);
}

template <typename T>
Value<T> repa_conv_rows(const Value<T>& x, const Value<T>& weight, const Value<T>& bias,
                        const IndexMatrix& anchors, const Tensor<T>& interp, int64_t patch) {
  require(patch > 0 && anchors.rows % patch == 0, "repa_conv: anchor rows not a patch multiple");
  const int64_t d = x.data().cols();
  require(weight.data().rank() == 2 && weight.data().rows() == patch * d,
          "repa_conv: weight rows must be patch size x input channels");
  auto sampled = weighted_gather_rows(x, anchors, interp);  // (N*P) x D
  auto flat = reshape(sampled, {anchors.rows / patch, patch * d});
  return add_bias_row(matmul(flat, weight), bias);
}

template <typename T>
Value<T> pool_rows(const Value<T>& x, const IndexMatrix& coarse_slots, PoolMode mode,
                   IndexMatrix* arg_out) {
  require(coarse_slots.cols == 7, "pool: slot table must have 7 columns");
  auto g = gather_rows(x, coarse_slots);
  if (mode == PoolMode::Mean) {
    require(arg_out == nullptr, "pool: mean mode records no indices");
    return slot_mean(g, 7);
  }
  return slot_max(g, 7, arg_out);
}

template <typename T>
Value<T> transposed_conv_rows(const Value<T>& y, const Value<T>& weight,
                              const IndexMatrix& coarse_slots, int64_t fine_rows) {
  require(coarse_slots.cols == 7, "transposed_conv: slot table must have 7 columns");
  require(coarse_slots.rows == y.data().rows(), "transposed_conv: coarse row mismatch");
  require(weight.data().rank() == 2 && weight.data().rows() % 7 == 0 &&
              weight.data().cols() == y.data().cols(),
          "transposed_conv: weight must be 7D x F with F matching input channels");
  return scatter_add_rows(matmul_nt(y, weight), coarse_slots, fine_rows);
}

template <typename T>
Value<T> strided_dine_conv_rows(const Value<T>& x, const Value<T>& weight,
                                const IndexMatrix& coarse_slots) {
  require(coarse_slots.cols == 7, "strided_dine_conv: slot table must have 7 columns");
  require(weight.data().rank() == 2 && weight.data().rows() == 7 * x.data().cols(),
          "strided_dine_conv: weight rows must be 7x input channels");
  return matmul(gather_rows(x, coarse_slots), weight);
}

template <typename T>
Value<T> max_unpool_rows(const Value<T>& y, const IndexMatrix& coarse_slots,
                         const IndexMatrix& arg, int64_t fine_rows) {
  require(coarse_slots.rows == y.data().rows() && arg.rows == y.data().rows() &&
              arg.cols == y.data().cols(),
          "max_unpool: pooling indices do not match the input");
  return unpool_scatter(y, coarse_slots, arg, fine_rows);
}

template <typename T>
Value<T> interp_apply(const Value<T>& y, const IndexMatrix& table) {
  Tensor<T> half = Tensor<T>::full({table.rows, table.cols}, T(0.5));
  return weighted_gather_rows(y, table, half);
}

template <typename T>
Value<T> vertexwise_linear(const Value<T>& x, const Value<T>& weight, const Value<T>& bias) {
  require(weight.data().rank() == 2 && weight.data().rows() == x.data().cols(),
          "vertexwise_linear: weight rows must match input channels");
  return add_bias_row(matmul(x, weight), bias);
}

// ---- level-checked wrappers -------------------------------------------------

namespace {

template <typename T>
void check_map(const FeatureMap<T>& x, const char* op) {
  require(x.level >= 0 && x.n() == vertex_count(x.level),
          std::string(op) + ": feature rows do not match the stated level");
}

}  // namespace

template <typename T>
FeatureMap<T> dine_conv(const FeatureMap<T>& x, const DiNeConvParams<T>& p,
                        const NeighborTable& table) {
  check_map(x, "dine_conv");
  require(table.level == x.level, "dine_conv: table level mismatch");
  return {x.level, dine_conv_rows(x.values, p.weight.value, p.bias.value, table.slots)};
}

template <typename T>
FeatureMap<T> repa_conv(const FeatureMap<T>& x, const RePaSampler& sampler,
                        const Value<T>& weight, const Value<T>& bias) {
  check_map(x, "repa_conv");
  require(sampler.level == x.level, "repa_conv: sampler level mismatch");
  Tensor<T> interp = sampler.weights.template cast<T>();
  return {x.level, repa_conv_rows(x.values, weight, bias, sampler.anchors, interp,
                                  int64_t(sampler.rows) * sampler.cols)};
}

template <typename T>
FeatureMap<T> pool(const FeatureMap<T>& x, const NeighborTable& table, PoolMode mode,
                   IndexMatrix* arg_out) {
  check_map(x, "pool");
  require(x.level >= 1, "pool: cannot pool below level 0");
  require(table.level == x.level, "pool: table level mismatch");
  const int64_t coarse = vertex_count(x.level - 1);
  return {x.level - 1, pool_rows(x.values, head_rows(table.slots, coarse), mode, arg_out)};
}

template <typename T>
FeatureMap<T> transposed_conv(const FeatureMap<T>& y, const Value<T>& weight,
                              const NeighborTable& fine_table) {
  check_map(y, "transposed_conv");
  require(fine_table.level == y.level + 1, "transposed_conv: fine table must be one level up");
  const int64_t fine = vertex_count(fine_table.level);
  return {fine_table.level,
          transposed_conv_rows(y.values, weight, head_rows(fine_table.slots, y.n()), fine)};
}

template <typename T>
FeatureMap<T> strided_dine_conv(const FeatureMap<T>& x, const Value<T>& weight,
                                const NeighborTable& fine_table) {
  check_map(x, "strided_dine_conv");
  require(x.level >= 1, "strided_dine_conv: cannot stride below level 0");
  require(fine_table.level == x.level, "strided_dine_conv: table level mismatch");
  const int64_t coarse = vertex_count(x.level - 1);
  return {x.level - 1,
          strided_dine_conv_rows(x.values, weight, head_rows(fine_table.slots, coarse))};
}

template <typename T>
FeatureMap<T> max_unpool(const FeatureMap<T>& y, const NeighborTable& fine_table,
                         const IndexMatrix& arg) {
  check_map(y, "max_unpool");
  require(fine_table.level == y.level + 1, "max_unpool: fine table must be one level up");
  const int64_t fine = vertex_count(fine_table.level);
  return {fine_table.level,
          max_unpool_rows(y.values, head_rows(fine_table.slots, y.n()), arg, fine)};
}

template <typename T>
FeatureMap<T> interp_upsample(const FeatureMap<T>& y, const IndexMatrix& parents,
                              int fine_level) {
  check_map(y, "interp_upsample");
  require(fine_level == y.level + 1, "interp_upsample: fine level must be one level up");
  require(vertex_count(fine_level) == y.n() + parents.rows,
          "interp_upsample: parent table does not match the level step");
  return {fine_level, interp_apply(y.values, interp_index_table(parents, y.n()))};
}

template <typename T>
FeatureMap<T> batch_norm(const FeatureMap<T>& x, BatchNormParams<T>& p, bool train) {
  check_map(x, "batch_norm");
  return {x.level, batch_norm(x.values, p.gamma.value, p.beta.value, p.running_mean,
                              p.running_var, train)};
}

template <typename T>
FeatureMap<T> relu(const FeatureMap<T>& x) {
  return {x.level, relu(x.values)};
}

template <typename T>
FeatureMap<T> vertexwise_linear(const FeatureMap<T>& x, const Value<T>& weight,
                                const Value<T>& bias) {
  check_map(x, "vertexwise_linear");
  return {x.level, vertexwise_linear(x.values, weight, bias)};
}

#define SUNET_INSTANTIATE_LAYERS(T)                                                            \
  template struct DiNeConvParams<T>;                                                          \
  template struct BatchNormParams<T>;                                                         \
  template Tensor<T> xavier_uniform<T>(int64_t, int64_t, Rng&);                               \
  template Value<T> dine_conv_rows<T>(const Value<T>&, const Value<T>&, const Value<T>&,      \
                                      const IndexMatrix&);                                    \
  template Value<T> repa_conv_rows<T>(const Value<T>&, const Value<T>&, const Value<T>&,      \
                                      const IndexMatrix&, const Tensor<T>&, int64_t);         \
  template Value<T> pool_rows<T>(const Value<T>&, const IndexMatrix&, PoolMode, IndexMatrix*); \
  template Value<T> transposed_conv_rows<T>(const Value<T>&, const Value<T>&,                 \
                                            const IndexMatrix&, int64_t);                     \
  template Value<T> strided_dine_conv_rows<T>(const Value<T>&, const Value<T>&,               \
                                              const IndexMatrix&);                            \
  template Value<T> max_unpool_rows<T>(const Value<T>&, const IndexMatrix&,                   \
                                       const IndexMatrix&, int64_t);                          \
  template Value<T> interp_apply<T>(const Value<T>&, const IndexMatrix&);                     \
  template Value<T> vertexwise_linear<T>(const Value<T>&, const Value<T>&, const Value<T>&);  \
  template FeatureMap<T> dine_conv<T>(const FeatureMap<T>&, const DiNeConvParams<T>&,         \
                                      const NeighborTable&);                                  \
  template FeatureMap<T> repa_conv<T>(const FeatureMap<T>&, const RePaSampler&,               \
                                      const Value<T>&, const Value<T>&);                      \
  template FeatureMap<T> pool<T>(const FeatureMap<T>&, const NeighborTable&, PoolMode,        \
                                 IndexMatrix*);                                               \
  template FeatureMap<T> transposed_conv<T>(const FeatureMap<T>&, const Value<T>&,            \
                                            const NeighborTable&);                            \
  template FeatureMap<T> strided_dine_conv<T>(const FeatureMap<T>&, const Value<T>&,          \
                                              const NeighborTable&);                          \
  template FeatureMap<T> max_unpool<T>(const FeatureMap<T>&, const NeighborTable&,            \
                                       const IndexMatrix&);                                   \
  template FeatureMap<T> interp_upsample<T>(const FeatureMap<T>&, const IndexMatrix&, int);   \
  template FeatureMap<T> batch_norm<T>(const FeatureMap<T>&, BatchNormParams<T>&, bool);      \
  template FeatureMap<T> relu<T>(const FeatureMap<T>&);                                       \
  template FeatureMap<T> vertexwise_linear<T>(const FeatureMap<T>&, const Value<T>&,          \
                                              const Value<T>&);

SUNET_INSTANTIATE_LAYERS(float)
SUNET_INSTANTIATE_LAYERS(double)

}  // namespace sunet
