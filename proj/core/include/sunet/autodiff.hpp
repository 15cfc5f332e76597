#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sunet/tensor.hpp"

namespace sunet {

// Reverse-mode autodiff over dense row-major arrays. A Value is a handle to
// a graph node holding the forward result, an optional gradient buffer, and
// a backward rule that scatters this node's gradient into its parents.
//
// Gradient persistence follows the usual convention: leaf nodes (parameters,
// explicitly-tracked inputs) accumulate across backward() calls until
// zero_grad(); interior node gradients are scratch, reset on every call.
//
// T is float (training) or double (gradient checks); both are instantiated
// in the library.

template <typename T>
struct Node {
  Tensor<T> data;
  Tensor<T> grad;  // allocated on first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;  // reads grad, accumulates into parents
  const char* op = "leaf";
};

template <typename T>
class Value {
 public:
  Value() = default;

  static Value leaf(Tensor<T> data, bool requires_grad = false) {
    Value v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->data = std::move(data);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& data() const { return node_->data; }
  Tensor<T>& data() { return node_->data; }
  const std::vector<int64_t>& shape() const { return node_->data.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient buffer; allocated zero-filled on demand.
  Tensor<T>& grad() {
    if (node_->grad.numel() != node_->data.numel()) node_->grad = Tensor<T>(node_->data.shape());
    return node_->grad;
  }
  void zero_grad() {
    if (node_->grad.numel()) std::fill(node_->grad.data(), node_->grad.data() + node_->grad.numel(), T(0));
  }

  // Reverse sweep from a scalar (numel == 1). Interior gradients are reset,
  // the output is seeded with 1, and leaf gradients accumulate.
  void backward();

  std::shared_ptr<Node<T>> node() const { return node_; }
  static Value wrap(std::shared_ptr<Node<T>> node) {
    Value v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// ---- primitives ------------------------------------------------------------
// All primitives validate shapes (UsageError) and index ranges
// (DataFormatError) and register exact backward rules.

// C[m x n] = A[m x k] * B[k x n]
template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b);

// C[m x n] = A[m x k] * B[n x k]^T
template <typename T>
Value<T> matmul_nt(const Value<T>& a, const Value<T>& b);

// out[i, s*C..(s+1)*C) = x[idx[i,s], :] for x[N x C], idx[M x S] -> [M x S*C]
template <typename T>
Value<T> gather_rows(const Value<T>& x, const IndexMatrix& idx);

// Adjoint of gather_rows: rows[M x S*C], idx[M x S] -> out[N x C] with
// out[idx[i,s], :] += rows[i, s*C..). Accumulation order is fixed (row-major
// over i, s) regardless of thread count.
template <typename T>
Value<T> scatter_add_rows(const Value<T>& rows, const IndexMatrix& idx, int64_t n_out);

// out[i, :] = sum_k w[i,k] * x[idx[i,k], :] for idx, w of shape [M x K].
// The interpolation weights are fixed data, not differentiated.
template <typename T>
Value<T> weighted_gather_rows(const Value<T>& x, const IndexMatrix& idx, const Tensor<T>& w);

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b);
template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b);
template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b);

// x[N x C] + bias[1 x C] broadcast over rows
template <typename T>
Value<T> add_bias_row(const Value<T>& x, const Value<T>& bias);

template <typename T>
Value<T> relu(const Value<T>& x);

template <typename T>
Value<T> concat_cols(const Value<T>& a, const Value<T>& b);

template <typename T>
Value<T> slice_cols(const Value<T>& x, int64_t begin, int64_t end);

template <typename T>
Value<T> reshape(const Value<T>& x, std::vector<int64_t> shape);

template <typename T>
Value<T> reduce_sum(const Value<T>& x);
template <typename T>
Value<T> reduce_mean(const Value<T>& x);

// Grouped row reductions over slot-major rows [M x S*C] -> [M x C].
template <typename T>
Value<T> slot_mean(const Value<T>& rows, int slots);

// Max variant; ties resolve to the lowest slot. If arg_out is non-null it
// receives the winning slot per (row, channel), as consumed by
// unpool_scatter.
template <typename T>
Value<T> slot_max(const Value<T>& rows, int slots, IndexMatrix* arg_out = nullptr);

// y[M x C] scattered to out[n_out x C]: out[slots[v][arg[v,c]], c] += y[v,c].
template <typename T>
Value<T> unpool_scatter(const Value<T>& y, const IndexMatrix& slots, const IndexMatrix& arg,
                        int64_t n_out);

// Mean over rows of per-row cross entropy; log-softmax is computed with
// max subtraction. Labels must lie in [0, K).
template <typename T>
Value<T> cross_entropy(const Value<T>& logits, const std::vector<int32_t>& labels);

// Mean absolute deviation over all entries.
template <typename T>
Value<T> l1_loss(const Value<T>& pred, const Tensor<T>& target);

// Fused batch normalization over rows (per-channel statistics, biased
// variance). Train mode normalizes by batch statistics and folds them into
// the running buffers with the given momentum; eval mode normalizes by the
// running buffers. gamma and beta are [1 x C].
template <typename T>
Value<T> batch_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                    T momentum = T(0.1), T eps = T(1e-5));

// ---- parameters ------------------------------------------------------------

// A named leaf plus optimizer scratch. Optimizer buffers are sized on first
// use by whichever rule touches them.
template <typename T>
struct Parameter {
  std::string name;
  Value<T> value;
  Tensor<T> momentum;  // SGD
  Tensor<T> m, v;      // Adam moments
  int64_t step = 0;

  Parameter() = default;
  Parameter(std::string name_, Tensor<T> data)
      : name(std::move(name_)), value(Value<T>::leaf(std::move(data), true)) {}
};

}  // namespace sunet
