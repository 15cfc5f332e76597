#include "sunet/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "sunet/errors.hpp"
#include "sunet/parallel.hpp"

namespace sunet {

namespace {

template <typename T>
using EMat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMat = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
EMat<T> em(Tensor<T>& t) {
  return EMat<T>(t.data(), t.rows(), t.cols());
}
template <typename T>
CMat<T> cm(const Tensor<T>& t) {
  return CMat<T>(t.data(), t.rows(), t.cols());
}

void require(bool cond, const char* msg) {
  if (!cond) throw UsageError(msg);
}

template <typename T>
Tensor<T>& ensure_grad(Node<T>& n) {
  if (n.grad.numel() != n.data.numel()) n.grad = Tensor<T>(n.data.shape());
  return n.grad;
}

template <typename T>
void check_mat(const Value<T>& v, const char* what) {
  if (!v.defined() || v.data().rank() != 2)
    throw UsageError(std::string(what) + " must be a defined rank-2 value");
}

void validate_indices(const IndexMatrix& idx, int64_t limit, const char* what) {
  for (uint32_t i : idx.data)
    if (i >= limit) throw DataFormatError(std::string(what) + ": index out of range");
}

template <typename T>
Value<T> make_node(Tensor<T> data, std::vector<Value<T>> parents,
                   std::function<void(Node<T>&)> fn, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->data = std::move(data);
  node->op = op;
  bool rg = false;
  node->parents.reserve(parents.size());
  for (auto& p : parents) {
    rg = rg || p.requires_grad();
    node->parents.push_back(p.node());
  }
  node->requires_grad = rg;
  if (rg) node->backward_fn = std::move(fn);
  return Value<T>::wrap(std::move(node));
}

// Fixed-order scatter: dst[idx[i,s], c] += src[i, s*C + c]. Threads split the
// channel axis, so every destination entry is accumulated by exactly one
// thread in row-major (i, s) order — bit-identical for any thread count.
template <typename T>
void scatter_accumulate(const T* src, const uint32_t* idx, int64_t m, int64_t s, int64_t c,
                        T* dst) {
  parallel_for(c, [&](int64_t c0, int64_t c1) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < s; ++j) {
        T* d = dst + static_cast<int64_t>(idx[i * s + j]) * c;
        const T* row = src + (i * s + j) * c;
        for (int64_t k = c0; k < c1; ++k) d[k] += row[k];
      }
  });
}

// Row-independent product kernels. Each output row is a fixed-order function
// of its own input row alone, so a row's bits never depend on where it sits
// in the matrix — blocked GEMMs round panel tails differently, which would
// break the identical-stacked-samples guarantee of batched forward passes.
template <typename T>
void rowwise_mm(const T* a, const T* b, int64_t m, int64_t k, int64_t n, T* out) {
  // Rows are processed four at a time so each weight row streamed from cache
  // feeds four accumulations, but every output row still runs the same
  // k-ascending, j-ascending schedule on its own data alone — the grouping
  // shares reads, never arithmetic, so results are position-independent.
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    int64_t i = r0;
    for (; i + 4 <= r1; i += 4) {
      T* o0 = out + i * n;
      T* o1 = o0 + n;
      T* o2 = o1 + n;
      T* o3 = o2 + n;
      std::fill(o0, o0 + 4 * n, T(0));
      const T* a0 = a + i * k;
      const T* a1 = a0 + k;
      const T* a2 = a1 + k;
      const T* a3 = a2 + k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
        const T* br = b + kk * n;
        for (int64_t j = 0; j < n; ++j) {
          const T w = br[j];
          o0[j] += v0 * w;
          o1[j] += v1 * w;
          o2[j] += v2 * w;
          o3[j] += v3 * w;
        }
      }
    }
    for (; i < r1; ++i) {
      T* o = out + i * n;
      std::fill(o, o + n, T(0));
      const T* ar = a + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = ar[kk];
        const T* br = b + kk * n;
        for (int64_t j = 0; j < n; ++j) o[j] += av * br[j];
      }
    }
  });
}

// b is n x k row-major; out[i,j] = dot(a_i, b_j) accumulated in index order.
template <typename T>
void rowwise_mm_nt(const T* a, const T* b, int64_t m, int64_t k, int64_t n, T* out) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      const T* ar = a + i * k;
      T* o = out + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const T* br = b + j * k;
        T acc = 0;
        for (int64_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
        o[j] = acc;
      }
    }
  });
}

}  // namespace

template <typename T>
void Value<T>::backward() {
  if (!node_ || node_->data.numel() != 1)
    throw UsageError("backward requires a scalar value");
  if (!node_->requires_grad) return;

  // post-order over the requires-grad subgraph
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited{node_.get()};
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  while (!stack.empty()) {
    auto [n, i] = stack.back();
    if (i < n->parents.size()) {
      ++stack.back().second;
      Node<T>* p = n->parents[i].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // interior gradients are per-call scratch; leaves accumulate
  for (Node<T>* n : order) {
    ensure_grad(*n);
    if (!n->parents.empty())
      std::fill(n->grad.data(), n->grad.data() + n->grad.numel(), T(0));
  }
  node_->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- dense algebra ---------------------------------------------------------

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  check_mat(a, "matmul lhs");
  check_mat(b, "matmul rhs");
  require(a.data().cols() == b.data().rows(), "matmul: inner dimensions differ");
  Tensor<T> out({a.data().rows(), b.data().cols()});
  rowwise_mm(a.data().data(), b.data().data(), out.rows(), a.data().cols(), out.cols(),
             out.data());
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        CMat<T> g(nd.grad.data(), nd.grad.rows(), nd.grad.cols());
        if (pa.requires_grad)
          em(ensure_grad(pa)) += g * cm(pb.data).transpose();
        if (pb.requires_grad)
          em(ensure_grad(pb)) += cm(pa.data).transpose() * g;
      },
      "matmul");
}

template <typename T>
Value<T> matmul_nt(const Value<T>& a, const Value<T>& b) {
  check_mat(a, "matmul_nt lhs");
  check_mat(b, "matmul_nt rhs");
  require(a.data().cols() == b.data().cols(), "matmul_nt: inner dimensions differ");
  Tensor<T> out({a.data().rows(), b.data().rows()});
  rowwise_mm_nt(a.data().data(), b.data().data(), out.rows(), a.data().cols(), out.cols(),
                out.data());
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        CMat<T> g(nd.grad.data(), nd.grad.rows(), nd.grad.cols());
        if (pa.requires_grad) em(ensure_grad(pa)) += g * cm(pb.data);
        if (pb.requires_grad) em(ensure_grad(pb)) += g.transpose() * cm(pa.data);
      },
      "matmul_nt");
}

// ---- gather / scatter ------------------------------------------------------

template <typename T>
Value<T> gather_rows(const Value<T>& x, const IndexMatrix& idx) {
  check_mat(x, "gather_rows input");
  const int64_t n = x.data().rows(), c = x.data().cols();
  const int64_t m = idx.rows, s = idx.cols;
  validate_indices(idx, n, "gather_rows");

  Tensor<T> out({m, s * c});
  const T* src = x.data().data();
  T* dst = out.data();
  const uint32_t* ix = idx.data.data();
  parallel_for(m, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i)
      for (int64_t j = 0; j < s; ++j)
        std::memcpy(dst + (i * s + j) * c, src + static_cast<int64_t>(ix[i * s + j]) * c,
                    sizeof(T) * static_cast<size_t>(c));
  });

  auto shared_idx = std::make_shared<IndexMatrix>(idx);
  return make_node<T>(
      std::move(out), {x},
      [shared_idx, s, c](Node<T>& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        scatter_accumulate(nd.grad.data(), shared_idx->data.data(), shared_idx->rows, s, c,
                           ensure_grad(px).data());
      },
      "gather_rows");
}

template <typename T>
Value<T> scatter_add_rows(const Value<T>& rows, const IndexMatrix& idx, int64_t n_out) {
  check_mat(rows, "scatter_add_rows input");
  const int64_t m = idx.rows, s = idx.cols;
  require(m == rows.data().rows(), "scatter_add_rows: row count does not match index table");
  require(s > 0 && rows.data().cols() % s == 0,
          "scatter_add_rows: columns are not a multiple of the slot count");
  const int64_t c = rows.data().cols() / s;
  require(n_out > 0, "scatter_add_rows: output row count must be positive");
  validate_indices(idx, n_out, "scatter_add_rows");

  Tensor<T> out({n_out, c});
  scatter_accumulate(rows.data().data(), idx.data.data(), m, s, c, out.data());

  auto shared_idx = std::make_shared<IndexMatrix>(idx);
  return make_node<T>(
      std::move(out), {rows},
      [shared_idx, s, c](Node<T>& nd) {
        auto& pr = *nd.parents[0];
        if (!pr.requires_grad) return;
        const int64_t m2 = shared_idx->rows;
        const uint32_t* ix = shared_idx->data.data();
        const T* g = nd.grad.data();
        T* dst = ensure_grad(pr).data();
        parallel_for(m2, [&](int64_t b, int64_t e) {
          for (int64_t i = b; i < e; ++i)
            for (int64_t j = 0; j < s; ++j) {
              const T* gr = g + static_cast<int64_t>(ix[i * s + j]) * c;
              T* d = dst + (i * s + j) * c;
              for (int64_t k = 0; k < c; ++k) d[k] += gr[k];
            }
        });
      },
      "scatter_add_rows");
}

template <typename T>
Value<T> weighted_gather_rows(const Value<T>& x, const IndexMatrix& idx, const Tensor<T>& w) {
  check_mat(x, "weighted_gather_rows input");
  const int64_t n = x.data().rows(), c = x.data().cols();
  const int64_t m = idx.rows, k = idx.cols;
  require(w.rows() == m && w.cols() == k,
          "weighted_gather_rows: weight shape does not match index table");
  validate_indices(idx, n, "weighted_gather_rows");

  Tensor<T> out({m, c});
  const T* src = x.data().data();
  const T* wp = w.data();
  const uint32_t* ix = idx.data.data();
  T* dst = out.data();
  parallel_for(m, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      T* row = dst + i * c;
      for (int64_t j = 0; j < k; ++j) {
        const T wj = wp[i * k + j];
        const T* srow = src + static_cast<int64_t>(ix[i * k + j]) * c;
        for (int64_t cc = 0; cc < c; ++cc) row[cc] += wj * srow[cc];
      }
    }
  });

  auto shared_idx = std::make_shared<IndexMatrix>(idx);
  auto shared_w = std::make_shared<Tensor<T>>(w);
  return make_node<T>(
      std::move(out), {x},
      [shared_idx, shared_w, k, c](Node<T>& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        const int64_t m2 = shared_idx->rows;
        const uint32_t* ix = shared_idx->data.data();
        const T* wp = shared_w->data();
        const T* g = nd.grad.data();
        T* dst = ensure_grad(px).data();
        parallel_for(c, [&](int64_t c0, int64_t c1) {
          for (int64_t i = 0; i < m2; ++i)
            for (int64_t j = 0; j < k; ++j) {
              const T wj = wp[i * k + j];
              T* d = dst + static_cast<int64_t>(ix[i * k + j]) * c;
              const T* gr = g + i * c;
              for (int64_t cc = c0; cc < c1; ++cc) d[cc] += wj * gr[cc];
            }
        });
      },
      "weighted_gather_rows");
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <typename T, typename Fwd, typename Bwd>
Value<T> binary_elementwise(const Value<T>& a, const Value<T>& b, Fwd fwd, Bwd bwd,
                            const char* op) {
  require(a.defined() && b.defined() && a.data().same_shape(b.data()),
          "elementwise: operand shapes differ");
  Tensor<T> out(a.data().shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data();
  parallel_for(out.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) po[i] = fwd(pa[i], pb[i]);
  });
  return make_node<T>(std::move(out), {a, b},
                      [bwd](Node<T>& nd) {
                        auto& pa2 = *nd.parents[0];
                        auto& pb2 = *nd.parents[1];
                        const T* g = nd.grad.data();
                        const T* da = pa2.data.data();
                        const T* db = pb2.data.data();
                        T* ga = pa2.requires_grad ? ensure_grad(pa2).data() : nullptr;
                        T* gb = pb2.requires_grad ? ensure_grad(pb2).data() : nullptr;
                        const int64_t n = nd.grad.numel();
                        parallel_for(n, [&](int64_t lo, int64_t hi) {
                          for (int64_t i = lo; i < hi; ++i) bwd(g[i], da[i], db[i], ga, gb, i);
                        });
                      },
                      op);
}

}  // namespace

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  return binary_elementwise<T>(
      a, b, [](T x, T y) { return x + y; },
      [](T g, T, T, T* ga, T* gb, int64_t i) {
        if (ga) ga[i] += g;
        if (gb) gb[i] += g;
      },
      "add");
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  return binary_elementwise<T>(
      a, b, [](T x, T y) { return x - y; },
      [](T g, T, T, T* ga, T* gb, int64_t i) {
        if (ga) ga[i] += g;
        if (gb) gb[i] -= g;
      },
      "sub");
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  return binary_elementwise<T>(
      a, b, [](T x, T y) { return x * y; },
      [](T g, T x, T y, T* ga, T* gb, int64_t i) {
        if (ga) ga[i] += g * y;
        if (gb) gb[i] += g * x;
      },
      "mul");
}

template <typename T>
Value<T> add_bias_row(const Value<T>& x, const Value<T>& bias) {
  check_mat(x, "add_bias_row input");
  check_mat(bias, "add_bias_row bias");
  require(bias.data().rows() == 1 && bias.data().cols() == x.data().cols(),
          "add_bias_row: bias must be 1 x C");
  const int64_t n = x.data().rows(), c = x.data().cols();
  Tensor<T> out({n, c});
  const T* px = x.data().data();
  const T* pb = bias.data().data();
  T* po = out.data();
  parallel_for(n, [&](int64_t b, int64_t e) {
    for (int64_t r = b; r < e; ++r)
      for (int64_t k = 0; k < c; ++k) po[r * c + k] = px[r * c + k] + pb[k];
  });
  return make_node<T>(
      std::move(out), {x, bias},
      [n, c](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        auto& pb2 = *nd.parents[1];
        const T* g = nd.grad.data();
        if (px2.requires_grad) {
          T* gx = ensure_grad(px2).data();
          parallel_for(n * c, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) gx[i] += g[i];
          });
        }
        if (pb2.requires_grad) {
          T* gb = ensure_grad(pb2).data();
          parallel_for(c, [&](int64_t c0, int64_t c1) {
            for (int64_t k = c0; k < c1; ++k) {
              double acc = 0;
              for (int64_t r = 0; r < n; ++r) acc += double(g[r * c + k]);
              gb[k] += static_cast<T>(acc);
            }
          });
        }
      },
      "add_bias_row");
}

template <typename T>
Value<T> relu(const Value<T>& x) {
  require(x.defined(), "relu: undefined input");
  Tensor<T> out(x.data().shape());
  const T* px = x.data().data();
  T* po = out.data();
  parallel_for(out.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  });
  return make_node<T>(
      std::move(out), {x},
      [](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        if (!px2.requires_grad) return;
        const T* g = nd.grad.data();
        const T* d = px2.data.data();
        T* gx = ensure_grad(px2).data();
        parallel_for(nd.grad.numel(), [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i)
            if (d[i] > T(0)) gx[i] += g[i];
        });
      },
      "relu");
}

// ---- shape plumbing --------------------------------------------------------

template <typename T>
Value<T> concat_cols(const Value<T>& a, const Value<T>& b) {
  check_mat(a, "concat_cols lhs");
  check_mat(b, "concat_cols rhs");
  require(a.data().rows() == b.data().rows(), "concat_cols: row counts differ");
  const int64_t n = a.data().rows(), ca = a.data().cols(), cb = b.data().cols();
  Tensor<T> out({n, ca + cb});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data();
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      std::memcpy(po + r * (ca + cb), pa + r * ca, sizeof(T) * size_t(ca));
      std::memcpy(po + r * (ca + cb) + ca, pb + r * cb, sizeof(T) * size_t(cb));
    }
  });
  return make_node<T>(
      std::move(out), {a, b},
      [n, ca, cb](Node<T>& nd) {
        auto& pa2 = *nd.parents[0];
        auto& pb2 = *nd.parents[1];
        const T* g = nd.grad.data();
        T* ga = pa2.requires_grad ? ensure_grad(pa2).data() : nullptr;
        T* gb = pb2.requires_grad ? ensure_grad(pb2).data() : nullptr;
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r) {
            const T* gr = g + r * (ca + cb);
            if (ga)
              for (int64_t k = 0; k < ca; ++k) ga[r * ca + k] += gr[k];
            if (gb)
              for (int64_t k = 0; k < cb; ++k) gb[r * cb + k] += gr[ca + k];
          }
        });
      },
      "concat_cols");
}

template <typename T>
Value<T> slice_cols(const Value<T>& x, int64_t begin, int64_t end) {
  check_mat(x, "slice_cols input");
  const int64_t n = x.data().rows(), c = x.data().cols();
  require(0 <= begin && begin < end && end <= c, "slice_cols: bad column range");
  const int64_t w = end - begin;
  Tensor<T> out({n, w});
  const T* px = x.data().data();
  T* po = out.data();
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r)
      std::memcpy(po + r * w, px + r * c + begin, sizeof(T) * size_t(w));
  });
  return make_node<T>(
      std::move(out), {x},
      [n, c, begin, w](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        if (!px2.requires_grad) return;
        const T* g = nd.grad.data();
        T* gx = ensure_grad(px2).data();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r)
            for (int64_t k = 0; k < w; ++k) gx[r * c + begin + k] += g[r * w + k];
        });
      },
      "slice_cols");
}

template <typename T>
Value<T> reshape(const Value<T>& x, std::vector<int64_t> shape) {
  require(x.defined(), "reshape: undefined input");
  require(Tensor<T>::numel_of(shape) == x.data().numel(), "reshape: element count differs");
  Tensor<T> out(shape, std::vector<T>(x.data().data(), x.data().data() + x.data().numel()));
  return make_node<T>(
      std::move(out), {x},
      [](Node<T>& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        const T* g = nd.grad.data();
        T* gx = ensure_grad(px).data();
        const int64_t n = nd.grad.numel();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) gx[i] += g[i];
        });
      },
      "reshape");
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Value<T> reduce_sum(const Value<T>& x) {
  require(x.defined(), "reduce_sum: undefined input");
  double acc = 0;
  const T* px = x.data().data();
  for (int64_t i = 0; i < x.data().numel(); ++i) acc += double(px[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  return make_node<T>(
      std::move(out), {x},
      [](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        if (!px2.requires_grad) return;
        const T g = nd.grad[0];
        T* gx = ensure_grad(px2).data();
        const int64_t n = px2.data.numel();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) gx[i] += g;
        });
      },
      "reduce_sum");
}

template <typename T>
Value<T> reduce_mean(const Value<T>& x) {
  require(x.defined(), "reduce_mean: undefined input");
  const int64_t n = x.data().numel();
  double acc = 0;
  const T* px = x.data().data();
  for (int64_t i = 0; i < n; ++i) acc += double(px[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / double(n));
  return make_node<T>(
      std::move(out), {x},
      [n](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        if (!px2.requires_grad) return;
        const T g = nd.grad[0] / static_cast<T>(n);
        T* gx = ensure_grad(px2).data();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) gx[i] += g;
        });
      },
      "reduce_mean");
}

// ---- grouped slot reductions ------------------------------------------------

template <typename T>
Value<T> slot_mean(const Value<T>& rows, int slots) {
  check_mat(rows, "slot_mean input");
  require(slots > 0 && rows.data().cols() % slots == 0,
          "slot_mean: columns are not a multiple of the slot count");
  const int64_t m = rows.data().rows(), s = slots, c = rows.data().cols() / slots;
  Tensor<T> out({m, c});
  const T* pr = rows.data().data();
  T* po = out.data();
  parallel_for(m, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t k = 0; k < c; ++k) {
        double acc = 0;
        for (int64_t j = 0; j < s; ++j) acc += double(pr[(i * s + j) * c + k]);
        po[i * c + k] = static_cast<T>(acc / double(s));
      }
  });
  return make_node<T>(
      std::move(out), {rows},
      [s, c](Node<T>& nd) {
        auto& pr2 = *nd.parents[0];
        if (!pr2.requires_grad) return;
        const int64_t m2 = nd.grad.rows();
        const T* g = nd.grad.data();
        T* gr = ensure_grad(pr2).data();
        parallel_for(m2, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i)
            for (int64_t j = 0; j < s; ++j)
              for (int64_t k = 0; k < c; ++k)
                gr[(i * s + j) * c + k] += g[i * c + k] / static_cast<T>(s);
        });
      },
      "slot_mean");
}

template <typename T>
Value<T> slot_max(const Value<T>& rows, int slots, IndexMatrix* arg_out) {
  check_mat(rows, "slot_max input");
  require(slots > 0 && rows.data().cols() % slots == 0,
          "slot_max: columns are not a multiple of the slot count");
  const int64_t m = rows.data().rows(), s = slots, c = rows.data().cols() / slots;
  Tensor<T> out({m, c});
  auto arg = std::make_shared<IndexMatrix>(m, c);
  const T* pr = rows.data().data();
  T* po = out.data();
  uint32_t* pa = arg->data.data();
  parallel_for(m, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t k = 0; k < c; ++k) {
        T best = pr[i * s * c + k];
        uint32_t bj = 0;
        for (int64_t j = 1; j < s; ++j) {
          T v = pr[(i * s + j) * c + k];
          if (v > best) {
            best = v;
            bj = static_cast<uint32_t>(j);
          }
        }
        po[i * c + k] = best;
        pa[i * c + k] = bj;
      }
  });
  if (arg_out) *arg_out = *arg;
  return make_node<T>(
      std::move(out), {rows},
      [arg, s, c](Node<T>& nd) {
        auto& pr2 = *nd.parents[0];
        if (!pr2.requires_grad) return;
        const int64_t m2 = nd.grad.rows();
        const T* g = nd.grad.data();
        const uint32_t* pa2 = arg->data.data();
        T* gr = ensure_grad(pr2).data();
        parallel_for(m2, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i)
            for (int64_t k = 0; k < c; ++k)
              gr[(i * s + pa2[i * c + k]) * c + k] += g[i * c + k];
        });
      },
      "slot_max");
}

template <typename T>
Value<T> unpool_scatter(const Value<T>& y, const IndexMatrix& slots, const IndexMatrix& arg,
                        int64_t n_out) {
  check_mat(y, "unpool_scatter input");
  const int64_t m = y.data().rows(), c = y.data().cols();
  require(slots.rows == m, "unpool_scatter: slot table row count mismatch");
  require(arg.rows == m && arg.cols == c, "unpool_scatter: argmax table shape mismatch");
  validate_indices(slots, n_out, "unpool_scatter");
  validate_indices(arg, slots.cols, "unpool_scatter argmax");

  auto shared_slots = std::make_shared<IndexMatrix>(slots);
  auto shared_arg = std::make_shared<IndexMatrix>(arg);
  Tensor<T> out({n_out, c});
  const T* py = y.data().data();
  T* po = out.data();
  const uint32_t* ps = shared_slots->data.data();
  const uint32_t* pg = shared_arg->data.data();
  const int64_t sc = slots.cols;
  parallel_for(c, [&](int64_t c0, int64_t c1) {
    for (int64_t v = 0; v < m; ++v)
      for (int64_t k = c0; k < c1; ++k)
        po[static_cast<int64_t>(ps[v * sc + pg[v * c + k]]) * c + k] += py[v * c + k];
  });
  return make_node<T>(
      std::move(out), {y},
      [shared_slots, shared_arg, c, sc](Node<T>& nd) {
        auto& py2 = *nd.parents[0];
        if (!py2.requires_grad) return;
        const int64_t m2 = py2.data.rows();
        const T* g = nd.grad.data();
        const uint32_t* ps2 = shared_slots->data.data();
        const uint32_t* pg2 = shared_arg->data.data();
        T* gy = ensure_grad(py2).data();
        parallel_for(m2, [&](int64_t lo, int64_t hi) {
          for (int64_t v = lo; v < hi; ++v)
            for (int64_t k = 0; k < c; ++k)
              gy[v * c + k] +=
                  g[static_cast<int64_t>(ps2[v * sc + pg2[v * c + k]]) * c + k];
        });
      },
      "unpool_scatter");
}

// ---- losses ----------------------------------------------------------------

template <typename T>
Value<T> cross_entropy(const Value<T>& logits, const std::vector<int32_t>& labels) {
  check_mat(logits, "cross_entropy logits");
  const int64_t n = logits.data().rows(), k = logits.data().cols();
  require(static_cast<int64_t>(labels.size()) == n,
          "cross_entropy: label count does not match logit rows");
  for (int32_t l : labels)
    if (l < 0 || l >= k) throw DataFormatError("cross_entropy: label out of range");

  auto softmax = std::make_shared<Tensor<T>>(std::vector<int64_t>{n, k});
  const T* pl = logits.data().data();
  T* psm = softmax->data();
  std::vector<double> row_loss(static_cast<size_t>(n));
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const T* row = pl + r * k;
      T mx = row[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double z = 0;
      for (int64_t j = 0; j < k; ++j) z += std::exp(double(row[j] - mx));
      const double lse = double(mx) + std::log(z);
      for (int64_t j = 0; j < k; ++j)
        psm[r * k + j] = static_cast<T>(std::exp(double(row[j] - mx)) / z);
      row_loss[static_cast<size_t>(r)] = lse - double(row[labels[static_cast<size_t>(r)]]);
    }
  });
  double acc = 0;
  for (double v : row_loss) acc += v;
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / double(n));

  auto shared_labels = std::make_shared<std::vector<int32_t>>(labels);
  return make_node<T>(
      std::move(out), {logits},
      [softmax, shared_labels, n, k](Node<T>& nd) {
        auto& pl2 = *nd.parents[0];
        if (!pl2.requires_grad) return;
        const T g = nd.grad[0] / static_cast<T>(n);
        const T* psm2 = softmax->data();
        const int32_t* lbl = shared_labels->data();
        T* gx = ensure_grad(pl2).data();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t r = lo; r < hi; ++r)
            for (int64_t j = 0; j < k; ++j)
              gx[r * k + j] += g * (psm2[r * k + j] - T(lbl[r] == j));
        });
      },
      "cross_entropy");
}

template <typename T>
Value<T> l1_loss(const Value<T>& pred, const Tensor<T>& target) {
  require(pred.defined() && pred.data().same_shape(target), "l1_loss: shape mismatch");
  const int64_t n = pred.data().numel();
  const T* pp = pred.data().data();
  const T* pt = target.data();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(double(pp[i]) - double(pt[i]));
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / double(n));

  auto shared_target = std::make_shared<Tensor<T>>(target);
  return make_node<T>(
      std::move(out), {pred},
      [shared_target, n](Node<T>& nd) {
        auto& pp2 = *nd.parents[0];
        if (!pp2.requires_grad) return;
        const T g = nd.grad[0] / static_cast<T>(n);
        const T* d = pp2.data.data();
        const T* t = shared_target->data();
        T* gx = ensure_grad(pp2).data();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) {
            const T diff = d[i] - t[i];
            if (diff > T(0))
              gx[i] += g;
            else if (diff < T(0))
              gx[i] -= g;
          }
        });
      },
      "l1_loss");
}

// ---- batch normalization ----------------------------------------------------

template <typename T>
Value<T> batch_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train, T momentum,
                    T eps) {
  check_mat(x, "batch_norm input");
  check_mat(gamma, "batch_norm gamma");
  check_mat(beta, "batch_norm beta");
  const int64_t n = x.data().rows(), c = x.data().cols();
  require(gamma.data().rows() == 1 && gamma.data().cols() == c, "batch_norm: gamma must be 1 x C");
  require(beta.data().rows() == 1 && beta.data().cols() == c, "batch_norm: beta must be 1 x C");
  require(running_mean.numel() == c && running_var.numel() == c,
          "batch_norm: running buffers must have C entries");
  require(n >= 1, "batch_norm: empty input");

  // normalization statistics: batch in train mode, running buffers otherwise
  auto mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
  auto inv_std = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
  const T* px = x.data().data();
  if (train) {
    parallel_for(c, [&](int64_t c0, int64_t c1) {
      for (int64_t k = c0; k < c1; ++k) {
        double acc = 0;
        for (int64_t r = 0; r < n; ++r) acc += double(px[r * c + k]);
        const double mu = acc / double(n);
        double var = 0;
        for (int64_t r = 0; r < n; ++r) {
          const double d = double(px[r * c + k]) - mu;
          var += d * d;
        }
        var /= double(n);
        (*mean)[k] = static_cast<T>(mu);
        (*inv_std)[k] = static_cast<T>(1.0 / std::sqrt(var + double(eps)));
        running_mean[k] = static_cast<T>((1.0 - double(momentum)) * double(running_mean[k]) +
                                         double(momentum) * mu);
        running_var[k] = static_cast<T>((1.0 - double(momentum)) * double(running_var[k]) +
                                        double(momentum) * var);
      }
    });
  } else {
    for (int64_t k = 0; k < c; ++k) {
      (*mean)[k] = running_mean[k];
      (*inv_std)[k] = static_cast<T>(1.0 / std::sqrt(double(running_var[k]) + double(eps)));
    }
  }

  Tensor<T> out({n, c});
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  T* po = out.data();
  {
    const T* pm = mean->data();
    const T* pi = inv_std->data();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
      for (int64_t r = lo; r < hi; ++r)
        for (int64_t k = 0; k < c; ++k)
          po[r * c + k] = pg[k] * (px[r * c + k] - pm[k]) * pi[k] + pb[k];
    });
  }

  return make_node<T>(
      std::move(out), {x, gamma, beta},
      [mean, inv_std, train, n, c](Node<T>& nd) {
        auto& px2 = *nd.parents[0];
        auto& pg2 = *nd.parents[1];
        auto& pb2 = *nd.parents[2];
        const T* g = nd.grad.data();
        const T* d = px2.data.data();
        const T* gam = pg2.data.data();
        const T* pm = mean->data();
        const T* pi = inv_std->data();

        // per-channel reductions: sum g and sum g * xhat
        std::vector<double> sum_g(static_cast<size_t>(c), 0.0);
        std::vector<double> sum_gx(static_cast<size_t>(c), 0.0);
        parallel_for(c, [&](int64_t c0, int64_t c1) {
          for (int64_t k = c0; k < c1; ++k) {
            double sg = 0, sgx = 0;
            for (int64_t r = 0; r < n; ++r) {
              const double gv = double(g[r * c + k]);
              const double xh = (double(d[r * c + k]) - double(pm[k])) * double(pi[k]);
              sg += gv;
              sgx += gv * xh;
            }
            sum_g[static_cast<size_t>(k)] = sg;
            sum_gx[static_cast<size_t>(k)] = sgx;
          }
        });

        if (pg2.requires_grad) {
          T* gg = ensure_grad(pg2).data();
          for (int64_t k = 0; k < c; ++k) gg[k] += static_cast<T>(sum_gx[size_t(k)]);
        }
        if (pb2.requires_grad) {
          T* gb = ensure_grad(pb2).data();
          for (int64_t k = 0; k < c; ++k) gb[k] += static_cast<T>(sum_g[size_t(k)]);
        }
        if (px2.requires_grad) {
          T* gx = ensure_grad(px2).data();
          if (train) {
            parallel_for(n, [&](int64_t lo, int64_t hi) {
              for (int64_t r = lo; r < hi; ++r)
                for (int64_t k = 0; k < c; ++k) {
                  const double xh = (double(d[r * c + k]) - double(pm[k])) * double(pi[k]);
                  const double term = double(g[r * c + k]) - sum_g[size_t(k)] / double(n) -
                                      xh * sum_gx[size_t(k)] / double(n);
                  gx[r * c + k] += static_cast<T>(double(gam[k]) * double(pi[k]) * term);
                }
            });
          } else {
            parallel_for(n, [&](int64_t lo, int64_t hi) {
              for (int64_t r = lo; r < hi; ++r)
                for (int64_t k = 0; k < c; ++k)
                  gx[r * c + k] += static_cast<T>(double(g[r * c + k]) * double(gam[k]) *
                                                  double(pi[k]));
            });
          }
        }
      },
      "batch_norm");
}

// ---- explicit instantiations -------------------------------------------------

#define SUNET_INSTANTIATE(T)                                                                      \
  template void Value<T>::backward();                                                            \
  template Value<T> matmul(const Value<T>&, const Value<T>&);                                    \
  template Value<T> matmul_nt(const Value<T>&, const Value<T>&);                                 \
  template Value<T> gather_rows(const Value<T>&, const IndexMatrix&);                            \
  template Value<T> scatter_add_rows(const Value<T>&, const IndexMatrix&, int64_t);              \
  template Value<T> weighted_gather_rows(const Value<T>&, const IndexMatrix&, const Tensor<T>&); \
  template Value<T> add(const Value<T>&, const Value<T>&);                                       \
  template Value<T> sub(const Value<T>&, const Value<T>&);                                       \
  template Value<T> mul(const Value<T>&, const Value<T>&);                                       \
  template Value<T> add_bias_row(const Value<T>&, const Value<T>&);                              \
  template Value<T> relu(const Value<T>&);                                                       \
  template Value<T> concat_cols(const Value<T>&, const Value<T>&);                               \
  template Value<T> slice_cols(const Value<T>&, int64_t, int64_t);                               \
  template Value<T> reshape(const Value<T>&, std::vector<int64_t>);                              \
  template Value<T> reduce_sum(const Value<T>&);                                                 \
  template Value<T> reduce_mean(const Value<T>&);                                                \
  template Value<T> slot_mean(const Value<T>&, int);                                             \
  template Value<T> slot_max(const Value<T>&, int, IndexMatrix*);                                \
  template Value<T> unpool_scatter(const Value<T>&, const IndexMatrix&, const IndexMatrix&,      \
                                   int64_t);                                                     \
  template Value<T> cross_entropy(const Value<T>&, const std::vector<int32_t>&);                 \
  template Value<T> l1_loss(const Value<T>&, const Tensor<T>&);                                  \
  template Value<T> batch_norm(const Value<T>&, const Value<T>&, const Value<T>&, Tensor<T>&,    \
                               Tensor<T>&, bool, T, T);

SUNET_INSTANTIATE(float)
SUNET_INSTANTIATE(double)

#undef SUNET_INSTANTIATE

}  // namespace sunet
