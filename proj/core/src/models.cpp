#include "sunet/models.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "sunet/errors.hpp"
#include "sunet/parallel.hpp"

namespace sunet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

std::string step_name(const char* stem, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%d", stem, i);
  return buf;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Unet: return "unet";
    case Variant::Unet18Dine: return "unet18_dine";
    case Variant::Unet18Repa: return "unet18_repa";
    case Variant::NaiveDine: return "naive_dine";
    case Variant::SegnetBasic: return "segnet_basic";
    case Variant::SegnetInter: return "segnet_inter";
  }
  throw UsageError("variant_name: unknown variant");
}

Variant parse_variant(const std::string& name) {
  if (name == "unet") return Variant::Unet;
  if (name == "unet18_dine") return Variant::Unet18Dine;
  if (name == "unet18_repa") return Variant::Unet18Repa;
  if (name == "naive_dine") return Variant::NaiveDine;
  if (name == "segnet_basic") return Variant::SegnetBasic;
  if (name == "segnet_inter") return Variant::SegnetInter;
  throw UsageError("unknown model variant: " + name);
}

std::string pool_mode_name(PoolMode m) { return m == PoolMode::Mean ? "mean" : "max"; }

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "mean") return PoolMode::Mean;
  if (name == "max") return PoolMode::Max;
  throw UsageError("unknown pooling mode: " + name);
}

int default_steps(Variant v) {
  switch (v) {
    case Variant::Unet:
    case Variant::SegnetBasic:
    case Variant::SegnetInter: return 5;
    case Variant::Unet18Dine:
    case Variant::Unet18Repa: return 4;
    case Variant::NaiveDine: return 1;
  }
  throw UsageError("default_steps: unknown variant");
}

std::shared_ptr<Hierarchy> Hierarchy::build(int top_level, bool with_repa) {
  require(top_level >= 0, "hierarchy: negative top level");
  auto h = std::make_shared<Hierarchy>();
  h->top_level = top_level;
  h->meshes.reserve(size_t(top_level) + 1);
  for (int k = 0; k <= top_level; ++k) {
    h->meshes.push_back(k == 0 ? icosahedron() : subdivide(h->meshes.back()));
    h->tables.push_back(build_dine_table(h->meshes.back()));
    h->parents.push_back(k == 0 ? IndexMatrix() : edge_parent_table(h->meshes.back()));
    h->samplers.emplace_back();
    if (with_repa) {
      const double spacing = mean_edge_arc(h->meshes.back());
      h->samplers.back() =
          std::make_shared<const RePaSampler>(build_repa_sampler(h->meshes.back(), 3, 3, spacing));
    }
  }
  return h;
}

const RePaSampler& Hierarchy::sampler(int level) const {
  require(level >= 0 && level <= top_level && samplers[size_t(level)] != nullptr,
          "hierarchy: no tangent-grid sampler at this level");
  return *samplers[size_t(level)];
}

IndexMatrix tile_index(const IndexMatrix& idx, int copies, uint32_t stride) {
  require(copies >= 1, "tile_index: need at least one copy");
  IndexMatrix out(idx.rows * copies, idx.cols);
  const int64_t block = idx.rows * idx.cols;
  for (int b = 0; b < copies; ++b) {
    const uint32_t off = uint32_t(b) * stride;
    for (int64_t i = 0; i < block; ++i) out.data[size_t(b * block + i)] = idx.data[size_t(i)] + off;
  }
  return out;
}

// ---- construction -----------------------------------------------------------

namespace {

template <typename T>
Layer<T> make_conv(const std::string& name, int level, int in_ch, int out_ch, int win,
                   LayerKind kind, Rng& rng) {
  Layer<T> l;
  l.kind = kind;
  l.name = name;
  l.level = level;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.win = win;
  l.params.emplace_back(name + ".weight",
                        xavier_uniform<T>(int64_t(win) * in_ch, out_ch, rng));
  l.params.emplace_back(name + ".bias", Tensor<T>({1, out_ch}));
  return l;
}

template <typename T>
Layer<T> make_bn(const std::string& name, int level, int channels) {
  Layer<T> l;
  l.kind = LayerKind::BatchNorm;
  l.name = name;
  l.level = level;
  l.out_ch = channels;
  l.params.emplace_back(name + ".gamma", Tensor<T>::full({1, channels}, T(1)));
  l.params.emplace_back(name + ".beta", Tensor<T>({1, channels}));
  l.running_mean = Tensor<T>({channels});
  l.running_var = Tensor<T>::full({channels}, T(1));
  return l;
}

template <typename T>
void push_conv_block(std::vector<Layer<T>>& seq, const std::string& conv_name,
                     const std::string& bn_name, int level, int in_ch, int out_ch, int win,
                     LayerKind kind, Rng& rng) {
  seq.push_back(make_conv<T>(conv_name, level, in_ch, out_ch, win, kind, rng));
  seq.push_back(make_bn<T>(bn_name, level, out_ch));
  Layer<T> r;
  r.kind = LayerKind::Relu;
  r.level = level;
  seq.push_back(r);
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelSpec& spec_in, std::shared_ptr<const Hierarchy> hier, Rng& rng) {
  ModelSpec spec = spec_in;
  require(hier != nullptr, "build_model: missing mesh hierarchy");
  require(spec.base_channels >= 1 && spec.in_channels >= 1 && spec.out_channels >= 1,
          "build_model: channel counts must be positive");
  require(spec.top_level >= 0 && spec.top_level <= hier->top_level,
          "build_model: hierarchy does not reach the requested level");
  if (spec.steps == 0) spec.steps = default_steps(spec.variant);
  if (spec.variant == Variant::SegnetBasic) spec.pooling = PoolMode::Max;

  const int steps = spec.steps;
  const int top = spec.top_level;
  require(spec.variant == Variant::NaiveDine || top - (steps - 1) >= 0,
          "build_model: level span too shallow for the variant");

  const bool repa = spec.variant == Variant::Unet18Repa;
  const bool skips = spec.variant == Variant::Unet || spec.variant == Variant::Unet18Dine ||
                     spec.variant == Variant::Unet18Repa;
  const LayerKind conv_kind = repa ? LayerKind::RePaConv : LayerKind::DineConv;
  const int win = repa ? 9 : 7;
  if (repa)
    for (int k = top; k > top - steps; --k) (void)hier->sampler(k);

  Model<T> model;
  model.spec = spec;
  model.hier = std::move(hier);
  auto& seq = model.layers;

  const auto channels = [&](int step) { return spec.base_channels << (step - 1); };

  if (spec.variant == Variant::NaiveDine) {
    int prev = spec.in_channels;
    for (int b = 1; b <= 16; ++b) {
      const std::string stem = step_name("block", b);
      push_conv_block(seq, stem + ".conv", stem + ".bn", top, prev, spec.base_channels, win,
                      conv_kind, rng);
      prev = spec.base_channels;
    }
  } else {
    // encoder
    int prev = spec.in_channels;
    for (int i = 1; i <= steps; ++i) {
      const int lvl = top - (i - 1);
      const int ch = channels(i);
      const std::string stem = step_name("enc", i);
      push_conv_block(seq, stem + ".conv1", stem + ".bn1", lvl, prev, ch, win, conv_kind, rng);
      push_conv_block(seq, stem + ".conv2", stem + ".bn2", lvl, ch, ch, win, conv_kind, rng);
      if (i < steps) {
        if (skips) {
          Layer<T> s;
          s.kind = LayerKind::SaveSkip;
          s.level = lvl;
          s.slot = model.skip_count++;
          seq.push_back(s);
        }
        Layer<T> p;
        p.kind = LayerKind::Pool;
        p.level = lvl;
        p.pool_mode = spec.pooling;
        if (spec.variant == Variant::SegnetBasic) p.slot = model.arg_count++;
        seq.push_back(p);
      }
      prev = ch;
    }

    // decoder
    for (int i = steps - 1; i >= 1; --i) {
      const int lvl = top - (i - 1);
      const int ch = channels(i);
      const std::string stem = step_name("dec", i);
      if (skips) {
        Layer<T> up;
        up.kind = LayerKind::TransposedConv;
        up.name = stem + ".up";
        up.level = lvl;
        up.in_ch = 2 * ch;
        up.out_ch = ch;
        up.win = 7;
        up.params.emplace_back(stem + ".up.weight",
                               xavier_uniform<T>(int64_t(7) * ch, 2 * ch, rng));
        seq.push_back(up);

        Layer<T> cat;
        cat.kind = LayerKind::ConcatSkip;
        cat.level = lvl;
        cat.slot = i - 1;
        seq.push_back(cat);

        push_conv_block(seq, stem + ".conv1", stem + ".bn1", lvl, 2 * ch, ch, win, conv_kind,
                        rng);
        push_conv_block(seq, stem + ".conv2", stem + ".bn2", lvl, ch, ch, win, conv_kind, rng);
      } else {
        // channel reduction happens on the coarse mesh so that max-unpool
        // indices (recorded before the encoder doubled the channels) line up
        push_conv_block(seq, stem + ".conv1", stem + ".bn1", lvl - 1, 2 * ch, ch, win, conv_kind,
                        rng);
        Layer<T> up;
        up.kind = spec.variant == Variant::SegnetBasic ? LayerKind::MaxUnpool
                                                       : LayerKind::InterpUpsample;
        up.level = lvl;
        if (spec.variant == Variant::SegnetBasic) up.slot = i - 1;
        seq.push_back(up);
        push_conv_block(seq, stem + ".conv2", stem + ".bn2", lvl, ch, ch, win, conv_kind, rng);
      }
    }
  }

  Layer<T> head;
  head.kind = LayerKind::VertexLinear;
  head.name = "head";
  head.level = top;
  head.in_ch = spec.base_channels;
  head.out_ch = spec.out_channels;
  head.win = 1;
  head.params.emplace_back("head.weight",
                           xavier_uniform<T>(spec.base_channels, spec.out_channels, rng));
  head.params.emplace_back("head.bias", Tensor<T>({1, spec.out_channels}));
  seq.push_back(head);
  return model;
}

// ---- table cache ------------------------------------------------------------

namespace {
enum TableKind { kFull = 0, kPool = 1, kInterp = 2, kRePa = 3 };
}

template <typename T>
const IndexMatrix& Model<T>::full_slots(int level, int batch) {
  auto key = std::make_tuple(kFull, level, batch);
  auto it = index_cache_.find(key);
  if (it == index_cache_.end()) {
    const auto& base = hier->tables[size_t(level)].slots;
    it = index_cache_.emplace(key, tile_index(base, batch, uint32_t(vertex_count(level)))).first;
  }
  return it->second;
}

template <typename T>
const IndexMatrix& Model<T>::pool_slots(int level, int batch) {
  auto key = std::make_tuple(kPool, level, batch);
  auto it = index_cache_.find(key);
  if (it == index_cache_.end()) {
    IndexMatrix base = head_rows(hier->tables[size_t(level)].slots, vertex_count(level - 1));
    it = index_cache_.emplace(key, tile_index(base, batch, uint32_t(vertex_count(level)))).first;
  }
  return it->second;
}

template <typename T>
const IndexMatrix& Model<T>::interp_slots(int level, int batch) {
  auto key = std::make_tuple(kInterp, level, batch);
  auto it = index_cache_.find(key);
  if (it == index_cache_.end()) {
    IndexMatrix base =
        interp_index_table(hier->parents[size_t(level)], vertex_count(level - 1));
    it = index_cache_
             .emplace(key, tile_index(base, batch, uint32_t(vertex_count(level - 1))))
             .first;
  }
  return it->second;
}

template <typename T>
const IndexMatrix& Model<T>::repa_anchors(int level, int batch) {
  auto key = std::make_tuple(kRePa, level, batch);
  auto it = index_cache_.find(key);
  if (it == index_cache_.end()) {
    const auto& base = hier->sampler(level).anchors;
    it = index_cache_.emplace(key, tile_index(base, batch, uint32_t(vertex_count(level)))).first;
  }
  return it->second;
}

template <typename T>
const Tensor<T>& Model<T>::repa_weights(int level, int batch) {
  auto key = std::make_pair(level, batch);
  auto it = repa_weight_cache_.find(key);
  if (it == repa_weight_cache_.end()) {
    Tensor<T> base = hier->sampler(level).weights.template cast<T>();
    Tensor<T> tiled({base.rows() * batch, base.cols()});
    for (int b = 0; b < batch; ++b)
      std::copy(base.data(), base.data() + base.numel(), tiled.data() + b * base.numel());
    it = repa_weight_cache_.emplace(key, std::move(tiled)).first;
  }
  return it->second;
}

// ---- execution --------------------------------------------------------------

template <typename T>
Value<T> Model<T>::forward(const Value<T>& x, int batch, bool train) {
  require(batch >= 1, "forward: batch must be positive");
  require(x.defined() && x.data().rank() == 2 &&
              x.data().rows() == batch * vertex_count(spec.top_level) &&
              x.data().cols() == spec.in_channels,
          "forward: input must be (batch * N) x C_in at the model's level");

  Value<T> cur = x;
  std::vector<Value<T>> skips(static_cast<size_t>(skip_count));
  std::vector<IndexMatrix> args(static_cast<size_t>(arg_count));

  for (auto& l : layers) {
    switch (l.kind) {
      case LayerKind::DineConv:
        cur = dine_conv_rows(cur, l.params[0].value, l.params[1].value,
                             full_slots(l.level, batch));
        break;
      case LayerKind::RePaConv:
        cur = repa_conv_rows(cur, l.params[0].value, l.params[1].value,
                             repa_anchors(l.level, batch), repa_weights(l.level, batch),
                             int64_t(l.win));
        break;
      case LayerKind::BatchNorm:
        cur = batch_norm(cur, l.params[0].value, l.params[1].value, l.running_mean,
                         l.running_var, train);
        break;
      case LayerKind::Relu:
        cur = relu(cur);
        break;
      case LayerKind::SaveSkip:
        skips[size_t(l.slot)] = cur;
        break;
      case LayerKind::ConcatSkip:
        cur = concat_cols(skips[size_t(l.slot)], cur);
        break;
      case LayerKind::Pool: {
        IndexMatrix* arg = l.slot >= 0 ? &args[size_t(l.slot)] : nullptr;
        cur = pool_rows(cur, pool_slots(l.level, batch), l.pool_mode, arg);
        break;
      }
      case LayerKind::TransposedConv:
        cur = transposed_conv_rows(cur, l.params[0].value, pool_slots(l.level, batch),
                                   batch * vertex_count(l.level));
        break;
      case LayerKind::MaxUnpool:
        cur = max_unpool_rows(cur, pool_slots(l.level, batch), args[size_t(l.slot)],
                              batch * vertex_count(l.level));
        break;
      case LayerKind::InterpUpsample:
        cur = interp_apply(cur, interp_slots(l.level, batch));
        break;
      case LayerKind::VertexLinear:
        cur = vertexwise_linear(cur, l.params[0].value, l.params[1].value);
        break;
    }
  }
  return cur;
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers)
    for (auto& p : l.params) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& l : layers) {
    for (auto& p : l.params) out.emplace_back(p.name, &p.value.data());
    if (l.kind == LayerKind::BatchNorm) {
      out.emplace_back(l.name + ".running_mean", &l.running_mean);
      out.emplace_back(l.name + ".running_var", &l.running_var);
    }
  }
  return out;
}

template <typename T>
int64_t Model<T>::param_count(std::vector<std::pair<std::string, int64_t>>* per_layer) const {
  int64_t total = 0;
  for (const auto& l : layers) {
    int64_t n = 0;
    switch (l.kind) {
      case LayerKind::DineConv:
      case LayerKind::RePaConv:
        n = int64_t(l.win) * l.in_ch * l.out_ch + l.out_ch;
        break;
      case LayerKind::VertexLinear:
        n = int64_t(l.in_ch) * l.out_ch + l.out_ch;
        break;
      case LayerKind::TransposedConv:
        n = int64_t(7) * l.out_ch * l.in_ch;
        break;
      case LayerKind::BatchNorm:
        n = 2 * int64_t(l.out_ch);
        break;
      default:
        continue;
    }
    total += n;
    if (per_layer) per_layer->emplace_back(l.name, n);
  }
  return total;
}

// ---- linear baseline --------------------------------------------------------

Tensor<double> linear_baseline_fit(const std::vector<Tensor<double>>& inputs,
                                   const std::vector<Tensor<double>>& targets) {
  require(inputs.size() >= 3, "linear_baseline_fit: need at least 3 training subjects");
  require(inputs.size() == targets.size(), "linear_baseline_fit: inputs/targets count mismatch");
  const int64_t n = inputs[0].rows();
  for (size_t s = 0; s < inputs.size(); ++s) {
    require(inputs[s].rank() == 2 && inputs[s].rows() == n && inputs[s].cols() == 2,
            "linear_baseline_fit: each input must be N x 2");
    require(targets[s].rows() == n && targets[s].cols() == 1,
            "linear_baseline_fit: each target must be N x 1");
  }

  Tensor<double> coeffs({n, 3});
  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t v = begin; v < end; ++v) {
      Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
      Eigen::Vector3d b = Eigen::Vector3d::Zero();
      for (size_t s = 0; s < inputs.size(); ++s) {
        const Eigen::Vector3d phi(inputs[s].at(v, 0), inputs[s].at(v, 1), 1.0);
        a += phi * phi.transpose();
        b += phi * targets[s].at(v, 0);
      }
      Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
      if (!lu.isInvertible()) {
        a.diagonal().array() += 1e-6;
        lu.compute(a);
      }
      const Eigen::Vector3d c = lu.solve(b);
      coeffs.at(v, 0) = c[0];
      coeffs.at(v, 1) = c[1];
      coeffs.at(v, 2) = c[2];
    }
  });
  return coeffs;
}

Tensor<double> linear_baseline_predict(const Tensor<double>& coeffs,
                                       const Tensor<double>& inputs) {
  require(coeffs.rank() == 2 && coeffs.cols() == 3, "linear_baseline_predict: bad coefficients");
  require(inputs.rank() == 2 && inputs.cols() == 2 && inputs.rows() == coeffs.rows(),
          "linear_baseline_predict: inputs must be N x 2");
  Tensor<double> out({inputs.rows(), 1});
  for (int64_t v = 0; v < inputs.rows(); ++v)
    out.at(v, 0) =
        coeffs.at(v, 0) * inputs.at(v, 0) + coeffs.at(v, 1) * inputs.at(v, 1) + coeffs.at(v, 2);
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const ModelSpec&, std::shared_ptr<const Hierarchy>,
                                         Rng&);
template Model<double> build_model<double>(const ModelSpec&, std::shared_ptr<const Hierarchy>,
                                           Rng&);

}  // namespace sunet
