#include "sunet/models.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "doctest.h"
#include "sunet/errors.hpp"
#include "sunet/rng.hpp"

using namespace sunet;

namespace {

std::shared_ptr<const Hierarchy> hier_at(int top, bool with_repa) {
  static std::map<std::pair<int, bool>, std::shared_ptr<const Hierarchy>> cache;
  auto key = std::make_pair(top, with_repa);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, Hierarchy::build(top, with_repa)).first;
  return it->second;
}

// Independent parameter enumeration, written as straight loops over the
// documented channel progression rather than through Layer records.
int64_t conv_p(int64_t win, int64_t in, int64_t out) { return win * in * out + out; }
int64_t bn_p(int64_t c) { return 2 * c; }

int64_t expected_encoder(int in, int c1, int steps, int win) {
  int64_t total = 0, prev = in, ch = c1;
  for (int i = 1; i <= steps; ++i) {
    total += conv_p(win, prev, ch) + bn_p(ch) + conv_p(win, ch, ch) + bn_p(ch);
    prev = ch;
    ch *= 2;
  }
  return total;
}

int64_t expected_unet_decoder(int c1, int steps, int win) {
  int64_t total = 0;
  for (int i = steps - 1; i >= 1; --i) {
    const int64_t ch = int64_t(c1) << (i - 1);
    total += 7 * ch * (2 * ch);  // transposed conv carries no bias
    total += conv_p(win, 2 * ch, ch) + bn_p(ch);
    total += conv_p(win, ch, ch) + bn_p(ch);
  }
  return total;
}

int64_t expected_segnet_decoder(int c1, int steps, int win) {
  int64_t total = 0;
  for (int i = steps - 1; i >= 1; --i) {
    const int64_t ch = int64_t(c1) << (i - 1);
    total += conv_p(win, 2 * ch, ch) + bn_p(ch);
    total += conv_p(win, ch, ch) + bn_p(ch);
  }
  return total;
}

int64_t shape_walk(Model<float>& m) {
  int64_t total = 0;
  for (Parameter<float>* p : m.parameters()) total += p->value.data().numel();
  return total;
}

int count_kind(const Model<float>& m, LayerKind k) {
  int n = 0;
  for (const auto& l : m.layers)
    if (l.kind == k) ++n;
  return n;
}

Model<float> build_variant(Variant v, int top, int c1 = 64, int in = 3, int out = 36) {
  ModelSpec spec;
  spec.variant = v;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.base_channels = c1;
  spec.top_level = top;
  Rng rng(99);
  return build_model<float>(spec, hier_at(top, v == Variant::Unet18Repa), rng);
}

}  // namespace

TEST_CASE("parameter accounting: formula, shape walk and independent enumeration agree") {
  const int64_t head = 64 * 36 + 36;
  const int64_t head32 = 32 * 36 + 36;

  struct Row {
    Variant v;
    int c1;
    int64_t expected;
  };
  const Row rows[] = {
      {Variant::Unet, 64, expected_encoder(3, 64, 5, 7) + expected_unet_decoder(64, 5, 7) + head},
      {Variant::Unet18Dine, 32,
       expected_encoder(3, 32, 4, 7) + expected_unet_decoder(32, 4, 7) + head32},
      {Variant::Unet18Repa, 32,
       expected_encoder(3, 32, 4, 9) + expected_unet_decoder(32, 4, 9) + head32},
      {Variant::NaiveDine, 64,
       conv_p(7, 3, 64) + bn_p(64) + 15 * (conv_p(7, 64, 64) + bn_p(64)) + head},
      {Variant::SegnetBasic, 64,
       expected_encoder(3, 64, 5, 7) + expected_segnet_decoder(64, 5, 7) + head},
      {Variant::SegnetInter, 64,
       expected_encoder(3, 64, 5, 7) + expected_segnet_decoder(64, 5, 7) + head},
  };

  for (const Row& r : rows) {
    CAPTURE(variant_name(r.v));
    Model<float> m = build_variant(r.v, 4, r.c1);
    std::vector<std::pair<std::string, int64_t>> per_layer;
    const int64_t formula = m.param_count(&per_layer);
    CHECK(formula == r.expected);
    CHECK(shape_walk(m) == r.expected);
    int64_t subtotal = 0;
    for (const auto& [name, n] : per_layer) subtotal += n;
    CHECK(subtotal == formula);
  }
}

TEST_CASE("parameter totals: pinned values and published orderings") {
  Model<float> unet = build_variant(Variant::Unet, 4);
  Model<float> u18 = build_variant(Variant::Unet18Dine, 4, 32);
  Model<float> u18r = build_variant(Variant::Unet18Repa, 4, 32);
  Model<float> naive = build_variant(Variant::NaiveDine, 4);
  Model<float> segb = build_variant(Variant::SegnetBasic, 4);
  Model<float> segi = build_variant(Variant::SegnetInter, 4);

  CHECK(unet.param_count() == 26858340);
  CHECK(u18.param_count() == 1669060);
  CHECK(naive.param_count() == 436836);
  CHECK(segb.param_count() == 21984100);

  // the 18-layer net is far smaller than the full net (1.7 vs 26.9 MB scale)
  CHECK(u18.param_count() < unet.param_count());
  // both segnet decoders are parameter-free in their upsampling
  CHECK(segb.param_count() == segi.param_count());
  // the 9-point patch filters cost more than 7-slot ones at equal width
  CHECK(u18r.param_count() > u18.param_count());
}

TEST_CASE("unet18 variants contain exactly 18 convolution-class layers") {
  for (Variant v : {Variant::Unet18Dine, Variant::Unet18Repa}) {
    CAPTURE(variant_name(v));
    Model<float> m = build_variant(v, 4, 8);
    const LayerKind conv_kind =
        v == Variant::Unet18Repa ? LayerKind::RePaConv : LayerKind::DineConv;
    const int convs = count_kind(m, conv_kind);
    const int trans = count_kind(m, LayerKind::TransposedConv);
    const int vertex = count_kind(m, LayerKind::VertexLinear);
    CHECK(convs == 14);
    CHECK(trans == 3);
    CHECK(vertex == 1);
    CHECK(convs + trans + vertex == 18);
    // the other conv kind never appears
    CHECK(count_kind(m, v == Variant::Unet18Repa ? LayerKind::DineConv : LayerKind::RePaConv) ==
          0);
  }
}

TEST_CASE("naive variant is 16 conv blocks plus the vertex-wise head") {
  Model<float> m = build_variant(Variant::NaiveDine, 3, 8);
  CHECK(count_kind(m, LayerKind::DineConv) == 16);
  CHECK(count_kind(m, LayerKind::BatchNorm) == 16);
  CHECK(count_kind(m, LayerKind::Relu) == 16);
  CHECK(count_kind(m, LayerKind::VertexLinear) == 1);
  CHECK(count_kind(m, LayerKind::Pool) == 0);
  CHECK(count_kind(m, LayerKind::TransposedConv) == 0);
  CHECK(count_kind(m, LayerKind::MaxUnpool) == 0);
  CHECK(count_kind(m, LayerKind::InterpUpsample) == 0);
  // every layer stays at the top level
  for (const auto& l : m.layers) CHECK(l.level == 3);
}

TEST_CASE("upsampling flavor follows the variant") {
  Model<float> basic = build_variant(Variant::SegnetBasic, 4, 8);
  Model<float> inter = build_variant(Variant::SegnetInter, 4, 8);
  Model<float> unet = build_variant(Variant::Unet, 4, 8);

  CHECK(count_kind(basic, LayerKind::MaxUnpool) == 4);
  CHECK(count_kind(basic, LayerKind::InterpUpsample) == 0);
  CHECK(count_kind(basic, LayerKind::TransposedConv) == 0);
  CHECK(count_kind(basic, LayerKind::ConcatSkip) == 0);

  CHECK(count_kind(inter, LayerKind::InterpUpsample) == 4);
  CHECK(count_kind(inter, LayerKind::MaxUnpool) == 0);
  CHECK(count_kind(inter, LayerKind::ConcatSkip) == 0);

  CHECK(count_kind(unet, LayerKind::TransposedConv) == 4);
  CHECK(count_kind(unet, LayerKind::ConcatSkip) == 4);
  CHECK(count_kind(unet, LayerKind::SaveSkip) == 4);

  // max pooling is forced for the index-restoring decoder
  for (const auto& l : basic.layers)
    if (l.kind == LayerKind::Pool) CHECK(l.pool_mode == PoolMode::Max);
}

TEST_CASE("forward pass: shape propagation, determinism, stacked batches") {
  const int top = 4;
  const int64_t n = vertex_count(top);
  ModelSpec spec;
  spec.variant = Variant::Unet18Dine;
  spec.base_channels = 8;
  spec.top_level = top;

  Rng rng(7);
  auto hier = hier_at(top, false);
  Model<float> m = build_model<float>(spec, hier, rng);

  Rng data_rng(11);
  Tensor<float> x = Tensor<float>::normal({n, 3}, data_rng);
  auto y = m.forward(Value<float>::leaf(x), 1, false);
  REQUIRE(y.data().rows() == n);
  REQUIRE(y.data().cols() == 36);
  for (int64_t i = 0; i < y.data().numel(); ++i) CHECK(std::isfinite(y.data().data()[i]));

  SUBCASE("same seed rebuilds the same network and output bit for bit") {
    Rng rng2(7);
    Model<float> m2 = build_model<float>(spec, hier, rng2);
    auto y2 = m2.forward(Value<float>::leaf(x), 1, false);
    CHECK(std::memcmp(y.data().data(), y2.data().data(),
                      sizeof(float) * size_t(y.data().numel())) == 0);
  }

  SUBCASE("two identical stacked samples produce identical halves in eval mode") {
    Tensor<float> xx({2 * n, 3});
    std::memcpy(xx.data(), x.data(), sizeof(float) * size_t(x.numel()));
    std::memcpy(xx.data() + x.numel(), x.data(), sizeof(float) * size_t(x.numel()));
    auto yy = m.forward(Value<float>::leaf(xx), 2, false);
    REQUIRE(yy.data().rows() == 2 * n);
    CHECK(std::memcmp(yy.data().data(), yy.data().data() + y.data().numel(),
                      sizeof(float) * size_t(y.data().numel())) == 0);
    // and each half matches the single-sample pass
    CHECK(std::memcmp(yy.data().data(), y.data().data(),
                      sizeof(float) * size_t(y.data().numel())) == 0);
  }
}

TEST_CASE("all-zero parameters broadcast the head bias") {
  for (Variant v : {Variant::Unet18Dine, Variant::SegnetInter, Variant::SegnetBasic}) {
    CAPTURE(variant_name(v));
    ModelSpec spec;
    spec.variant = v;
    spec.base_channels = 4;
    spec.out_channels = 5;
    spec.top_level = 3;
    spec.steps = 3;
    Rng rng(3);
    Model<float> m = build_model<float>(spec, hier_at(3, false), rng);
    for (Parameter<float>* p : m.parameters()) {
      Tensor<float>& t = p->value.data();
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0f;
    }
    // the head bias is the last parameter
    Parameter<float>* bias = m.parameters().back();
    REQUIRE(bias->value.data().numel() == 5);
    for (int64_t k = 0; k < 5; ++k) bias->value.data().data()[k] = float(k) - 1.5f;

    Rng data_rng(4);
    Tensor<float> x = Tensor<float>::normal({vertex_count(3), 3}, data_rng);
    auto y = m.forward(Value<float>::leaf(x), 1, false);
    for (int64_t i = 0; i < y.data().rows(); ++i)
      for (int64_t k = 0; k < 5; ++k) CHECK(y.data().at(i, k) == float(k) - 1.5f);
  }
}

TEST_CASE("state exposes batch-norm running buffers alongside parameters") {
  Model<float> m = build_variant(Variant::Unet18Dine, 3, 4);
  auto st = m.state();
  const size_t n_params = m.parameters().size();
  int n_bn = count_kind(m, LayerKind::BatchNorm);
  CHECK(st.size() == n_params + 2 * size_t(n_bn));
  int running = 0;
  for (auto& [name, t] : st) {
    if (name.find("running_mean") != std::string::npos ||
        name.find("running_var") != std::string::npos)
      ++running;
    CHECK(t != nullptr);
  }
  CHECK(running == 2 * n_bn);
}

TEST_CASE("construction errors") {
  SUBCASE("level span deeper than the mesh hierarchy") {
    ModelSpec spec;
    spec.variant = Variant::Unet;  // 5 steps
    spec.top_level = 3;
    Rng rng(1);
    CHECK_THROWS_AS(build_model<float>(spec, hier_at(3, false), rng), UsageError);
  }
  SUBCASE("patch-sampler variant on a hierarchy built without samplers") {
    ModelSpec spec;
    spec.variant = Variant::Unet18Repa;
    spec.base_channels = 4;
    spec.top_level = 4;
    Rng rng(1);
    CHECK_THROWS_AS(build_model<float>(spec, hier_at(4, false), rng), UsageError);
  }
  SUBCASE("hierarchy shallower than the requested top level") {
    ModelSpec spec;
    spec.variant = Variant::Unet18Dine;
    spec.base_channels = 4;
    spec.top_level = 5;
    Rng rng(1);
    CHECK_THROWS_AS(build_model<float>(spec, hier_at(4, false), rng), UsageError);
  }
}

TEST_CASE("tile_index stacks offset copies") {
  IndexMatrix idx({2, 3});
  uint32_t vals[] = {0, 1, 2, 3, 4, 5};
  std::memcpy(idx.data.data(), vals, sizeof vals);
  IndexMatrix t = tile_index(idx, 3, 100);
  REQUIRE(t.rows == 6);
  REQUIRE(t.cols == 3);
  for (int64_t b = 0; b < 3; ++b)
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t j = 0; j < 3; ++j)
        CHECK(t.at(b * 2 + i, j) == idx.at(i, j) + uint32_t(b) * 100u);
}

TEST_CASE("linear baseline: per-vertex least squares") {
  const int64_t n = 17;

  SUBCASE("recovers an exact affine relationship") {
    Rng rng(21);
    // per-vertex ground-truth coefficients
    Tensor<double> coef({n, 3});
    for (int64_t i = 0; i < n; ++i) {
      coef.at(i, 0) = rng.uniform(-2, 2);
      coef.at(i, 1) = rng.uniform(-2, 2);
      coef.at(i, 2) = rng.uniform(-1, 1);
    }
    std::vector<Tensor<double>> inputs, targets;
    for (int s = 0; s < 6; ++s) {
      Tensor<double> x = Tensor<double>::uniform({n, 2}, rng, -1.0, 1.0);
      Tensor<double> t({n, 1});
      for (int64_t i = 0; i < n; ++i)
        t.at(i, 0) = coef.at(i, 0) * x.at(i, 0) + coef.at(i, 1) * x.at(i, 1) + coef.at(i, 2);
      inputs.push_back(x);
      targets.push_back(t);
    }
    Tensor<double> fit = linear_baseline_fit(inputs, targets);
    REQUIRE(fit.rows() == n);
    REQUIRE(fit.cols() == 3);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < 3; ++j) CHECK(std::abs(fit.at(i, j) - coef.at(i, j)) < 1e-8);

    Tensor<double> pred = linear_baseline_predict(fit, inputs[0]);
    for (int64_t i = 0; i < n; ++i) CHECK(std::abs(pred.at(i, 0) - targets[0].at(i, 0)) < 1e-8);
  }

  SUBCASE("constant target predicts the constant") {
    Rng rng(22);
    std::vector<Tensor<double>> inputs, targets;
    for (int s = 0; s < 4; ++s) {
      inputs.push_back(Tensor<double>::uniform({n, 2}, rng, -1.0, 1.0));
      targets.push_back(Tensor<double>::full({n, 1}, 5.0));
    }
    Tensor<double> fit = linear_baseline_fit(inputs, targets);
    Tensor<double> pred = linear_baseline_predict(fit, inputs[2]);
    for (int64_t i = 0; i < n; ++i) CHECK(std::abs(pred.at(i, 0) - 5.0) < 1e-6);
  }

  SUBCASE("single-vertex fit matches a hand-solved normal system") {
    // five subjects, one vertex: x = (x1, x2), t
    const double x1[] = {0.5, -1.0, 2.0, 0.0, 1.5};
    const double x2[] = {1.0, 0.5, -0.5, 2.0, 0.0};
    const double tv[] = {2.0, -1.0, 3.5, 1.0, 2.5};
    std::vector<Tensor<double>> inputs, targets;
    for (int s = 0; s < 5; ++s) {
      Tensor<double> x({1, 2});
      x.at(0, 0) = x1[s];
      x.at(0, 1) = x2[s];
      Tensor<double> t({1, 1});
      t.at(0, 0) = tv[s];
      inputs.push_back(x);
      targets.push_back(t);
    }
    // normal equations A w = b with basis (x1, x2, 1), solved by elimination
    double A[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double b[3] = {0, 0, 0};
    for (int s = 0; s < 5; ++s) {
      const double phi[3] = {x1[s], x2[s], 1.0};
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) A[r][c] += phi[r] * phi[c];
        b[r] += phi[r] * tv[s];
      }
    }
    // gaussian elimination with partial pivoting on the 3x3 system
    int piv[3] = {0, 1, 2};
    for (int c = 0; c < 3; ++c) {
      int best = c;
      for (int r = c + 1; r < 3; ++r)
        if (std::abs(A[piv[r]][c]) > std::abs(A[piv[best]][c])) best = r;
      std::swap(piv[c], piv[best]);
      for (int r = c + 1; r < 3; ++r) {
        const double f = A[piv[r]][c] / A[piv[c]][c];
        for (int k = c; k < 3; ++k) A[piv[r]][k] -= f * A[piv[c]][k];
        b[piv[r]] -= f * b[piv[c]];
      }
    }
    double w[3];
    for (int c = 2; c >= 0; --c) {
      double acc = b[piv[c]];
      for (int k = c + 1; k < 3; ++k) acc -= A[piv[c]][k] * w[k];
      w[c] = acc / A[piv[c]][c];
    }

    Tensor<double> fit = linear_baseline_fit(inputs, targets);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.at(0, j) - w[j]) < 1e-9);
  }

  SUBCASE("fewer than three subjects is rejected") {
    std::vector<Tensor<double>> inputs(2, Tensor<double>({n, 2}));
    std::vector<Tensor<double>> targets(2, Tensor<double>({n, 1}));
    CHECK_THROWS_AS(linear_baseline_fit(inputs, targets), UsageError);
  }
}

TEST_CASE("variant and pool-mode names round-trip") {
  for (Variant v : {Variant::Unet, Variant::Unet18Dine, Variant::Unet18Repa, Variant::NaiveDine,
                    Variant::SegnetBasic, Variant::SegnetInter})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK(parse_pool_mode(pool_mode_name(PoolMode::Mean)) == PoolMode::Mean);
  CHECK(parse_pool_mode(pool_mode_name(PoolMode::Max)) == PoolMode::Max);
  CHECK_THROWS_AS(parse_variant("resnet"), UsageError);
  CHECK_THROWS_AS(parse_pool_mode("median"), UsageError);
}
