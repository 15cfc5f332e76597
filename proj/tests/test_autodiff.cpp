#include "sunet/autodiff.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "sunet/errors.hpp"
#include "sunet/gradcheck.hpp"
#include "sunet/parallel.hpp"
#include "sunet/rng.hpp"

using namespace sunet;

namespace {

IndexMatrix random_index(Rng& rng, int64_t m, int64_t s, int64_t n) {
  IndexMatrix idx(m, s);
  for (auto& v : idx.data) v = static_cast<uint32_t>(rng.uniform_index(uint64_t(n)));
  return idx;
}

double dot_all(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

// scalar probe: sum(out * fixed random mask), exposing every coordinate's
// gradient with a distinct weight
Value<double> masked_sum(const Value<double>& v, const Tensor<double>& mask) {
  return reduce_sum(mul(v, Value<double>::leaf(mask, false)));
}

}  // namespace

TEST_CASE("matmul against identity and hand gradients") {
  Rng rng(7);
  Tensor<double> xt = Tensor<double>::normal({5, 4}, rng);
  Tensor<double> eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1;

  auto x = Value<double>::leaf(xt, false);
  auto id = Value<double>::leaf(eye, false);
  auto y = matmul(x, id);
  for (int64_t i = 0; i < xt.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(xt[i]));

  // loss = sum(W x): dW[a,b] = sum_j x[b,j]
  Tensor<double> wt = Tensor<double>::normal({3, 5}, rng);
  auto w = Value<double>::leaf(wt, true);
  auto loss = reduce_sum(matmul(w, x));
  loss.backward();
  for (int64_t a = 0; a < 3; ++a)
    for (int64_t b = 0; b < 5; ++b) {
      double expect = 0;
      for (int64_t j = 0; j < 4; ++j) expect += xt.at(b, j);
      CHECK(w.grad().at(a, b) == doctest::Approx(expect).epsilon(1e-12));
    }

  SUBCASE("backward accumulates across calls") {
    Tensor<double> first = w.grad();
    loss.backward();
    for (int64_t i = 0; i < first.numel(); ++i) CHECK(w.grad()[i] == 2.0 * first[i]);
  }

  SUBCASE("shape mismatch is rejected") {
    auto bad = Value<double>::leaf(Tensor<double>({3, 3}), false);
    CHECK_THROWS_AS(matmul(x, bad), UsageError);
  }
}

TEST_CASE("backward requires a scalar") {
  auto x = Value<double>::leaf(Tensor<double>::full({2, 2}, 1.0), true);
  CHECK_THROWS_AS(x.backward(), UsageError);
}

TEST_CASE("relu clamps and gates gradients") {
  Tensor<double> xt({1, 4});
  xt[0] = -2;
  xt[1] = -0.5;
  xt[2] = 0.5;
  xt[3] = 3;
  auto x = Value<double>::leaf(xt, true);
  auto y = relu(x);
  CHECK(y.data()[0] == 0);
  CHECK(y.data()[1] == 0);
  CHECK(y.data()[2] == 0.5);
  CHECK(y.data()[3] == 3);
  reduce_sum(y).backward();
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[1] == 0);
  CHECK(x.grad()[2] == 1);
  CHECK(x.grad()[3] == 1);
}

TEST_CASE("gather then scatter counts incidence of a one-hot field") {
  Rng rng(11);
  const int64_t n = 30, m = 17, s = 7;
  IndexMatrix idx = random_index(rng, m, s, n);
  const uint32_t hot = 12;

  Tensor<double> xt({n, 1});
  xt[hot] = 1.0;

  auto x = Value<double>::leaf(xt, false);
  auto roundtrip = scatter_add_rows(gather_rows(x, idx), idx, n);

  // oracle: direct occurrence count
  int64_t count = 0;
  for (uint32_t v : idx.data) count += (v == hot);

  for (int64_t v = 0; v < n; ++v)
    CHECK(roundtrip.data()[v] == doctest::Approx(v == hot ? double(count) : 0.0));
}

TEST_CASE("gather and scatter are mutual adjoints") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 5 + int64_t(rng.uniform_index(40));
    const int64_t c = 1 + int64_t(rng.uniform_index(6));
    const int64_t m = 3 + int64_t(rng.uniform_index(30));
    const int64_t s = 1 + int64_t(rng.uniform_index(7));
    IndexMatrix idx = random_index(rng, m, s, n);

    Tensor<double> xt = Tensor<double>::normal({n, c}, rng);
    Tensor<double> yt = Tensor<double>::normal({m, s * c}, rng);

    auto gx = gather_rows(Value<double>::leaf(xt), idx);
    auto sy = scatter_add_rows(Value<double>::leaf(yt), idx, n);

    const double lhs = dot_all(gx.data(), yt);
    const double rhs = dot_all(xt, sy.data());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("index validation") {
  Tensor<double> xt = Tensor<double>::full({4, 2}, 1.0);
  IndexMatrix idx(2, 3);
  idx.at(1, 2) = 9;  // out of range
  CHECK_THROWS_AS(gather_rows(Value<double>::leaf(xt), idx), DataFormatError);
  CHECK_THROWS_AS(scatter_add_rows(Value<double>::leaf(Tensor<double>({2, 6})), idx, 4),
                  DataFormatError);
}

TEST_CASE("cross entropy of uniform logits is log K") {
  const int64_t n = 10, k = 36;
  Tensor<double> logits = Tensor<double>::full({n, k}, 0.25);
  std::vector<int32_t> labels(n, 5);
  auto loss = cross_entropy(Value<double>::leaf(logits), labels);
  CHECK(loss.data()[0] == doctest::Approx(std::log(36.0)).epsilon(1e-12));

  labels[3] = 36;
  CHECK_THROWS_AS(cross_entropy(Value<double>::leaf(logits), labels), DataFormatError);
}

TEST_CASE("l1 loss of equal arrays is zero") {
  Rng rng(3);
  Tensor<double> t = Tensor<double>::normal({6, 2}, rng);
  CHECK(l1_loss(Value<double>::leaf(t), t).data()[0] == 0.0);

  // independent scalar-loop recomputation on a random case
  Tensor<double> p = Tensor<double>::normal({6, 2}, rng);
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += std::abs(p[i] - t[i]);
  acc /= double(t.numel());
  CHECK(l1_loss(Value<double>::leaf(p), t).data()[0] == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("slot reductions against brute force") {
  Rng rng(17);
  const int64_t m = 9, s = 7, c = 3;
  Tensor<double> rows = Tensor<double>::normal({m, s * c}, rng);
  auto v = Value<double>::leaf(rows, false);

  auto mean = slot_mean(v, int(s));
  IndexMatrix arg;
  auto mx = slot_max(v, int(s), &arg);

  for (int64_t i = 0; i < m; ++i)
    for (int64_t k = 0; k < c; ++k) {
      double acc = 0, best = -1e30;
      int64_t bj = -1;
      for (int64_t j = 0; j < s; ++j) {
        const double x = rows.at(i, j * c + k);
        acc += x;
        if (x > best) {
          best = x;
          bj = j;
        }
      }
      CHECK(mean.data().at(i, k) == doctest::Approx(acc / double(s)).epsilon(1e-12));
      CHECK(mx.data().at(i, k) == best);
      CHECK(arg.at(i, k) == uint32_t(bj));
    }
}

TEST_CASE("unpool scatter places values at stored slots") {
  // two coarse vertices, two channels, hand-checked
  Tensor<double> yt({2, 2});
  yt.at(0, 0) = 5;
  yt.at(0, 1) = 6;
  yt.at(1, 0) = 7;
  yt.at(1, 1) = 8;
  IndexMatrix slots(2, 3);
  slots.at(0, 0) = 0;
  slots.at(0, 1) = 2;
  slots.at(0, 2) = 4;
  slots.at(1, 0) = 1;
  slots.at(1, 1) = 2;
  slots.at(1, 2) = 5;
  IndexMatrix arg(2, 2);
  arg.at(0, 0) = 1;  // -> fine vertex 2
  arg.at(0, 1) = 2;  // -> fine vertex 4
  arg.at(1, 0) = 1;  // -> fine vertex 2 (collision with coarse 0 / channel 0)
  arg.at(1, 1) = 0;  // -> fine vertex 1

  auto out = unpool_scatter(Value<double>::leaf(yt), slots, arg, 6);
  CHECK(out.data().at(2, 0) == 5 + 7);  // summed collision
  CHECK(out.data().at(4, 1) == 6);
  CHECK(out.data().at(1, 1) == 8);
  double total = 0;
  for (int64_t i = 0; i < out.data().numel(); ++i) total += out.data()[i];
  CHECK(total == 5 + 6 + 7 + 8);
}

TEST_CASE("batch norm normalizes and tracks running statistics") {
  Rng rng(29);
  const int64_t n = 200, c = 4;
  Tensor<double> xt = Tensor<double>::normal({n, c}, rng, 3.0, 2.0);
  Tensor<double> gamma = Tensor<double>::full({1, c}, 1.0);
  Tensor<double> beta({1, c});
  Tensor<double> rm({c});
  Tensor<double> rv = Tensor<double>::full({c}, 1.0);

  auto x = Value<double>::leaf(xt, false);
  auto g = Value<double>::leaf(gamma, false);
  auto b = Value<double>::leaf(beta, false);

  auto y = batch_norm(x, g, b, rm, rv, true);
  for (int64_t k = 0; k < c; ++k) {
    double mean = 0, var = 0;
    for (int64_t r = 0; r < n; ++r) mean += y.data().at(r, k);
    mean /= double(n);
    for (int64_t r = 0; r < n; ++r) {
      const double d = y.data().at(r, k) - mean;
      var += d * d;
    }
    var /= double(n);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }

  // repeated identical batches: running stats converge geometrically
  for (int step = 0; step < 80; ++step) (void)batch_norm(x, g, b, rm, rv, true);
  for (int64_t k = 0; k < c; ++k) {
    double mean = 0, var = 0;
    for (int64_t r = 0; r < n; ++r) mean += xt.at(r, k);
    mean /= double(n);
    for (int64_t r = 0; r < n; ++r) {
      const double d = xt.at(r, k) - mean;
      var += d * d;
    }
    var /= double(n);
    CHECK(rm[k] == doctest::Approx(mean).epsilon(1e-3));
    CHECK(rv[k] == doctest::Approx(var).epsilon(1e-3));
  }

  // eval mode with converged stats reproduces the normalized field
  auto ye = batch_norm(x, g, b, rm, rv, false);
  for (int64_t i = 0; i < 20; ++i) CHECK(ye.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-3));
}

TEST_CASE("forward and backward are thread-count invariant") {
  Rng rng(31);
  const int64_t n = 50, c = 6, m = 40, s = 7;
  IndexMatrix idx = random_index(rng, m, s, n);
  Tensor<double> xt = Tensor<double>::normal({n, c}, rng);
  Tensor<double> mask = Tensor<double>::normal({n, c}, rng);
  Tensor<double> gt = Tensor<double>::uniform({1, c}, rng, 0.5, 1.5);
  Tensor<double> bt = Tensor<double>::normal({1, c}, rng);
  std::vector<int32_t> labels(static_cast<size_t>(n));
  for (auto& l : labels) l = int32_t(rng.uniform_index(uint64_t(c)));

  // route through the reductions with nontrivial accumulation order:
  // scatter, batch norm statistics, cross entropy
  auto run = [&](int threads) {
    set_thread_count(threads);
    auto x = Value<double>::leaf(xt, true);
    auto g = Value<double>::leaf(gt, true);
    auto b = Value<double>::leaf(bt, true);
    Tensor<double> rm({c});
    Tensor<double> rv = Tensor<double>::full({c}, 1.0);
    auto out = scatter_add_rows(gather_rows(x, idx), idx, n);
    auto bn = batch_norm(out, g, b, rm, rv, true);
    auto loss = add(cross_entropy(bn, labels), masked_sum(bn, mask));
    loss.backward();
    set_thread_count(1);
    return std::tuple<Tensor<double>, Tensor<double>, Tensor<double>, Tensor<double>>(
        bn.data(), x.grad(), g.grad(), rm);
  };

  auto [o1, xg1, gg1, rm1] = run(1);
  auto [o2, xg2, gg2, rm2] = run(6);
  for (int64_t i = 0; i < o1.numel(); ++i) CHECK(o1[i] == o2[i]);
  for (int64_t i = 0; i < xg1.numel(); ++i) CHECK(xg1[i] == xg2[i]);
  for (int64_t i = 0; i < gg1.numel(); ++i) CHECK(gg1[i] == gg2[i]);
  for (int64_t i = 0; i < rm1.numel(); ++i) CHECK(rm1[i] == rm2[i]);
}

TEST_CASE("gradcheck validates every primitive") {
  Rng rng(41);
  const int64_t n = 12, c = 3, m = 9, s = 5;
  IndexMatrix idx = random_index(rng, m, s, n);

  Tensor<double> x = Tensor<double>::normal({n, c}, rng);
  Tensor<double> w = Tensor<double>::normal({c, 4}, rng);
  Tensor<double> mask_nc = Tensor<double>::normal({n, c}, rng);
  Tensor<double> mask_n4 = Tensor<double>::normal({n, 4}, rng);
  Tensor<double> mask_msc = Tensor<double>::normal({m, s * c}, rng);
  Tensor<double> mask_mc = Tensor<double>::normal({m, c}, rng);

  SUBCASE("matmul") {
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(matmul(in[0], in[1]), mask_n4);
        },
        {x, w});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("matmul_nt") {
    Tensor<double> bt = Tensor<double>::normal({4, c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(matmul_nt(in[0], in[1]), mask_n4);
        },
        {x, bt});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("gather_rows") {
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(gather_rows(in[0], idx), mask_msc);
        },
        {x});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("scatter_add_rows") {
    Tensor<double> rows = Tensor<double>::normal({m, s * c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(scatter_add_rows(in[0], idx, n), mask_nc);
        },
        {rows});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("weighted_gather_rows") {
    Tensor<double> wg = Tensor<double>::uniform({m, s}, rng, 0.05, 1.0);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(weighted_gather_rows(in[0], idx, wg), mask_mc);
        },
        {x});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("elementwise and bias") {
    Tensor<double> y = Tensor<double>::normal({n, c}, rng);
    Tensor<double> bias = Tensor<double>::normal({1, c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          auto sum = add(in[0], in[1]);
          auto diff = sub(in[0], in[1]);
          auto prod = mul(sum, diff);
          return masked_sum(add_bias_row(prod, in[2]), mask_nc);
        },
        {x, y, bias});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("relu") {
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) { return masked_sum(relu(in[0]), mask_nc); }, {x});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("concat and slice") {
    Tensor<double> y = Tensor<double>::normal({n, 2}, rng);
    Tensor<double> mask_cat = Tensor<double>::normal({n, c + 2}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          auto cat = concat_cols(in[0], in[1]);
          auto back = slice_cols(cat, 1, c + 2);
          return masked_sum(concat_cols(slice_cols(cat, 0, 1), back), mask_cat);
        },
        {x, y});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("reshape and reductions") {
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          auto r = reshape(in[0], {c, n});
          return add(reduce_mean(r), reduce_sum(mul(r, r)));
        },
        {x});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("slot reductions") {
    Tensor<double> rows = Tensor<double>::normal({m, s * c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return add(masked_sum(slot_mean(in[0], int(s)), mask_mc),
                     masked_sum(slot_max(in[0], int(s)), mask_mc));
        },
        {rows});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("unpool_scatter") {
    IndexMatrix slots = random_index(rng, m, 7, n);
    IndexMatrix arg = random_index(rng, m, c, 7);
    Tensor<double> y = Tensor<double>::normal({m, c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          return masked_sum(unpool_scatter(in[0], slots, arg, n), mask_nc);
        },
        {y});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("cross_entropy") {
    Tensor<double> logits = Tensor<double>::normal({n, 5}, rng);
    std::vector<int32_t> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = int32_t(rng.uniform_index(5));
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) { return cross_entropy(in[0], labels); }, {logits});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("l1_loss") {
    Tensor<double> target = Tensor<double>::normal({n, c}, rng);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) { return l1_loss(in[0], target); }, {x});
    CHECK(rep.ok(1e-4));
  }
  SUBCASE("batch_norm train and eval") {
    Tensor<double> gamma = Tensor<double>::uniform({1, c}, rng, 0.5, 1.5);
    Tensor<double> beta = Tensor<double>::normal({1, c}, rng);
    Tensor<double> rm({c});
    Tensor<double> rv = Tensor<double>::full({c}, 1.0);
    auto rep = gradcheck(
        [&](std::vector<Value<double>>& in) {
          Tensor<double> rm2 = rm, rv2 = rv;
          return masked_sum(batch_norm(in[0], in[1], in[2], rm2, rv2, true), mask_nc);
        },
        {x, gamma, beta});
    CHECK(rep.ok(1e-4));
    auto rep2 = gradcheck(
        [&](std::vector<Value<double>>& in) {
          Tensor<double> rm2 = rm, rv2 = rv;
          return masked_sum(batch_norm(in[0], in[1], in[2], rm2, rv2, false), mask_nc);
        },
        {x, gamma, beta});
    CHECK(rep2.ok(1e-4));
  }
}
