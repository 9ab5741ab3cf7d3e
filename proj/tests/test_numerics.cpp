#include <doctest.h>

#include <cmath>
#include <limits>

#include "owvis/ops.hpp"
#include "owvis/rng.hpp"
#include "owvis/tensor.hpp"

using namespace owvis;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void fill_gaussian(Parameter& p, Rng& rng, double scl = 1.0) {
  for (double& v : p.values()) v = scl * rng.gaussian();
}

}  // namespace

TEST_CASE("softmax of [0, ln 2] is [1/3, 2/3]") {
  Tensor x({1, 2}, {0.0, std::log(2.0)});
  Tensor y = softmax_lastdim(x);
  CHECK(y.at({0, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(y.at({0, 1}) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to 1 within 1e-12, with and without -inf entries") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    int w = rng.uniform_int(2, 9);
    int rows = rng.uniform_int(1, 6);
    std::vector<double> vals(static_cast<size_t>(rows * w));
    for (double& v : vals) v = rng.uniform(-30.0, 30.0);
    if (trial % 2 == 1) {
      // Mask a strict subset of each row.
      for (int r = 0; r < rows; ++r) {
        int keep = rng.uniform_int(0, w - 1);
        for (int j = 0; j < w; ++j) {
          if (j != keep && rng.uniform() < 0.5) vals[static_cast<size_t>(r * w + j)] = -kInf;
        }
      }
    }
    Tensor y = softmax_lastdim(Tensor({rows, w}, vals));
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int j = 0; j < w; ++j) s += y.at({r, j});
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("-inf entries get exactly zero weight, bitwise") {
  Tensor x({1, 4}, {1.5, -kInf, 0.25, -kInf});
  Tensor y = softmax_lastdim(x);
  CHECK(y.at({0, 1}) == 0.0);
  CHECK(y.at({0, 3}) == 0.0);
  CHECK(y.at({0, 0}) + y.at({0, 2}) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("a row of all -inf raises empty-attention-row") {
  Tensor x({2, 3}, {0.0, 1.0, 2.0, -kInf, -kInf, -kInf});
  try {
    softmax_lastdim(x);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "empty-attention-row");
  }
}

TEST_CASE("linear: x=[[1,2]], w=[[3,4]], b=[1] gives [[12]]") {
  Tensor x({1, 2}, {1.0, 2.0});
  Tensor w({1, 2}, {3.0, 4.0});
  Tensor b({1}, {1.0});
  Tensor y = linear(x, w, b);
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y.at({0, 0}) == 12.0);
}

TEST_CASE("attention with zero mask and identical keys averages the values") {
  Tensor q({1, 2}, {0.0, 0.0});
  Tensor k({2, 2}, {0.0, 0.0, 0.0, 0.0});
  Tensor v({2, 2}, {1.0, 3.0, 5.0, 7.0});
  Tensor y = attention(q, k, v, Tensor::zeros({1, 2}));
  CHECK(y.at({0, 0}) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(y.at({0, 1}) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("attention with a one-hot mask selects one value row") {
  Tensor q({1, 2}, {0.0, 0.0});
  Tensor k({2, 2}, {0.0, 0.0, 0.0, 0.0});
  Tensor v({2, 2}, {1.0, 3.0, 5.0, 7.0});
  Tensor mask({1, 2}, {0.0, -kInf});
  Tensor y = attention(q, k, v, mask);
  CHECK(y.at({0, 0}) == 1.0);
  CHECK(y.at({0, 1}) == 3.0);
}

TEST_CASE("attention output is bitwise invariant to K and V at masked positions") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    int n = rng.uniform_int(1, 4), m = rng.uniform_int(2, 6), d = rng.uniform_int(2, 5);
    auto rv = [&](int count) {
      std::vector<double> v(static_cast<size_t>(count));
      for (double& x : v) x = rng.uniform(-2.0, 2.0);
      return v;
    };
    std::vector<double> qv = rv(n * d), kv = rv(m * d), vv = rv(m * 3);
    std::vector<double> maskv(static_cast<size_t>(n * m), 0.0);
    std::vector<std::pair<int, int>> masked;
    for (int i = 0; i < n; ++i) {
      int keep = rng.uniform_int(0, m - 1);
      for (int j = 0; j < m; ++j) {
        if (j != keep && rng.uniform() < 0.4) {
          maskv[static_cast<size_t>(i * m + j)] = -kInf;
          masked.push_back({i, j});
        }
      }
    }
    Tensor base = attention(Tensor({n, d}, qv), Tensor({m, d}, kv), Tensor({m, 3}, vv),
                            Tensor({n, m}, maskv));
    // Perturb every key/value row that is masked for every query row.
    std::vector<bool> row_masked_everywhere(static_cast<size_t>(m), true);
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i) {
        if (maskv[static_cast<size_t>(i * m + j)] == 0.0) row_masked_everywhere[static_cast<size_t>(j)] = false;
      }
    }
    std::vector<double> kv2 = kv, vv2 = vv;
    bool any = false;
    for (int j = 0; j < m; ++j) {
      if (!row_masked_everywhere[static_cast<size_t>(j)]) continue;
      any = true;
      for (int dd = 0; dd < d; ++dd) kv2[static_cast<size_t>(j * d + dd)] += 1e6;
      for (int cc = 0; cc < 3; ++cc) vv2[static_cast<size_t>(j * 3 + cc)] -= 42.0;
    }
    Tensor pert = attention(Tensor({n, d}, qv), Tensor({m, d}, kv2), Tensor({m, 3}, vv2),
                            Tensor({n, m}, maskv));
    if (any) {
      for (size_t i = 0; i < base.values().size(); ++i) {
        CHECK(base.values()[i] == pert.values()[i]);
      }
    }
  }
}

TEST_CASE("gradient of x*x at x=3 is 6") {
  Parameter x("x", {1});
  x.values()[0] = 3.0;
  Tape tape;
  Tensor t = x.use();
  Tensor loss = mul(t, t);
  tape.backward(loss);
  collect_gradients(tape, {&x});
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("gradient of sum(x) is all ones") {
  Parameter x("x", {2, 3});
  Rng rng(5);
  fill_gaussian(x, rng);
  Tape tape;
  Tensor loss = sum_all(x.use());
  tape.backward(loss);
  collect_gradients(tape, {&x});
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("frozen parameters receive zero gradient") {
  Parameter x("x", {3});
  Parameter w("w", {3}, /*frozen=*/true);
  Rng rng(7);
  fill_gaussian(x, rng);
  fill_gaussian(w, rng);
  Tape tape;
  Tensor loss = sum_all(mul(x.use(), w.use()));
  tape.backward(loss);
  collect_gradients(tape, {&x, &w});
  for (double g : w.grad()) CHECK(g == 0.0);
  for (size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == w.values()[i]);
}

TEST_CASE("backward is deterministic: two runs produce bitwise-equal gradients") {
  Rng rng(31);
  Parameter a("a", {4, 4}), b("b", {4, 4});
  fill_gaussian(a, rng);
  fill_gaussian(b, rng);
  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    Tensor x = matmul(a.use(), b.use());
    Tensor y = softmax_lastdim(x);
    Tensor loss = mean_all(mul(y, x));
    tape.backward(loss);
    collect_gradients(tape, {&a, &b});
    return std::make_pair(a.grad(), b.grad());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Parameter x("x", {2});
  x.values() = {1.0, 2.0};
  {
    Tape tape;
    Tensor t = scale(x.use(), 2.0);
    try {
      tape.backward(t);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "backward-non-scalar");
    }
  }
  {
    Tape tape;
    Tensor c = Tensor::scalar(4.0);
    try {
      tape.backward(c);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == "backward-detached");
    }
  }
}

TEST_CASE("finite differences: f(x) = x*x matches autodiff to 1e-8") {
  Parameter x("x", {1});
  x.values()[0] = 1.37;
  auto f = [&]() { return mul(x.use(), x.use()); };
  auto r = finite_diff_check(f, {&x}, 1e-5);
  CHECK(r.max_rel_err < 1e-8);
  CHECK(r.coords_checked == 1);
}

TEST_CASE("finite differences: softmax cross-entropy on 4 logits below 1e-6") {
  Parameter z("z", {1, 4});
  z.values() = {0.3, -1.2, 0.9, 0.05};
  auto f = [&]() {
    Tensor lp = log_softmax_lastdim(z.use());
    return scale(select_lastdim(lp, {2}), -1.0);
  };
  auto r = finite_diff_check(f, {&z}, 1e-5);
  CHECK(r.max_rel_err < 1e-6);
  CHECK(r.coords_checked == 4);
}

TEST_CASE("finite differences across all primitive ops over 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Parameter x("x", {3, 4}), w("w", {5, 4}), b("b", {5});
    Parameter g("g", {4}), be("be", {4});
    fill_gaussian(x, rng);
    fill_gaussian(w, rng, 0.5);
    fill_gaussian(b, rng, 0.1);
    for (double& v : g.values()) v = 1.0 + 0.3 * rng.gaussian();
    fill_gaussian(be, rng, 0.2);
    auto f = [&]() {
      Tensor h = linear(x.use(), w.use(), b.use());       // (3,5)
      h = gelu(h);
      Tensor s = softmax_lastdim(h);
      Tensor n = layer_norm(x.use(), g.use(), be.use());  // (3,4)
      Tensor t1 = mean_all(mul(s, sigmoid(h)));
      Tensor t2 = mean_all(softplus(matmul(n, transpose(w.use()))));
      Tensor t3 = sum_all(div(add_scalar(n, 3.0), Tensor::full({3, 4}, 2.0)));
      Tensor t4 = mean_all(l2_normalize_rows(slice_rows(x.use(), 0, 2)));
      Tensor t5 = neg_mean_pairwise_l1(x.use(), {0, 1, 2});
      return add(add(add(t1, t2), add(t3, t4)), t5);
    };
    auto r = finite_diff_check(f, {&x, &w, &b, &g, &be}, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences through im2col, concat, select and embeddings") {
  for (uint64_t seed = 100; seed < 105; ++seed) {
    Rng rng(seed);
    Parameter img("img", {1, 4, 4, 2});
    Parameter tab("tab", {6, 3});
    fill_gaussian(img, rng);
    fill_gaussian(tab, rng);
    auto f = [&]() {
      Tensor cols = im2col(img.use(), 3, 3, 2, 1);  // (4, 18)
      Tensor e = embedding_rows(tab.use(), {1, 4, 2, 1});
      Tensor joined = concat_rows(e, embedding_rows(tab.use(), {0, 5}));  // (6, 3)
      return add(mean_all(cols), mean_all(mul(joined, joined)));
    };
    auto r = finite_diff_check(f, {&img, &tab}, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite_diff_check input validation") {
  Parameter x("x", {1});
  x.values()[0] = 2.0;
  auto f = [&]() { return mul(x.use(), x.use()); };
  CHECK_THROWS_AS(finite_diff_check(f, {&x}, 1e-8 / 2), Error);
  CHECK_THROWS_AS(finite_diff_check(f, {&x}, 1e-2), Error);
  set_precision(Precision::f32);
  bool threw = false;
  try {
    finite_diff_check(f, {&x}, 1e-5);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == "finite-diff-precision");
  }
  set_precision(Precision::f64);
  CHECK(threw);
}

TEST_CASE("f32 mode rounds every op result through binary32") {
  set_precision(Precision::f32);
  Tensor a({1}, {1.0});
  Tensor b({1}, {3.0});
  Tensor y = div(a, b);
  CHECK(y.values()[0] == static_cast<double>(1.0f / 3.0f));
  set_precision(Precision::f64);
  Tensor y64 = div(a, b);
  CHECK(y64.values()[0] == 1.0 / 3.0);
  CHECK(y.values()[0] != y64.values()[0]);
}

TEST_CASE("tensors carry shape/data consistency and scalars read back") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
  Tensor s = Tensor::scalar(7.5);
  CHECK(s.value() == 7.5);
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.at({1, 2}) == 0.0);
}

TEST_CASE("rng streams are deterministic and mix() separates them") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 16; ++i) {
    uint64_t av = a.next_u64();
    CHECK(av == b.next_u64());
    CHECK(av != c.next_u64());
  }
  CHECK(Rng::mix(1, 2) != Rng::mix(2, 1));
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("neg_mean_pairwise_l1 of unit axis rows is -2") {
  Tensor x({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor y = neg_mean_pairwise_l1(x, {0, 1});
  CHECK(y.value() == -2.0);
  Tensor empty = neg_mean_pairwise_l1(x, {0});
  CHECK(empty.value() == 0.0);
}

TEST_CASE("debug mode flags NaN and +inf op results") {
  CHECK(debug_checks_enabled());
  Tensor a({1}, {1.0});
  Tensor zero({1}, {0.0});
  try {
    div(a, zero);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == "non-finite");
  }
}

TEST_CASE("stale tensors from an old tape are rejected inside a new tape") {
  Parameter x("x", {1});
  x.values()[0] = 1.0;
  Tensor leaked;
  {
    Tape t1;
    leaked = scale(x.use(), 2.0);
  }
  Tape t2;
  Tensor fresh = x.use();
  CHECK_THROWS_AS(add(leaked, fresh), Error);
}
