#include <cmath>
#include <random>

#include "doctest.h"
#include "qanlg/errors.hpp"
#include "qanlg/tensor.hpp"

using namespace qanlg;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double range = 1.0) {
  std::uniform_real_distribution<double> u(-range, range);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("matmul examples") {
  Graph g;
  Var i2 = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var b = g.constant(Tensor::matrix(2, 2, {5, 6, 7, 8}));
  auto v = g.value(g.matmul(i2, b)).values();
  CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{5, 6, 7, 8});

  Var a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  v = g.value(g.matmul(a, b)).values();
  CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{19, 22, 43, 50});

  Var a23 = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  try {
    g.matmul(a23, b);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("elementwise examples") {
  Graph g;
  CHECK(g.value(g.sigmoid(g.constant(Tensor::scalar(0)))).item() == 0.5);
  CHECK(g.value(g.tanh(g.constant(Tensor::scalar(0)))).item() == 0.0);
  auto v = g.value(g.add(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({3, 4})))).values();
  CHECK(v[0] == 4);
  CHECK(v[1] == 6);
  CHECK_THROWS_AS(g.mul(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1, 2, 3}))), ShapeError);
  // Row-wise bias add is the one broadcast supported.
  auto r = g.value(g.add(g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})), g.constant(Tensor::vector({10, 20}))));
  CHECK(r[3] == 24);
}

TEST_CASE("softmax examples") {
  Graph g;
  auto s = g.value(g.softmax(g.constant(Tensor::vector({0, 0})), 0));
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
  s = g.value(g.softmax(g.constant(Tensor::vector({std::log(2.0), 0})), 0));
  CHECK(s[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 5}, rng, 4.0);
  Tensor shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 123.0;
  auto a = g.value(g.softmax(g.constant(x), 1));
  auto b = g.value(g.softmax(g.constant(shifted), 1));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(a[r * 5 + c] > 0.0);
      CHECK(a[r * 5 + c] < 1.0);
      sum += a[r * 5 + c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(g.softmax(g.constant(x), 2), ShapeError);
}

TEST_CASE("masked softmax gives padded positions exactly zero") {
  Graph g;
  Var s = g.masked_softmax(g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})), {1, 1, 0, 1, 0, 0});
  const Tensor& w = g.value(s);
  CHECK(w[2] == 0.0);
  CHECK(w[4] == 0.0);
  CHECK(w[5] == 0.0);
  CHECK(w[3] == 1.0);
  CHECK(std::abs(w[0] + w[1] - 1.0) < 1e-12);
}

TEST_CASE("concat examples") {
  Graph g;
  Var a = g.constant(Tensor::matrix(1, 2, {1, 2}));
  Var b = g.constant(Tensor::matrix(1, 2, {3, 4}));
  Var parts[] = {a, b};
  const Tensor& c = g.value(g.concat(parts, 0));
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c[2] == 3);

  Var m = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var three[] = {m, m, m};
  CHECK(g.value(g.concat(three, 1)).shape() == Shape{2, 9});

  Var bad[] = {a, g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}))};
  CHECK_THROWS_AS(g.concat(bad, 1), ShapeError);
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::vector({3});
  x.set_requires_grad(true);
  {
    Graph g;
    Var xv = g.parameter(x);
    g.backward(g.sum(g.mul(xv, xv)));
  }
  CHECK(x.grad()[0] == 6.0);

  Tensor y = Tensor::vector({2});
  y.set_requires_grad(true);
  {
    Graph g;
    g.parameter(y);
    g.backward(g.sum(g.constant(Tensor::vector({5}))));
  }
  CHECK(y.grad()[0] == 0.0);

  Graph g;
  Var v = g.constant(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(g.backward(v), ContractError);
}

TEST_CASE("gradients accumulate across uses and calls") {
  Tensor x = Tensor::vector({1.5, -2});
  x.set_requires_grad(true);
  for (int round = 0; round < 2; ++round) {
    Graph g;
    Var a = g.parameter(x);
    Var b = g.parameter(x);
    g.backward(g.sum(g.add(a, b)));
  }
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("random 3-layer composition passes finite differences") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor w1 = random_tensor({5, 6}, rng), w2 = random_tensor({6, 3}, rng), w3 = random_tensor({3, 4}, rng);
  Tensor target = random_tensor({4, 4}, rng);
  auto fn = [&](Graph& g) {
    Var h = g.tanh(g.matmul(g.constant(x), g.parameter(w1)));
    h = g.softmax(g.matmul(h, g.parameter(w2)), 1);
    h = g.tanh(g.matmul(h, g.parameter(w3)));
    return g.sum(g.mul(h, g.constant(target)));
  };
  Tensor* params[] = {&w1, &w2, &w3};
  CHECK(grad_check(params, fn) < 1e-4);
}

TEST_CASE("every op passes finite differences") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({5, 4}, rng);
  Tensor bias = random_tensor({4}, rng), keys = random_tensor({2, 3, 4}, rng), q = random_tensor({2, 4}, rng);
  Tensor table = random_tensor({6, 4}, rng), coef = random_tensor({3, 4}, rng), coef9 = random_tensor({3, 9}, rng);
  Tensor* params[] = {&a, &b, &c, &bias, &keys, &q, &table};
  auto fn = [&](Graph& g) {
    Var va = g.parameter(a), vb = g.parameter(b);
    Var s = g.sub(g.mul(va, vb), g.scale(g.sigmoid(vb), 0.7));
    s = g.add_row(s, g.parameter(bias));
    Var bt = g.matmul_bt(s, g.parameter(c));  // [3×5]
    Var parts[] = {bt, g.reshape(g.tanh(s), {3, 4})};
    Var cat = g.concat(parts, 1);  // [3×9]
    Var sm = g.softmax(cat, 0);
    Var scores = g.attention_scores(g.parameter(keys), g.parameter(q));
    Var w = g.masked_softmax(scores, {1, 1, 0, 1, 1, 1});
    Var ctx = g.weighted_sum(w, g.parameter(keys));  // [2×4]
    Var rows = g.gather_rows(g.parameter(table), {0, 3, 3, 5});
    Var ce = g.cross_entropy(rows, {1, 2, 0, 3}, {1, 0, 1, 1});
    Var total = g.add(g.sum(g.mul(sm, g.constant(coef9))),
                      g.sum(g.mul(s, g.constant(coef))));
    total = g.add(total, g.sum(g.tanh(ctx)));
    return g.add(total, ce);
  };
  CHECK(grad_check(params, fn) < 1e-4);
}

TEST_CASE("grad_check: linear model, negative control, non-determinism") {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor({3, 1}, rng);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor* params[] = {&w};
  auto linear = [&](Graph& g) { return g.sum(g.matmul(g.constant(x), g.parameter(w))); };
  CHECK(grad_check(params, linear) < 1e-6);

  // Custom op whose backward rule is deliberately wrong (factor 3 instead of 2).
  auto corrupted = [&](Graph& g) {
    Var p = g.parameter(w);
    const Tensor& v = g.value(p);
    Tensor out = v;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * v[i];
    Var inputs[] = {p};
    Var sq = g.custom(inputs, out, [](std::span<const double> og, const std::vector<const Tensor*>& in, const Tensor&) {
      std::vector<double> gr(og.size());
      for (std::size_t i = 0; i < og.size(); ++i) gr[i] = 3.0 * (*in[0])[i] * og[i];
      return std::vector<std::vector<double>>{gr};
    });
    return g.sum(sq);
  };
  CHECK(grad_check(params, corrupted) > 1e-2);

  int calls = 0;
  auto flaky = [&](Graph& g) {
    ++calls;
    return g.sum(g.scale(g.parameter(w), static_cast<double>(calls)));
  };
  CHECK_THROWS_AS(grad_check(params, flaky), ContractError);
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(9);
  Tensor w = random_tensor({3, 3}, rng), x = random_tensor({2, 3}, rng);
  auto loss1 = [&](Graph& g) { return g.sum(g.tanh(g.matmul(g.constant(x), g.parameter(w)))); };
  auto loss2 = [&](Graph& g) { return g.sum(g.sigmoid(g.matmul_bt(g.constant(x), g.parameter(w)))); };
  auto grad_of = [&](auto fn) {
    w.zero_grad();
    Graph g;
    g.backward(fn(g));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto g1 = grad_of(loss1), g2 = grad_of(loss2);
  auto g12 = grad_of([&](Graph& g) { return g.add(loss1(g), loss2(g)); });
  for (std::size_t i = 0; i < g12.size(); ++i)
    CHECK(std::abs(g12[i] - (g1[i] + g2[i])) <= 1e-12 * std::max(1.0, std::abs(g12[i])));
}

TEST_CASE("forward and backward are bitwise reproducible") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor w = random_tensor({4, 4}, rng), x = random_tensor({3, 4}, rng);
    Graph g;
    Var loss = g.sum(g.softmax(g.tanh(g.matmul(g.constant(x), g.parameter(w))), 1));
    loss = g.add(loss, g.sum(g.mul(g.parameter(w), g.parameter(w))));
    g.backward(loss);
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(g.value(loss).item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("cross entropy errors") {
  Graph g;
  Var logits = g.constant(Tensor::matrix(2, 3, {0, 0, 0, 0, 0, 0}));
  CHECK_THROWS_AS(g.cross_entropy(logits, {0, 1}, {0, 0}), ContractError);
  CHECK_THROWS_AS(g.cross_entropy(logits, {0, 3}, {1, 1}), IndexError);
}

TEST_CASE("no-gradient graphs refuse backward") {
  Tensor w = Tensor::vector({1, 2});
  w.set_requires_grad(true);
  Graph g(false);
  Var loss = g.sum(g.parameter(w));
  CHECK_THROWS_AS(g.backward(loss), ContractError);
}
