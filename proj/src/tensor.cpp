#include "qanlg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "qanlg/errors.hpp"

namespace qanlg {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), values_(shape_size(shape_), 0.0), requires_grad_(requires_grad) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  if (shape_size(shape_) != values_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(values_.size()) + " values");
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
  return values_[0];
}

std::span<double> Tensor::mutable_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(values_.size(), 0.0); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != values_.size()) throw ShapeError("gradient size mismatch");
  auto dst = mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_bt: return "matmul_bt";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::add_row: return "add_row";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::scale: return "scale";
    case OpKind::softmax: return "softmax";
    case OpKind::masked_softmax: return "masked_softmax";
    case OpKind::concat: return "concat";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::sum: return "sum";
    case OpKind::attention_scores: return "attention_scores";
    case OpKind::weighted_sum: return "weighted_sum";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::custom: return "custom";
  }
  return "?";
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits a shape around an axis into (outer, axis length, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var Graph::push(Node n) {
  if (!record_) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  value.set_requires_grad(false);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::parameter(Tensor& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{it->second};
  bound_[&p] = nodes_.size();
  Node n;
  n.kind = OpKind::parameter;
  n.value = Tensor(p.shape(), std::vector<double>(p.values().begin(), p.values().end()));
  n.requires_grad = p.requires_grad();
  n.bound = &p;
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
    throw ShapeError("matmul: cannot multiply " + shape_string(x.shape()) + " by " + shape_string(y.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto xv = x.values();
  const auto yv = y.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xv[i * k + p];
      if (s == 0.0) continue;
      const double* yr = &yv[p * n];
      double* o = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += s * yr[j];
    }
  Node nd;
  nd.kind = OpKind::matmul;
  nd.inputs = {a.id, b.id};
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  nd.value = Tensor({m, n}, std::move(out));
  return push(std::move(nd));
}

Var Graph::matmul_bt(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1))
    throw ShapeError("matmul_bt: cannot multiply " + shape_string(x.shape()) + " by transpose of " +
                     shape_string(y.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(0);
  std::vector<double> out(m * n, 0.0);
  const auto xv = x.values();
  const auto yv = y.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = &xv[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* yr = &yv[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += xr[p] * yr[p];
      out[i * n + j] = s;
    }
  }
  Node nd;
  nd.kind = OpKind::matmul_bt;
  nd.inputs = {a.id, b.id};
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  nd.value = Tensor({m, n}, std::move(out));
  return push(std::move(nd));
}

namespace {

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

Var Graph::add(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape() && x.rank() == 2 && y.rank() == 1) return add_row(a, b);
  require_same(x, y, "add");
  Node nd;
  nd.kind = OpKind::add;
  nd.inputs = {a.id, b.id};
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  nd.value = zip(x, y, [](double p, double q) { return p + q; });
  return push(std::move(nd));
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  require_same(x, y, "sub");
  Node nd;
  nd.kind = OpKind::sub;
  nd.inputs = {a.id, b.id};
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  nd.value = zip(x, y, [](double p, double q) { return p - q; });
  return push(std::move(nd));
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  require_same(x, y, "mul");
  Node nd;
  nd.kind = OpKind::mul;
  nd.inputs = {a.id, b.id};
  nd.requires_grad = node(a).requires_grad || node(b).requires_grad;
  nd.value = zip(x, y, [](double p, double q) { return p * q; });
  return push(std::move(nd));
}

Var Graph::add_row(Var a, Var bias) {
  const Tensor& x = node(a).value;
  const Tensor& b = node(bias).value;
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
    throw ShapeError("add_row: cannot add " + shape_string(b.shape()) + " to rows of " + shape_string(x.shape()));
  const std::size_t cols = b.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % cols];
  Node nd;
  nd.kind = OpKind::add_row;
  nd.inputs = {a.id, bias.id};
  nd.requires_grad = node(a).requires_grad || node(bias).requires_grad;
  nd.value = Tensor(x.shape(), std::move(out));
  return push(std::move(nd));
}

Var Graph::sigmoid(Var a) {
  Node nd;
  nd.kind = OpKind::sigmoid;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.value = map(node(a).value, sigmoid_value);
  return push(std::move(nd));
}

Var Graph::tanh(Var a) {
  Node nd;
  nd.kind = OpKind::tanh;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.value = map(node(a).value, [](double x) { return std::tanh(x); });
  return push(std::move(nd));
}

Var Graph::scale(Var a, double c) {
  Node nd;
  nd.kind = OpKind::scale;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.constant = c;
  nd.value = map(node(a).value, [c](double x) { return c * x; });
  return push(std::move(nd));
}

Var Graph::softmax(Var a, std::size_t axis) {
  const Tensor& x = node(a).value;
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.length; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.length; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.length; ++j) out[base + j * s.inner] /= total;
    }
  Node nd;
  nd.kind = OpKind::softmax;
  nd.inputs = {a.id};
  nd.axis = axis;
  nd.requires_grad = node(a).requires_grad;
  nd.value = Tensor(x.shape(), std::move(out));
  return push(std::move(nd));
}

Var Graph::masked_softmax(Var a, std::vector<std::uint8_t> mask) {
  const Tensor& x = node(a).value;
  require_rank(x, 2, "masked_softmax");
  if (mask.size() != x.size())
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " entries for " +
                     shape_string(x.shape()));
  const std::size_t rows = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[r * n + j]) mx = std::max(mx, x[r * n + j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw ContractError("masked_softmax: row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask[r * n + j]) {
        out[r * n + j] = std::exp(x[r * n + j] - mx);
        total += out[r * n + j];
      }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= total;
  }
  Node nd;
  nd.kind = OpKind::masked_softmax;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.mask = std::move(mask);
  nd.value = Tensor(x.shape(), std::move(out));
  return push(std::move(nd));
}

Var Graph::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Tensor& first = node(parts[0]).value;
  if (axis >= first.rank())
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first.shape()));
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Tensor& t = node(p).value;
    bool ok = t.rank() == first.rank();
    for (std::size_t d = 0; ok && d < t.rank(); ++d)
      if (d != axis && t.dim(d) != first.dim(d)) ok = false;
    if (!ok)
      throw ShapeError("concat: incompatible shapes " + shape_string(first.shape()) + " and " +
                       shape_string(t.shape()) + " along axis " + std::to_string(axis));
    out_shape[axis] += t.dim(axis);
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  Node nd;
  nd.kind = OpKind::concat;
  nd.axis = axis;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& t = node(p).value;
    const std::size_t len = t.dim(axis);
    const std::size_t chunk = len * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o)
      std::copy_n(&t.values()[o * chunk], chunk, &out[o * total.length * total.inner + offset * total.inner]);
    offset += len;
    nd.inputs.push_back(p.id);
    nd.requires_grad = nd.requires_grad || node(p).requires_grad;
  }
  nd.value = Tensor(std::move(out_shape), std::move(out));
  return push(std::move(nd));
}

Var Graph::stack(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Tensor& first = node(parts[0]).value;
  require_rank(first, 2, "stack");
  std::vector<Var> reshaped;
  reshaped.reserve(parts.size());
  for (const Var& p : parts) {
    const Tensor& t = node(p).value;
    require_same(first, t, "stack");
    reshaped.push_back(reshape(p, {t.dim(0), 1, t.dim(1)}));
  }
  return concat(reshaped, 1);
}

Var Graph::reshape(Var a, Shape shape) {
  const Tensor& x = node(a).value;
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  Node nd;
  nd.kind = OpKind::reshape;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.value = Tensor(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  return push(std::move(nd));
}

Var Graph::gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& t = node(table).value;
  require_rank(t, 2, "gather_rows");
  if (ids.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  std::vector<double> out(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows)
      throw IndexError("gather_rows: index " + std::to_string(ids[i]) + " >= " + std::to_string(rows));
    std::copy_n(&t.values()[ids[i] * cols], cols, &out[i * cols]);
  }
  Node nd;
  nd.kind = OpKind::gather_rows;
  nd.inputs = {table.id};
  nd.requires_grad = node(table).requires_grad;
  nd.value = Tensor({ids.size(), cols}, std::move(out));
  nd.indices = std::move(ids);
  return push(std::move(nd));
}

Var Graph::sum(Var a) {
  const Tensor& x = node(a).value;
  double s = 0.0;
  for (double v : x.values()) s += v;
  Node nd;
  nd.kind = OpKind::sum;
  nd.inputs = {a.id};
  nd.requires_grad = node(a).requires_grad;
  nd.value = Tensor::scalar(s);
  return push(std::move(nd));
}

Var Graph::attention_scores(Var keys, Var query) {
  const Tensor& k = node(keys).value;
  const Tensor& q = node(query).value;
  if (k.rank() != 3 || q.rank() != 2 || k.dim(0) != q.dim(0) || k.dim(2) != q.dim(1))
    throw ShapeError("attention_scores: keys " + shape_string(k.shape()) + " incompatible with query " +
                     shape_string(q.shape()));
  const std::size_t b = k.dim(0), s = k.dim(1), d = k.dim(2);
  std::vector<double> out(b * s);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += k[(i * s + j) * d + p] * q[i * d + p];
      out[i * s + j] = acc;
    }
  Node nd;
  nd.kind = OpKind::attention_scores;
  nd.inputs = {keys.id, query.id};
  nd.requires_grad = node(keys).requires_grad || node(query).requires_grad;
  nd.value = Tensor({b, s}, std::move(out));
  return push(std::move(nd));
}

Var Graph::weighted_sum(Var weights, Var keys) {
  const Tensor& w = node(weights).value;
  const Tensor& k = node(keys).value;
  if (k.rank() != 3 || w.rank() != 2 || k.dim(0) != w.dim(0) || k.dim(1) != w.dim(1))
    throw ShapeError("weighted_sum: weights " + shape_string(w.shape()) + " incompatible with keys " +
                     shape_string(k.shape()));
  const std::size_t b = k.dim(0), s = k.dim(1), d = k.dim(2);
  std::vector<double> out(b * d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double a = w[i * s + j];
      if (a == 0.0) continue;
      for (std::size_t p = 0; p < d; ++p) out[i * d + p] += a * k[(i * s + j) * d + p];
    }
  Node nd;
  nd.kind = OpKind::weighted_sum;
  nd.inputs = {weights.id, keys.id};
  nd.requires_grad = node(weights).requires_grad || node(keys).requires_grad;
  nd.value = Tensor({b, d}, std::move(out));
  return push(std::move(nd));
}

Var Graph::cross_entropy(Var logits, std::vector<std::size_t> targets, std::vector<std::uint8_t> mask) {
  const Tensor& x = node(logits).value;
  require_rank(x, 2, "cross_entropy");
  const std::size_t rows = x.dim(0), v = x.dim(1);
  if (targets.size() != rows || mask.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries for logits " + shape_string(x.shape()));
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] >= v)
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " >= vocabulary size " +
                       std::to_string(v));
    const double* row = &x.values()[r * v];
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[r]];
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is masked");
  Node nd;
  nd.kind = OpKind::cross_entropy;
  nd.inputs = {logits.id};
  nd.requires_grad = node(logits).requires_grad;
  nd.value = Tensor::scalar(total / static_cast<double>(count));
  nd.indices = std::move(targets);
  nd.mask = std::move(mask);
  return push(std::move(nd));
}

Var Graph::custom(std::span<const Var> inputs, Tensor output, CustomBackward rule) {
  Node nd;
  nd.kind = OpKind::custom;
  for (const Var& v : inputs) {
    nd.inputs.push_back(v.id);
    nd.requires_grad = nd.requires_grad || node(v).requires_grad;
  }
  nd.value = std::move(output);
  nd.rule = std::move(rule);
  return push(std::move(nd));
}

std::vector<double>& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!record_) throw ContractError("backward on a graph built without gradient recording");
  const Node& root = node(loss);
  if (root.value.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_string(root.value.shape()));
  for (auto& n : nodes_) {
    n.grad.clear();
    // Leaves the loss does not depend on still get a (zero) gradient.
    if (n.kind == OpKind::parameter && n.requires_grad && n.bound) n.bound->mutable_grad();
  }
  if (!root.requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    backward_node(id);
  }
}

void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
  auto in_value = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

  switch (n.kind) {
    case OpKind::constant:
      break;
    case OpKind::parameter:
      if (n.bound) n.bound->accumulate_grad(g);
      break;
    case OpKind::matmul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
            ga[i * k + p] += s;
          }
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double s = a[i * k + p];
            if (s == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += s * g[i * cols + j];
          }
      }
      break;
    }
    case OpKind::matmul_bt: {
      // out[i,j] = Σ_p a[i,p] b[j,p]
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), rows_b = b.dim(0);
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < rows_b; ++j) {
            const double s = g[i * rows_b + j];
            if (s == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += s * b[j * k + p];
          }
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < rows_b; ++j) {
            const double s = g[i * rows_b + j];
            if (s == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += s * a[i * k + p];
          }
      }
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const double sign = n.kind == OpKind::add ? 1.0 : -1.0;
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      break;
    }
    case OpKind::mul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::add_row: {
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        const std::size_t cols = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
      }
      break;
    }
    case OpKind::sigmoid: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        ga[i] += g[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::tanh: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        ga[i] += g[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::scale: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.constant * g[i];
      break;
    }
    case OpKind::softmax: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      const AxisSplit s = split_axis(n.value.shape(), n.axis);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.length * s.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.length; ++j) dot += g[base + j * s.inner] * n.value[base + j * s.inner];
          for (std::size_t j = 0; j < s.length; ++j) {
            const std::size_t idx = base + j * s.inner;
            ga[idx] += n.value[idx] * (g[idx] - dot);
          }
        }
      break;
    }
    case OpKind::masked_softmax: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * n.value[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          const std::size_t idx = r * cols + j;
          if (n.mask[idx]) ga[idx] += n.value[idx] * (g[idx] - dot);
        }
      }
      break;
    }
    case OpKind::concat: {
      const AxisSplit total = split_axis(n.value.shape(), n.axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t len = in_value(i).dim(n.axis);
        if (wants(i)) {
          auto& gi = grad_buffer(n.inputs[i]);
          const std::size_t chunk = len * total.inner;
          for (std::size_t o = 0; o < total.outer; ++o) {
            const double* src = &g[o * total.length * total.inner + offset * total.inner];
            double* dst = &gi[o * chunk];
            for (std::size_t q = 0; q < chunk; ++q) dst[q] += src[q];
          }
        }
        offset += len;
      }
      break;
    }
    case OpKind::reshape: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::gather_rows: {
      if (!wants(0)) break;
      auto& gt = grad_buffer(n.inputs[0]);
      const std::size_t cols = n.value.dim(1);
      for (std::size_t i = 0; i < n.indices.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) gt[n.indices[i] * cols + c] += g[i * cols + c];
      break;
    }
    case OpKind::sum: {
      if (!wants(0)) break;
      auto& ga = grad_buffer(n.inputs[0]);
      for (double& v : ga) v += g[0];
      break;
    }
    case OpKind::attention_scores: {
      const Tensor& k = in_value(0);
      const Tensor& q = in_value(1);
      const std::size_t b = k.dim(0), s = k.dim(1), d = k.dim(2);
      if (wants(0)) {
        auto& gk = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < s; ++j)
            for (std::size_t p = 0; p < d; ++p) gk[(i * s + j) * d + p] += g[i * s + j] * q[i * d + p];
      }
      if (wants(1)) {
        auto& gq = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < s; ++j)
            for (std::size_t p = 0; p < d; ++p) gq[i * d + p] += g[i * s + j] * k[(i * s + j) * d + p];
      }
      break;
    }
    case OpKind::weighted_sum: {
      const Tensor& w = in_value(0);
      const Tensor& k = in_value(1);
      const std::size_t b = k.dim(0), s = k.dim(1), d = k.dim(2);
      if (wants(0)) {
        auto& gw = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < s; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < d; ++p) acc += g[i * d + p] * k[(i * s + j) * d + p];
            gw[i * s + j] += acc;
          }
      }
      if (wants(1)) {
        auto& gk = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < s; ++j)
            for (std::size_t p = 0; p < d; ++p) gk[(i * s + j) * d + p] += w[i * s + j] * g[i * d + p];
      }
      break;
    }
    case OpKind::cross_entropy: {
      if (!wants(0)) break;
      const Tensor& x = in_value(0);
      auto& gx = grad_buffer(n.inputs[0]);
      const std::size_t rows = x.dim(0), v = x.dim(1);
      std::size_t count = 0;
      for (auto m : n.mask) count += m ? 1 : 0;
      const double coef = g[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!n.mask[r]) continue;
        const double* row = &x.values()[r * v];
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(row[j] - mx) / z;
          gx[r * v + j] += coef * (p - (j == n.indices[r] ? 1.0 : 0.0));
        }
      }
      break;
    }
    case OpKind::custom: {
      std::vector<const Tensor*> inputs;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) inputs.push_back(&in_value(i));
      const auto grads = n.rule(g, inputs, n.value);
      if (grads.size() != n.inputs.size()) throw ContractError("custom backward returned wrong arity");
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!wants(i) || grads[i].empty()) continue;
        auto& gi = grad_buffer(n.inputs[i]);
        if (grads[i].size() != gi.size()) throw ShapeError("custom backward gradient size mismatch");
        for (std::size_t q = 0; q < gi.size(); ++q) gi[q] += grads[i][q];
      }
      break;
    }
  }
}

double grad_check(std::span<Tensor* const> params, const LossFunction& fn, double epsilon) {
  auto evaluate = [&]() {
    Graph g(false);
    return g.value(fn(g)).item();
  };
  const double base = evaluate();
  if (evaluate() != base) throw ContractError("grad_check: function is not deterministic");

  for (Tensor* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = fn(g);
    g.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + epsilon;
      const double up = evaluate();
      p[i] = orig - epsilon;
      const double down = evaluate();
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace qanlg
