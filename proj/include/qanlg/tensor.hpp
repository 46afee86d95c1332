#pragma once

// Dense row-major tensors and a define-by-run reverse-mode autodiff graph.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace qanlg {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty() || values_.empty(); }
  std::span<const double> grad() const { return grad_; }
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }
  void accumulate_grad(std::span<const double> g);

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

// Handle to a node in a Graph.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  constant,
  parameter,
  matmul,
  matmul_bt,
  add,
  sub,
  mul,
  add_row,
  sigmoid,
  tanh,
  scale,
  softmax,
  masked_softmax,
  concat,
  reshape,
  gather_rows,
  sum,
  attention_scores,
  weighted_sum,
  cross_entropy,
  custom,
};

const char* op_name(OpKind kind);

// Backward rule for a custom node: receives the output gradient and the input
// values, returns one gradient buffer per input (empty = no contribution).
using CustomBackward = std::function<std::vector<std::vector<double>>(
    std::span<const double> out_grad, const std::vector<const Tensor*>& inputs, const Tensor& out)>;

class Graph {
 public:
  // With record_gradients off, parameters enter as plain constants and
  // backward() is unavailable.
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a caller-owned tensor; backward() accumulates into its grad.
  // Binding the same tensor twice returns the same node.
  Var parameter(Tensor& p);

  Var matmul(Var a, Var b);
  // a [m×k] · bᵀ where b is [n×k].
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // Matrix [m×n] plus vector [n] added to every row.
  Var add_row(Var a, Var bias);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var scale(Var a, double c);
  Var softmax(Var a, std::size_t axis);
  // Softmax over the last axis of a [rows×n]; entries with mask 0 get weight 0.
  Var masked_softmax(Var a, std::vector<std::uint8_t> mask);
  Var concat(std::span<const Var> parts, std::size_t axis);
  // Stacks equally shaped [B×D] tensors into [B×T×D].
  Var stack(std::span<const Var> parts);
  Var reshape(Var a, Shape shape);
  Var gather_rows(Var table, std::vector<std::size_t> ids);
  Var sum(Var a);
  // keys [B×S×D], query [B×D] -> [B×S] dot products.
  Var attention_scores(Var keys, Var query);
  // weights [B×S], keys [B×S×D] -> [B×D].
  Var weighted_sum(Var weights, Var keys);
  // Mean over unmasked rows of -log softmax(logits_row)[target].
  Var cross_entropy(Var logits, std::vector<std::size_t> targets, std::vector<std::uint8_t> mask);
  Var custom(std::span<const Var> inputs, Tensor output, CustomBackward rule);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Node gradient after backward(); empty if the node did not receive one.
  std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    std::vector<double> grad;
    Tensor* bound = nullptr;
    double constant = 0.0;
    std::size_t axis = 0;
    std::vector<std::size_t> indices;
    std::vector<std::uint8_t> mask;
    CustomBackward rule;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  std::vector<double>& grad_buffer(std::size_t id);
  void backward_node(std::size_t id);

  bool record_;
  std::deque<Node> nodes_;  // deque: references returned by value() stay valid as the graph grows
  std::unordered_map<const Tensor*, std::size_t> bound_;
};

// Scalar-valued function of parameters, rebuilt on every call.
using LossFunction = std::function<Var(Graph&)>;

// Max over all parameter entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// numeric via central differences with step epsilon.
double grad_check(std::span<Tensor* const> params, const LossFunction& fn, double epsilon = 1e-5);

}  // namespace qanlg
