#pragma once

// Layers for the encoder-decoder models: embeddings, GRU cells, bidirectional
// GRU encoders, Luong general attention, linear projections, and Adam.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qanlg/tensor.hpp"

namespace qanlg {

// Owns every trainable tensor of a model under a dotted path name. Node-based
// storage keeps tensor addresses stable for the layers that point into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Tensor& add(const std::string& path, Shape shape);
  Tensor& get(const std::string& path);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return tensors_.count(path) > 0; }
  std::size_t size() const { return tensors_.size(); }

  // Weights (rank >= 2) uniform in [-range, range], biases (rank 1) zero; visited in path order.
  void initialize(std::uint64_t seed, double range = 0.08);
  void zero_grad();

  std::vector<std::string> paths() const;
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  std::map<std::string, std::vector<double>> snapshot() const;
  void restore(const std::map<std::string, std::vector<double>>& values);

 private:
  std::map<std::string, Tensor> tensors_;
};

struct Embedding {
  Tensor* table = nullptr;  // [vocab × dim]

  static Embedding create(ParameterStore& store, const std::string& prefix, std::size_t vocab_size,
                          std::size_t dim);
  std::size_t vocab_size() const { return table->dim(0); }
  std::size_t dim() const { return table->dim(1); }
  // [ids.size() × dim]
  Var lookup(Graph& g, std::vector<std::size_t> ids) const;
};

// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
// h̃ = tanh(W_h x + U_h (r⊙h) + b_h), h' = (1-z)⊙h̃ + z⊙h.
struct GruCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor *w_z = nullptr, *w_r = nullptr, *w_h = nullptr;  // [hidden × input]
  Tensor *u_z = nullptr, *u_r = nullptr, *u_h = nullptr;  // [hidden × hidden]
  Tensor *b_z = nullptr, *b_r = nullptr, *b_h = nullptr;  // [hidden]

  static GruCell create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                        std::size_t hidden_dim);
  // Accepts x [input] with h [hidden], or batched x [B×input] with h [B×hidden].
  Var step(Graph& g, Var x, Var h_prev) const;
};

struct EncoderOutput {
  Var states;  // [B×T×2H] (or [T×2H] for unbatched input)
  Var final;   // [B×2H]: forward state after the last valid step, backward state at step 0
};

struct BiGruEncoder {
  GruCell forward_cell;
  GruCell backward_cell;

  static BiGruEncoder create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                             std::size_t hidden_dim);
  std::size_t hidden_dim() const { return forward_cell.hidden_dim; }
  std::size_t output_dim() const { return 2 * forward_cell.hidden_dim; }

  // Unbatched: inputs are T vectors [input_dim]; states are [T×2H].
  EncoderOutput encode(Graph& g, std::span<const Var> inputs) const;
  // Batched: inputs are T matrices [B×input_dim]; row b is valid for t < lengths[b].
  // Padded steps carry the previous state so padding never leaks into valid positions.
  EncoderOutput encode(Graph& g, std::span<const Var> inputs, std::span<const std::size_t> lengths) const;
};

struct AttentionOutput {
  Var context;
  Var weights;
};

// Luong general attention: score(q, k_s) = qᵀ W_a k_s.
struct LuongAttention {
  Tensor* w_a = nullptr;  // [query_dim × key_dim]

  static LuongAttention create(ParameterStore& store, const std::string& prefix, std::size_t query_dim,
                               std::size_t key_dim);
  std::size_t query_dim() const { return w_a->dim(0); }
  std::size_t key_dim() const { return w_a->dim(1); }

  // Unbatched: query [q], keys [S×k] -> context [k], weights [S].
  AttentionOutput attend(Graph& g, Var query, Var keys) const;
  // Batched: query [B×q], keys [B×S×k], optional mask [B×S] (0 = padded).
  AttentionOutput attend(Graph& g, Var query, Var keys, const std::vector<std::uint8_t>* mask) const;
};

// y = x Wᵀ + b
struct Linear {
  Tensor* w = nullptr;  // [out × in]
  Tensor* b = nullptr;  // [out]

  static Linear create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out);
  Var apply(Graph& g, Var x) const;
};

// Masked mean token cross-entropy over logits [T×V].
Var cross_entropy(Graph& g, Var logits, const std::vector<std::size_t>& targets,
                  const std::vector<bool>& mask);

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// Adam with bias correction. Each parameter keeps its own step count so that
// parameters updated on a subset of steps (task-private decoders) get the
// correction matching the number of updates they actually received.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  const std::map<std::string, AdamSlot>& slots() const { return slots_; }

  void step(ParameterStore& store);
  void step(ParameterStore& store, const std::vector<std::string>& paths);

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, AdamSlot> slots_;
};

// Rescales gradients of the given parameters so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, const std::vector<std::string>& paths, double max_norm);

}  // namespace qanlg
