#include "qanlg/nn.hpp"

#include <cmath>
#include <random>

#include "qanlg/errors.hpp"

namespace qanlg {

Tensor& ParameterStore::add(const std::string& path, Shape shape) {
  auto [it, inserted] = tensors_.try_emplace(path, Tensor(std::move(shape), true));
  if (!inserted) throw ContractError("duplicate parameter path " + path);
  return it->second;
}

Tensor& ParameterStore::get(const std::string& path) {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw ContractError("unknown parameter " + path);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& path) const {
  auto it = tensors_.find(path);
  if (it == tensors_.end()) throw ContractError("unknown parameter " + path);
  return it->second;
}

void ParameterStore::initialize(std::uint64_t seed, double range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& [path, t] : tensors_) {
    auto values = t.mutable_values();
    if (t.rank() < 2) {
      std::fill(values.begin(), values.end(), 0.0);
    } else {
      for (double& v : values) v = dist(rng);
    }
    t.clear_grad();
  }
}

void ParameterStore::zero_grad() {
  for (auto& [path, t] : tensors_) t.zero_grad();
}

std::vector<std::string> ParameterStore::paths() const {
  std::vector<std::string> out;
  for (const auto& [path, t] : tensors_) out.push_back(path);
  return out;
}

std::vector<std::string> ParameterStore::paths_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [path, t] : tensors_)
    if (path.compare(0, prefix.size(), prefix) == 0) out.push_back(path);
  return out;
}

std::map<std::string, std::vector<double>> ParameterStore::snapshot() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [path, t] : tensors_) out[path].assign(t.values().begin(), t.values().end());
  return out;
}

void ParameterStore::restore(const std::map<std::string, std::vector<double>>& values) {
  for (auto& [path, t] : tensors_) {
    auto it = values.find(path);
    if (it == values.end()) throw ContractError("snapshot lacks parameter " + path);
    if (it->second.size() != t.size()) throw ShapeError("snapshot size mismatch for " + path);
    std::copy(it->second.begin(), it->second.end(), t.mutable_values().begin());
  }
}

Embedding Embedding::create(ParameterStore& store, const std::string& prefix, std::size_t vocab_size,
                            std::size_t dim) {
  return Embedding{&store.add(prefix + ".table", {vocab_size, dim})};
}

Var Embedding::lookup(Graph& g, std::vector<std::size_t> ids) const {
  for (auto id : ids)
    if (id >= vocab_size())
      throw IndexError("embedding index " + std::to_string(id) + " >= vocabulary size " +
                       std::to_string(vocab_size()));
  return g.gather_rows(g.parameter(*table), std::move(ids));
}

GruCell GruCell::create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                        std::size_t hidden_dim) {
  GruCell c;
  c.input_dim = input_dim;
  c.hidden_dim = hidden_dim;
  c.w_z = &store.add(prefix + ".W_z", {hidden_dim, input_dim});
  c.w_r = &store.add(prefix + ".W_r", {hidden_dim, input_dim});
  c.w_h = &store.add(prefix + ".W_h", {hidden_dim, input_dim});
  c.u_z = &store.add(prefix + ".U_z", {hidden_dim, hidden_dim});
  c.u_r = &store.add(prefix + ".U_r", {hidden_dim, hidden_dim});
  c.u_h = &store.add(prefix + ".U_h", {hidden_dim, hidden_dim});
  c.b_z = &store.add(prefix + ".b_z", {hidden_dim});
  c.b_r = &store.add(prefix + ".b_r", {hidden_dim});
  c.b_h = &store.add(prefix + ".b_h", {hidden_dim});
  return c;
}

Var GruCell::step(Graph& g, Var x, Var h_prev) const {
  const Tensor& xv = g.value(x);
  const Tensor& hv = g.value(h_prev);
  const bool unbatched = xv.rank() == 1;
  if (unbatched) {
    if (hv.rank() != 1 || xv.dim(0) != input_dim || hv.dim(0) != hidden_dim)
      throw ShapeError("gru_step: x " + shape_string(xv.shape()) + ", h " + shape_string(hv.shape()) +
                       " do not match cell (" + std::to_string(input_dim) + ", " + std::to_string(hidden_dim) + ")");
    x = g.reshape(x, {1, input_dim});
    h_prev = g.reshape(h_prev, {1, hidden_dim});
  } else if (xv.rank() != 2 || hv.rank() != 2 || xv.dim(1) != input_dim || hv.dim(1) != hidden_dim ||
             xv.dim(0) != hv.dim(0)) {
    throw ShapeError("gru_step: x " + shape_string(xv.shape()) + ", h " + shape_string(hv.shape()) +
                     " do not match cell (" + std::to_string(input_dim) + ", " + std::to_string(hidden_dim) + ")");
  }

  auto gate = [&](Tensor* w, Tensor* u, Tensor* b, Var h) {
    Var pre = g.add(g.matmul_bt(x, g.parameter(*w)), g.matmul_bt(h, g.parameter(*u)));
    return g.add_row(pre, g.parameter(*b));
  };
  Var z = g.sigmoid(gate(w_z, u_z, b_z, h_prev));
  Var r = g.sigmoid(gate(w_r, u_r, b_r, h_prev));
  Var candidate = g.tanh(gate(w_h, u_h, b_h, g.mul(r, h_prev)));
  // (1-z)⊙h̃ + z⊙h == h̃ + z⊙(h - h̃)
  Var h = g.add(candidate, g.mul(z, g.sub(h_prev, candidate)));
  return unbatched ? g.reshape(h, {hidden_dim}) : h;
}

BiGruEncoder BiGruEncoder::create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                                  std::size_t hidden_dim) {
  return BiGruEncoder{GruCell::create(store, prefix + ".forward_cell", input_dim, hidden_dim),
                      GruCell::create(store, prefix + ".backward_cell", input_dim, hidden_dim)};
}

EncoderOutput BiGruEncoder::encode(Graph& g, std::span<const Var> inputs) const {
  if (inputs.empty()) throw ContractError("encode: empty input sequence");
  std::vector<Var> batched;
  for (const Var& v : inputs) {
    const Tensor& t = g.value(v);
    if (t.rank() != 1) throw ShapeError("encode: expected vectors, got " + shape_string(t.shape()));
    batched.push_back(g.reshape(v, {1, t.dim(0)}));
  }
  const std::vector<std::size_t> lengths{inputs.size()};
  EncoderOutput out = encode(g, batched, lengths);
  out.states = g.reshape(out.states, {inputs.size(), output_dim()});
  return out;
}

EncoderOutput BiGruEncoder::encode(Graph& g, std::span<const Var> inputs,
                                   std::span<const std::size_t> lengths) const {
  if (inputs.empty()) throw ContractError("encode: empty input sequence");
  const std::size_t steps = inputs.size();
  const std::size_t batch = g.value(inputs[0]).dim(0);
  if (lengths.size() != batch) throw ShapeError("encode: lengths do not match batch size");
  for (auto len : lengths)
    if (len == 0 || len > steps) throw ContractError("encode: sequence length out of range");
  const std::size_t hidden = hidden_dim();
  bool ragged = false;
  for (auto len : lengths) ragged = ragged || len != steps;

  // valid[t] is a [B×H] 0/1 matrix; null when every row is valid.
  auto validity = [&](std::size_t t) -> std::optional<Var> {
    if (!ragged) return std::nullopt;
    std::vector<double> m(batch * hidden);
    for (std::size_t b = 0; b < batch; ++b)
      std::fill_n(&m[b * hidden], hidden, t < lengths[b] ? 1.0 : 0.0);
    return g.constant(Tensor({batch, hidden}, std::move(m)));
  };
  auto carry = [&](Var h_prev, Var h_new, std::optional<Var> valid) {
    if (!valid) return h_new;
    return g.add(h_prev, g.mul(*valid, g.sub(h_new, h_prev)));
  };

  const Var zero = g.constant(Tensor({batch, hidden}));
  std::vector<Var> fwd(steps), bwd(steps);
  std::vector<std::optional<Var>> valid(steps);
  for (std::size_t t = 0; t < steps; ++t) valid[t] = validity(t);

  Var h = zero;
  for (std::size_t t = 0; t < steps; ++t) {
    h = carry(h, forward_cell.step(g, inputs[t], h), valid[t]);
    fwd[t] = h;
  }
  const Var forward_final = h;
  h = zero;
  for (std::size_t t = steps; t-- > 0;) {
    h = carry(h, backward_cell.step(g, inputs[t], h), valid[t]);
    bwd[t] = h;
  }
  const Var backward_final = h;

  std::vector<Var> rows(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Var pair[2] = {fwd[t], bwd[t]};
    rows[t] = g.concat(pair, 1);
  }
  const Var finals[2] = {forward_final, backward_final};
  return EncoderOutput{g.stack(rows), g.concat(finals, 1)};
}

LuongAttention LuongAttention::create(ParameterStore& store, const std::string& prefix, std::size_t query_dim,
                                      std::size_t key_dim) {
  return LuongAttention{&store.add(prefix + ".W_a", {query_dim, key_dim})};
}

AttentionOutput LuongAttention::attend(Graph& g, Var query, Var keys) const {
  const Tensor& q = g.value(query);
  const Tensor& k = g.value(keys);
  if (q.rank() != 1 || k.rank() != 2)
    throw ShapeError("attend: expected query vector and key matrix, got " + shape_string(q.shape()) + ", " +
                     shape_string(k.shape()));
  const std::size_t s = k.dim(0), d = k.dim(1);
  AttentionOutput out = attend(g, g.reshape(query, {1, q.dim(0)}), g.reshape(keys, {1, s, d}), nullptr);
  return AttentionOutput{g.reshape(out.context, {d}), g.reshape(out.weights, {s})};
}

AttentionOutput LuongAttention::attend(Graph& g, Var query, Var keys, const std::vector<std::uint8_t>* mask) const {
  const Tensor& q = g.value(query);
  const Tensor& k = g.value(keys);
  if (q.rank() != 2 || k.rank() != 3 || q.dim(1) != query_dim() || k.dim(2) != key_dim() || q.dim(0) != k.dim(0))
    throw ShapeError("attend: query " + shape_string(q.shape()) + " and keys " + shape_string(k.shape()) +
                     " do not match W_a " + shape_string(w_a->shape()));
  Var projected = g.matmul(query, g.parameter(*w_a));
  Var scores = g.attention_scores(keys, projected);
  Var weights = mask ? g.masked_softmax(scores, *mask) : g.softmax(scores, 1);
  return AttentionOutput{g.weighted_sum(weights, keys), weights};
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
  return Linear{&store.add(prefix + ".W", {out, in}), &store.add(prefix + ".b", {out})};
}

Var Linear::apply(Graph& g, Var x) const {
  return g.add_row(g.matmul_bt(x, g.parameter(*w)), g.parameter(*b));
}

Var cross_entropy(Graph& g, Var logits, const std::vector<std::size_t>& targets, const std::vector<bool>& mask) {
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return g.cross_entropy(logits, targets, std::move(m));
}

void Adam::step(ParameterStore& store) { step(store, store.paths()); }

void Adam::step(ParameterStore& store, const std::vector<std::string>& paths) {
  for (const auto& path : paths) {
    const Tensor& p = store.get(path);
    if (p.grad().size() != p.size()) throw ContractError("adam_step: parameter " + path + " has no gradient");
  }
  ++steps_;
  const auto& c = config_;
  for (const auto& path : paths) {
    Tensor& p = store.get(path);
    AdamSlot& slot = slots_[path];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), 0.0);
      slot.v.assign(p.size(), 0.0);
    }
    ++slot.t;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(slot.t));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(slot.t));
    auto values = p.mutable_values();
    auto grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * grad[i];
      slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double m_hat = slot.m[i] / correction1;
      const double v_hat = slot.v[i] / correction2;
      values[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double clip_grad_norm(ParameterStore& store, const std::vector<std::string>& paths, double max_norm) {
  double sq = 0.0;
  for (const auto& path : paths)
    for (double g : store.get(path).grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& path : paths)
      for (double& g : store.get(path).mutable_grad()) g *= factor;
  }
  return norm;
}

}  // namespace qanlg
