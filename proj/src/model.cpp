#include "qanlg/model.hpp"

#include <set>

#include "qanlg/text.hpp"

namespace qanlg {

namespace {

constexpr EncoderKind kAllEncoders[] = {EncoderKind::slot_types, EncoderKind::slot_values, EncoderKind::dialog_act,
                                        EncoderKind::utterance};

bool is_mr_stream(EncoderKind k) { return k != EncoderKind::utterance; }

bool valid_task_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!(std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_'))
      return false;
  return true;
}

StreamBatch pad_stream(const std::vector<std::vector<std::size_t>>& seqs) {
  StreamBatch s;
  s.rows = seqs.size();
  for (const auto& q : seqs) s.cols = std::max(s.cols, q.size());
  s.ids.assign(s.rows * s.cols, Vocab::kPad);
  for (std::size_t b = 0; b < s.rows; ++b) {
    std::copy(seqs[b].begin(), seqs[b].end(), s.ids.begin() + static_cast<std::ptrdiff_t>(b * s.cols));
    s.lengths.push_back(seqs[b].size());
  }
  return s;
}

}  // namespace

const char* encoder_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::slot_types: return "slot_types";
    case EncoderKind::slot_values: return "slot_values";
    case EncoderKind::dialog_act: return "dialog_act";
    case EncoderKind::utterance: return "utterance";
  }
  return "?";
}

EncoderKind parse_encoder_kind(const std::string& name) {
  for (EncoderKind k : kAllEncoders)
    if (name == encoder_name(k)) return k;
  throw ContractError("unknown encoder '" + name + "' (expected slot_types, slot_values, dialog_act, utterance)");
}

const char* utterance_mode_name(UtteranceMode mode) {
  switch (mode) {
    case UtteranceMode::none: return "none";
    case UtteranceMode::lex: return "lex";
    case UtteranceMode::delex: return "delex";
  }
  return "?";
}

UtteranceMode parse_utterance_mode(const std::string& name) {
  if (name == "none") return UtteranceMode::none;
  if (name == "lex") return UtteranceMode::lex;
  if (name == "delex") return UtteranceMode::delex;
  throw ContractError("unknown utterance_mode '" + name + "' (expected none, lex, delex)");
}

bool ModelConfig::has(EncoderKind kind) const {
  return std::find(encoders.begin(), encoders.end(), kind) != encoders.end();
}

char ModelConfig::architecture() const {
  if (multitask()) return 'C';
  return has(EncoderKind::utterance) ? 'B' : 'A';
}

void ModelConfig::validate() const {
  std::set<EncoderKind> seen;
  bool any_mr = false;
  for (EncoderKind k : encoders) {
    if (!seen.insert(k).second) throw ContractError(std::string("encoder listed twice: ") + encoder_name(k));
    any_mr = any_mr || is_mr_stream(k);
  }
  if (!any_mr) throw ContractError("at least one MR encoder (slot_types, slot_values, dialog_act) is required");
  if (has(EncoderKind::utterance) != (utterance_mode != UtteranceMode::none))
    throw ContractError("utterance encoder must be enabled iff utterance_mode != none");
  if (tasks.empty()) throw ContractError("at least one task is required");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (!valid_task_name(t)) throw ContractError("invalid task name '" + t + "' (use [a-z0-9_])");
    if (!names.insert(t).second) throw ContractError("task listed twice: " + t);
  }
  if (embedding_dim == 0 || hidden_dim == 0) throw ContractError("embedding_dim and hidden_dim must be positive");
  if (max_decode_len == 0) throw ContractError("max_decode_len must be positive");
}

Example make_input(const Instance& inst, const ModelConfig& config) {
  Example ex;
  ex.id = inst.id;
  for (EncoderKind k : config.encoders) {
    switch (k) {
      case EncoderKind::slot_types: ex.streams[k] = field_tokens(inst.mr, VocabField::slot_types); break;
      case EncoderKind::slot_values: ex.streams[k] = field_tokens(inst.mr, VocabField::slot_values); break;
      case EncoderKind::dialog_act: ex.streams[k] = field_tokens(inst.mr, VocabField::dialog_act); break;
      case EncoderKind::utterance:
        ex.streams[k] = field_tokens(inst.mr, config.utterance_mode == UtteranceMode::delex
                                                  ? VocabField::context_delex
                                                  : VocabField::context_lex);
        break;
    }
  }
  return ex;
}

Example make_example(const Instance& inst, const ModelConfig& config, std::size_t reference) {
  Example ex = make_input(inst, config);
  ex.target = target_tokens(inst.references.at(reference), inst.mr);
  return ex;
}

std::vector<Example> make_examples(const Corpus& corpus, const ModelConfig& config) {
  std::vector<Example> out;
  for (const Instance& inst : corpus.instances)
    for (std::size_t r = 0; r < inst.references.size(); ++r) out.push_back(make_example(inst, config, r));
  return out;
}

ModelVocabs build_model_vocabs(const ModelConfig& config,
                               const std::map<std::string, std::vector<Example>>& train_sets) {
  ModelVocabs v;
  std::map<EncoderKind, std::vector<std::vector<std::string>>> streams;
  std::vector<std::vector<std::string>> all_inputs;
  for (const auto& task : config.tasks) {
    auto it = train_sets.find(task);
    if (it == train_sets.end()) throw ContractError("no training examples for task " + task);
    std::vector<std::vector<std::string>> targets;
    for (const Example& ex : it->second) {
      targets.push_back(ex.target);
      for (EncoderKind k : config.encoders) {
        streams[k].push_back(ex.streams.at(k));
        all_inputs.push_back(ex.streams.at(k));
      }
    }
    v.targets[task] = Vocab::build(targets);
  }
  if (config.share_input_embeddings) {
    Vocab shared = Vocab::build(all_inputs);
    for (EncoderKind k : config.encoders) v.inputs[k] = shared;
  } else {
    for (EncoderKind k : config.encoders) v.inputs[k] = Vocab::build(streams[k]);
  }
  return v;
}

std::vector<std::uint8_t> StreamBatch::mask() const {
  std::vector<std::uint8_t> m(rows * cols, 0);
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) m[b * cols + t] = 1;
  return m;
}

std::vector<std::size_t> StreamBatch::column(std::size_t col) const {
  std::vector<std::size_t> out(rows);
  for (std::size_t b = 0; b < rows; ++b) out[b] = at(b, col);
  return out;
}

std::vector<double> log_softmax(std::span<const double> row) {
  double mx = row[0];
  for (double x : row) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : row) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

NlgModel::NlgModel(ModelConfig config, ModelVocabs vocabs) : config_(std::move(config)), vocabs_(std::move(vocabs)) {
  config_.validate();
  const std::size_t E = config_.embedding_dim, H = config_.hidden_dim, K = 2 * H;

  std::optional<Embedding> shared;
  if (config_.share_input_embeddings) {
    const Vocab& v = vocabs_.inputs.at(config_.encoders.front());
    shared = Embedding::create(store_, "enc_shared.embedding", v.size(), E);
  }
  for (EncoderKind k : config_.encoders) {
    auto it = vocabs_.inputs.find(k);
    if (it == vocabs_.inputs.end()) throw ContractError(std::string("missing input vocabulary for ") + encoder_name(k));
    const std::string prefix = std::string("enc_") + encoder_name(k);
    Embedding emb = shared ? *shared : Embedding::create(store_, prefix + ".embedding", it->second.size(), E);
    encoders_.push_back({k, emb, BiGruEncoder::create(store_, prefix, E, H)});
  }
  attn_mr_ = LuongAttention::create(store_, "attn_mr", H, K);
  std::size_t context_dim = K;
  if (config_.has(EncoderKind::utterance)) {
    attn_utt_ = LuongAttention::create(store_, "attn_utt", H, K);
    context_dim += K;
  }
  for (const auto& task : config_.tasks) {
    auto it = vocabs_.targets.find(task);
    if (it == vocabs_.targets.end()) throw ContractError("missing target vocabulary for task " + task);
    const std::size_t V = it->second.size();
    const std::string prefix = "dec_" + task;
    TaskDecoder d;
    d.embedding = Embedding::create(store_, prefix + ".embedding", V, E);
    d.init = Linear::create(store_, prefix + ".init", K, H);
    d.cell = GruCell::create(store_, prefix + ".cell", E + context_dim, H);
    d.out = Linear::create(store_, prefix + ".out", config_.context_to_output ? H + context_dim : H, V);
    decoders_.emplace(task, d);
  }
  store_.initialize(config_.seed);
}

const NlgModel::TaskDecoder& NlgModel::decoder(const std::string& task) const {
  auto it = decoders_.find(task);
  if (it == decoders_.end()) throw ContractError("unknown task '" + task + "'");
  return it->second;
}

const Vocab& NlgModel::target_vocab(const std::string& task) const {
  decoder(task);
  return vocabs_.targets.at(task);
}

std::vector<std::string> NlgModel::shared_parameter_paths() const {
  std::vector<std::string> out;
  for (const auto& p : store_.paths())
    if (p.rfind("dec_", 0) != 0) out.push_back(p);
  return out;
}

std::vector<std::string> NlgModel::decoder_parameter_paths(const std::string& task) const {
  decoder(task);
  return store_.paths_with_prefix("dec_" + task + ".");
}

std::vector<std::string> NlgModel::task_parameter_paths(const std::string& task) const {
  auto out = shared_parameter_paths();
  for (auto& p : decoder_parameter_paths(task)) out.push_back(std::move(p));
  std::sort(out.begin(), out.end());
  return out;
}

Batch NlgModel::make_batch(const std::string& task, const std::vector<Example>& examples) const {
  std::vector<const Example*> ptrs;
  for (const auto& ex : examples) ptrs.push_back(&ex);
  return make_batch(task, ptrs);
}

Batch NlgModel::make_batch(const std::string& task, const std::vector<const Example*>& examples) const {
  const Vocab& tv = target_vocab(task);
  if (examples.empty()) throw ContractError("make_batch: empty batch");
  Batch batch;
  batch.task = task;
  batch.size = examples.size();
  for (EncoderKind k : config_.encoders) {
    const Vocab& v = vocabs_.inputs.at(k);
    std::vector<std::vector<std::size_t>> seqs;
    for (const Example* ex : examples) {
      auto it = ex->streams.find(k);
      if (it == ex->streams.end())
        throw ContractError("example " + ex->id + " lacks the " + encoder_name(k) + " stream");
      auto ids = v.encode(it->second);
      if (ids.empty()) ids.push_back(Vocab::kPad);  // empty stream: a single PAD token
      seqs.push_back(std::move(ids));
    }
    batch.streams[k] = pad_stream(seqs);
  }
  std::vector<std::vector<std::size_t>> in, out;
  for (const Example* ex : examples) {
    auto ids = tv.encode(ex->target);
    std::vector<std::size_t> a{Vocab::kBos};
    a.insert(a.end(), ids.begin(), ids.end());
    ids.push_back(Vocab::kEos);
    in.push_back(std::move(a));
    out.push_back(std::move(ids));
  }
  batch.target_in = pad_stream(in);
  batch.target_out = pad_stream(out);
  return batch;
}

EncodedInputs NlgModel::encode_inputs(Graph& g, const Batch& batch) const {
  if (batch.streams.size() != encoders_.size())
    throw ContractError("encode_inputs: batch has " + std::to_string(batch.streams.size()) +
                        " streams, model expects " + std::to_string(encoders_.size()));
  EncodedInputs enc;
  enc.batch = batch.size;
  std::vector<Var> mr_states, mr_finals;
  std::vector<const StreamBatch*> mr_streams;
  for (const InputEncoder& e : encoders_) {
    auto it = batch.streams.find(e.kind);
    if (it == batch.streams.end())
      throw ContractError(std::string("encode_inputs: batch lacks the ") + encoder_name(e.kind) + " stream");
    const StreamBatch& s = it->second;
    if (s.rows != batch.size) throw ContractError("encode_inputs: stream batch size mismatch");
    std::vector<Var> inputs;
    for (std::size_t t = 0; t < s.cols; ++t) inputs.push_back(e.embedding.lookup(g, s.column(t)));
    EncoderOutput out = e.encoder.encode(g, inputs, s.lengths);
    enc.outputs[e.kind] = out;
    if (is_mr_stream(e.kind)) {
      mr_states.push_back(out.states);
      mr_finals.push_back(out.final);
      mr_streams.push_back(&s);
    } else {
      enc.utt_keys = out.states;
      enc.utt_mask = s.mask();
    }
  }
  enc.mr_keys = mr_states.size() == 1 ? mr_states[0] : g.concat(mr_states, 1);
  for (std::size_t b = 0; b < batch.size; ++b)
    for (const StreamBatch* s : mr_streams)
      for (std::size_t t = 0; t < s->cols; ++t) enc.mr_mask.push_back(t < s->lengths[b] ? 1 : 0);
  Var sum = mr_finals[0];
  for (std::size_t i = 1; i < mr_finals.size(); ++i) sum = g.add(sum, mr_finals[i]);
  enc.mr_final_mean = mr_finals.size() == 1 ? sum : g.scale(sum, 1.0 / static_cast<double>(mr_finals.size()));
  return enc;
}

Var NlgModel::initial_state(Graph& g, const std::string& task, const EncodedInputs& enc) const {
  return decoder(task).init.apply(g, enc.mr_final_mean);
}

DecoderStep NlgModel::decoder_step(Graph& g, const std::string& task, const std::vector<std::size_t>& y_prev,
                                   Var h_prev, const EncodedInputs& enc) const {
  const TaskDecoder& d = decoder(task);
  if (y_prev.size() != enc.batch) throw ContractError("decoder_step: y_prev size differs from batch size");
  if (attn_utt_.has_value() != enc.utt_keys.has_value())
    throw ContractError("decoder_step: utterance encoder states missing or unexpected");
  DecoderStep step;
  AttentionOutput mr = attn_mr_.attend(g, h_prev, enc.mr_keys, &enc.mr_mask);
  step.mr_weights = mr.weights;
  std::vector<Var> contexts{mr.context};
  if (attn_utt_) {
    AttentionOutput utt = attn_utt_->attend(g, h_prev, *enc.utt_keys, &enc.utt_mask);
    step.utt_weights = utt.weights;
    contexts.push_back(utt.context);
  }
  std::vector<Var> x{d.embedding.lookup(g, y_prev)};
  x.insert(x.end(), contexts.begin(), contexts.end());
  step.h_next = d.cell.step(g, g.concat(x, 1), h_prev);
  if (config_.context_to_output) {
    std::vector<Var> o{step.h_next};
    o.insert(o.end(), contexts.begin(), contexts.end());
    step.logits = d.out.apply(g, g.concat(o, 1));
  } else {
    step.logits = d.out.apply(g, step.h_next);
  }
  return step;
}

ForwardResult NlgModel::forward_loss(Graph& g, const Batch& batch) const {
  EncodedInputs enc = encode_inputs(g, batch);
  Var h = initial_state(g, batch.task, enc);
  const StreamBatch& in = batch.target_in;
  const StreamBatch& out = batch.target_out;
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  std::vector<std::uint8_t> mask;
  for (std::size_t t = 0; t < in.cols; ++t) {
    DecoderStep s = decoder_step(g, batch.task, in.column(t), h, enc);
    h = s.h_next;
    logits.push_back(s.logits);
    for (std::size_t b = 0; b < batch.size; ++b) {
      targets.push_back(out.at(b, t));
      mask.push_back(t < out.lengths[b] ? 1 : 0);
    }
  }
  Var all = logits.size() == 1 ? logits[0] : g.concat(logits, 0);
  ForwardResult r;
  const Tensor& lv = g.value(all);
  const std::size_t V = lv.dim(1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    ++r.tokens;
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (lv[i * V + v] > lv[i * V + best]) best = v;
    if (best == targets[i]) ++r.correct;
  }
  r.loss = g.cross_entropy(all, std::move(targets), std::move(mask));
  return r;
}

std::vector<double> NlgModel::log_probs(const Graph& g, Var logits, std::size_t row) const {
  const Tensor& t = g.value(logits);
  const std::size_t V = t.dim(1);
  return log_softmax(t.values().subspan(row * V, V));
}

std::vector<std::size_t> NlgModel::decode_greedy(const std::string& task, const Example& input) const {
  Graph g(false);
  Batch batch = make_batch(task, std::vector<const Example*>{&input});
  EncodedInputs enc = encode_inputs(g, batch);
  Var h = initial_state(g, task, enc);
  std::size_t prev = Vocab::kBos;
  std::vector<std::size_t> out;
  while (out.size() < config_.max_decode_len) {
    DecoderStep s = decoder_step(g, task, {prev}, h, enc);
    const auto lp = log_probs(g, s.logits, 0);
    std::size_t best = 0;
    for (std::size_t v = 1; v < lp.size(); ++v)
      if (lp[v] > lp[best]) best = v;
    if (best == Vocab::kEos) break;
    out.push_back(best);
    prev = best;
    h = s.h_next;
  }
  return out;
}

std::vector<BeamHypothesis> NlgModel::decode_beam(const std::string& task, const Example& input,
                                                  std::size_t beam_width) const {
  if (beam_width == 0) throw ContractError("decode_beam: beam width must be >= 1");
  Graph g(false);
  Batch batch = make_batch(task, std::vector<const Example*>{&input});
  EncodedInputs enc = encode_inputs(g, batch);
  Var h0 = initial_state(g, task, enc);
  auto step = [&](Var h, std::size_t token) {
    DecoderStep s = decoder_step(g, task, {token}, h, enc);
    return std::make_pair(log_probs(g, s.logits, 0), s.h_next);
  };
  return beam_search(h0, step, beam_width, config_.max_decode_len, Vocab::kBos, Vocab::kEos);
}

std::vector<std::string> NlgModel::tokens(const std::string& task, const std::vector<std::size_t>& ids) const {
  const Vocab& v = target_vocab(task);
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(v.token(id));
  return out;
}

}  // namespace qanlg
