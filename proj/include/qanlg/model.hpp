#pragma once

// Encoder-decoder assembly for the three architectures:
//   A  MR encoders (slot types / values / DA) with one attention over their concatenated states
//   B  A plus a previous-utterance encoder with its own attention
//   C  encoders shared across tasks, one decoder per task

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qanlg/data.hpp"
#include "qanlg/errors.hpp"
#include "qanlg/nn.hpp"

namespace qanlg {

enum class EncoderKind { slot_types, slot_values, dialog_act, utterance };
enum class UtteranceMode { none, lex, delex };

const char* encoder_name(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& name);
const char* utterance_mode_name(UtteranceMode mode);
UtteranceMode parse_utterance_mode(const std::string& name);

struct ModelConfig {
  std::vector<EncoderKind> encoders{EncoderKind::slot_types, EncoderKind::slot_values};
  UtteranceMode utterance_mode = UtteranceMode::none;
  std::vector<std::string> tasks{"qa"};
  std::size_t embedding_dim = 50;
  std::size_t hidden_dim = 64;
  std::size_t max_decode_len = 40;
  std::uint64_t seed = 1;
  // One embedding table for every input stream instead of one per encoder.
  bool share_input_embeddings = false;
  // Feed c_MR / c_Utt to the output projection as well as the decoder input.
  bool context_to_output = true;

  bool has(EncoderKind kind) const;
  bool multitask() const { return tasks.size() >= 2; }
  // 'A', 'B' or 'C'.
  char architecture() const;
  // Throws ContractError naming the broken rule.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Tokenized model input (and optionally target) for one MR.
struct Example {
  std::string id;
  std::map<EncoderKind, std::vector<std::string>> streams;
  std::vector<std::string> target;  // delexicalized tokens, without BOS/EOS
};

Example make_input(const Instance& inst, const ModelConfig& config);
Example make_example(const Instance& inst, const ModelConfig& config, std::size_t reference);
// One example per (instance, reference) pair.
std::vector<Example> make_examples(const Corpus& corpus, const ModelConfig& config);

struct ModelVocabs {
  std::map<EncoderKind, Vocab> inputs;
  std::map<std::string, Vocab> targets;  // per task

  bool operator==(const ModelVocabs&) const = default;
};

ModelVocabs build_model_vocabs(const ModelConfig& config,
                               const std::map<std::string, std::vector<Example>>& train_sets);

struct StreamBatch {
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> ids;  // rows × cols, PAD beyond each length
  std::vector<std::size_t> lengths;

  std::size_t at(std::size_t row, std::size_t col) const { return ids[row * cols + col]; }
  std::vector<std::uint8_t> mask() const;
  std::vector<std::size_t> column(std::size_t col) const;
};

struct Batch {
  std::string task;
  std::size_t size = 0;
  std::map<EncoderKind, StreamBatch> streams;
  StreamBatch target_in;   // BOS y1 .. yn
  StreamBatch target_out;  // y1 .. yn EOS
};

struct EncodedInputs {
  std::size_t batch = 0;
  std::map<EncoderKind, EncoderOutput> outputs;
  Var mr_keys;  // [B × S_mr × 2H], MR streams concatenated in time
  std::vector<std::uint8_t> mr_mask;
  std::optional<Var> utt_keys;
  std::vector<std::uint8_t> utt_mask;
  Var mr_final_mean;  // [B × 2H]
};

struct DecoderStep {
  Var logits;  // [B × V]
  Var h_next;
  Var mr_weights;
  std::optional<Var> utt_weights;
};

struct ForwardResult {
  Var loss;
  std::size_t tokens = 0;
  std::size_t correct = 0;  // argmax == gold
};

struct BeamHypothesis {
  std::vector<std::size_t> tokens;  // without BOS/EOS
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / (tokens + 1 if finished)
  bool finished = false;
};

class NlgModel {
 public:
  NlgModel(ModelConfig config, ModelVocabs vocabs);
  NlgModel(const NlgModel&) = delete;
  NlgModel& operator=(const NlgModel&) = delete;
  NlgModel(NlgModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const ModelVocabs& vocabs() const { return vocabs_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const Vocab& target_vocab(const std::string& task) const;

  std::vector<std::string> shared_parameter_paths() const;
  std::vector<std::string> decoder_parameter_paths(const std::string& task) const;
  // Shared plus the task's own decoder.
  std::vector<std::string> task_parameter_paths(const std::string& task) const;

  Batch make_batch(const std::string& task, const std::vector<const Example*>& examples) const;
  Batch make_batch(const std::string& task, const std::vector<Example>& examples) const;

  EncodedInputs encode_inputs(Graph& g, const Batch& batch) const;
  Var initial_state(Graph& g, const std::string& task, const EncodedInputs& enc) const;
  DecoderStep decoder_step(Graph& g, const std::string& task, const std::vector<std::size_t>& y_prev,
                           Var h_prev, const EncodedInputs& enc) const;
  ForwardResult forward_loss(Graph& g, const Batch& batch) const;

  std::vector<std::size_t> decode_greedy(const std::string& task, const Example& input) const;
  std::vector<BeamHypothesis> decode_beam(const std::string& task, const Example& input,
                                          std::size_t beam_width) const;
  std::vector<std::string> tokens(const std::string& task, const std::vector<std::size_t>& ids) const;

 private:
  struct InputEncoder {
    EncoderKind kind;
    Embedding embedding;
    BiGruEncoder encoder;
  };
  struct TaskDecoder {
    Embedding embedding;
    Linear init;
    GruCell cell;
    Linear out;
  };

  const TaskDecoder& decoder(const std::string& task) const;
  std::vector<double> log_probs(const Graph& g, Var logits, std::size_t row) const;

  ModelConfig config_;
  ModelVocabs vocabs_;
  ParameterStore store_;
  std::vector<InputEncoder> encoders_;
  LuongAttention attn_mr_;
  std::optional<LuongAttention> attn_utt_;
  std::map<std::string, TaskDecoder> decoders_;
};

// Log-softmax of one row of values.
std::vector<double> log_softmax(std::span<const double> row);

// Beam search over a step function step(state, token) -> (log-probs, next state).
// Hypotheses finish at EOS or when max_len tokens were produced; finished ones
// are ranked by log_prob / length (EOS counted), ties by log_prob then tokens.
// The greedy path is always added to the pool, so the top score never falls
// below greedy's (plain beam search does not guarantee that).
template <class State, class StepFn>
std::vector<BeamHypothesis> beam_search(State start, StepFn step, std::size_t beam_width, std::size_t max_len,
                                        std::size_t bos, std::size_t eos) {
  if (beam_width == 0) throw ContractError("beam_search: beam width must be >= 1");
  BeamHypothesis greedy;
  {
    State state = start;
    std::size_t last = bos;
    for (std::size_t t = 0;; ++t) {
      auto [lp, next] = step(state, last);
      std::size_t best = eos;
      if (t < max_len)
        for (std::size_t v = 0; v < lp.size(); ++v)
          if (lp[v] > lp[best] || (lp[v] == lp[best] && v < best)) best = v;
      greedy.log_prob += lp[best];
      if (best == eos) break;
      greedy.tokens.push_back(best);
      state = std::move(next);
      last = best;
    }
    greedy.finished = true;
    greedy.score = greedy.log_prob / static_cast<double>(greedy.tokens.size() + 1);
  }
  struct Live {
    BeamHypothesis hyp;
    State state;
    std::size_t last;
  };
  struct Candidate {
    double log_prob;
    double step_lp;
    std::size_t parent;
    std::size_t token;
  };
  auto rank = [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<Live> live;
  live.push_back({BeamHypothesis{}, std::move(start), bos});
  std::vector<BeamHypothesis> finished;
  for (std::size_t t = 0; t <= max_len && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    std::vector<State> next_states;
    for (std::size_t i = 0; i < live.size(); ++i) {
      auto [lp, next] = step(live[i].state, live[i].last);
      next_states.push_back(std::move(next));
      for (std::size_t v = 0; v < lp.size(); ++v) {
        // Only EOS is allowed once max_len tokens exist.
        if (t == max_len && v != eos) continue;
        cands.push_back({live[i].hyp.log_prob + lp[v], lp[v], i, v});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.step_lp != b.step_lp) return a.step_lp > b.step_lp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Live> next_live;
    for (const Candidate& c : cands) {
      if (next_live.size() >= beam_width) break;
      BeamHypothesis h = live[c.parent].hyp;
      h.log_prob = c.log_prob;
      if (c.token == eos) {
        h.finished = true;
        h.score = h.log_prob / static_cast<double>(h.tokens.size() + 1);
        finished.push_back(std::move(h));
        if (finished.size() >= beam_width) break;
        continue;
      }
      h.tokens.push_back(c.token);
      h.score = h.log_prob / static_cast<double>(h.tokens.size());
      next_live.push_back({std::move(h), next_states[c.parent], c.token});
    }
    if (finished.size() >= beam_width) break;
    live = std::move(next_live);
  }
  if (std::none_of(finished.begin(), finished.end(),
                   [&](const BeamHypothesis& h) { return h.tokens == greedy.tokens; }))
    finished.push_back(std::move(greedy));
  std::sort(finished.begin(), finished.end(), rank);
  return finished;
}

}  // namespace qanlg
