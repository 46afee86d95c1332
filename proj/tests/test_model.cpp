#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "qanlg/model.hpp"

using namespace qanlg;

namespace {

Instance kentucky() {
  Instance inst;
  inst.id = "q1";
  inst.group_id = "g1";
  inst.mr.slots = {{"timepoint", "1792"}, {"objStr", "kentucky"}, {"claStr", "state"}, {"relStr", "founded"}};
  inst.mr.context = "when was the state of kentucky founded";
  inst.main_reference = "kentucky formed in 1792";
  inst.references = {inst.main_reference, "1792"};
  return inst;
}

Instance short_instance() {
  Instance inst;
  inst.id = "q2";
  inst.group_id = "g2";
  inst.mr.slots = {{"timepoint", "1845"}, {"objStr", "texas"}};
  inst.main_reference = "texas formed in 1845";
  inst.references = {inst.main_reference};
  return inst;
}

struct Fixture {
  ModelConfig config;
  std::map<std::string, std::vector<Example>> sets;

  explicit Fixture(ModelConfig cfg, std::size_t groups = 4) : config(std::move(cfg)) {
    SynthConfig sc;
    sc.n_groups = groups;
    sc.instances_per_group = 5;
    const Corpus c = synth_corpus(sc, 17);
    for (const auto& task : config.tasks) sets[task] = make_examples(c, config);
  }
  NlgModel model() const { return NlgModel(config, build_model_vocabs(config, sets)); }
};

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.embedding_dim = 3;
  cfg.hidden_dim = 3;
  cfg.max_decode_len = 6;
  return cfg;
}

std::vector<Tensor*> all_params(ParameterStore& store) {
  std::vector<Tensor*> out;
  for (const auto& p : store.paths()) out.push_back(&store.get(p));
  return out;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("config parsing helpers and validation") {
  CHECK(parse_encoder_kind("slot_values") == EncoderKind::slot_values);
  CHECK_THROWS_AS(parse_encoder_kind("bogus"), ContractError);
  CHECK(parse_utterance_mode("delex") == UtteranceMode::delex);
  ModelConfig cfg;
  CHECK(cfg.architecture() == 'A');
  cfg.encoders.push_back(EncoderKind::utterance);
  cfg.utterance_mode = UtteranceMode::lex;
  CHECK(cfg.architecture() == 'B');
  cfg.tasks = {"qa", "sfx"};
  CHECK(cfg.architecture() == 'C');
  CHECK_NOTHROW(cfg.validate());
  cfg.tasks = {"Q A"};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("input streams") {
  ModelConfig cfg;
  cfg.encoders = {EncoderKind::slot_types, EncoderKind::slot_values, EncoderKind::dialog_act, EncoderKind::utterance};
  cfg.utterance_mode = UtteranceMode::lex;
  const Example ex = make_input(kentucky(), cfg);
  CHECK(ex.streams.at(EncoderKind::slot_types) ==
        std::vector<std::string>{"timepoint", "objStr", "claStr", "relStr"});
  CHECK(ex.streams.at(EncoderKind::dialog_act) == std::vector<std::string>{"inform"});
  CHECK(ex.streams.at(EncoderKind::slot_values).front() == "1792");

  cfg.utterance_mode = UtteranceMode::delex;
  const Example dx = make_input(kentucky(), cfg);
  const auto& utt = dx.streams.at(EncoderKind::utterance);
  CHECK(std::find(utt.begin(), utt.end(), "OBJSTR_1") != utt.end());

  // No context: the utterance stream becomes a single PAD and the encoder still runs.
  Instance no_ctx = short_instance();
  const Example e2 = make_example(no_ctx, cfg, 0);
  CHECK(e2.streams.at(EncoderKind::utterance).empty());
  std::map<std::string, std::vector<Example>> sets{{"qa", {make_example(kentucky(), cfg, 0), e2}}};
  NlgModel model(cfg, build_model_vocabs(cfg, sets));
  const Batch b = model.make_batch("qa", std::vector<Example>{e2});
  const StreamBatch& u = b.streams.at(EncoderKind::utterance);
  CHECK(u.cols == 1);
  CHECK(u.at(0, 0) == Vocab::kPad);
  Graph g(false);
  const auto enc = model.encode_inputs(g, b);
  CHECK(enc.utt_keys.has_value());
}

TEST_CASE("batch padding law") {
  ModelConfig cfg;
  std::map<std::string, std::vector<Example>> sets{
      {"qa", {make_example(kentucky(), cfg, 0), make_example(short_instance(), cfg, 0)}}};
  NlgModel model(cfg, build_model_vocabs(cfg, sets));
  const Batch b = model.make_batch("qa", sets["qa"]);
  const StreamBatch& st = b.streams.at(EncoderKind::slot_types);
  CHECK(st.rows == 2);
  CHECK(st.cols == 4);
  const auto mask = st.mask();
  CHECK(std::vector<std::uint8_t>(mask.begin() + 4, mask.end()) == std::vector<std::uint8_t>{1, 1, 0, 0});
  CHECK(b.target_in.at(0, 0) == Vocab::kBos);
  CHECK(b.target_out.at(0, b.target_out.lengths[0] - 1) == Vocab::kEos);
}

TEST_CASE("masked attention weights") {
  ModelConfig cfg;
  std::map<std::string, std::vector<Example>> sets{
      {"qa", {make_example(kentucky(), cfg, 0), make_example(short_instance(), cfg, 0)}}};
  NlgModel model(cfg, build_model_vocabs(cfg, sets));
  const Batch b = model.make_batch("qa", sets["qa"]);
  Graph g(false);
  const auto enc = model.encode_inputs(g, b);
  const Var h0 = model.initial_state(g, "qa", enc);
  const auto step = model.decoder_step(g, "qa", b.target_in.column(0), h0, enc);
  const Tensor& w = g.value(step.mr_weights);
  const std::size_t s = w.dim(1);
  REQUIRE(enc.mr_mask.size() == 2 * s);
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double x = w[r * s + j];
      if (!enc.mr_mask[r * s + j]) CHECK(x == 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("single length-1 stream gets all attention") {
  ModelConfig cfg;
  cfg.encoders = {EncoderKind::dialog_act};
  std::map<std::string, std::vector<Example>> sets{{"qa", {make_example(kentucky(), cfg, 0)}}};
  NlgModel model(cfg, build_model_vocabs(cfg, sets));
  const Batch b = model.make_batch("qa", sets["qa"]);
  Graph g(false);
  const auto enc = model.encode_inputs(g, b);
  const auto step = model.decoder_step(g, "qa", b.target_in.column(0), model.initial_state(g, "qa", enc), enc);
  CHECK(g.value(step.mr_weights)[0] == 1.0);
  CHECK_THROWS_AS(model.decoder_step(g, "nope", b.target_in.column(0), model.initial_state(g, "qa", enc), enc),
                  ContractError);
}

TEST_CASE("decoder step gradient") {
  for (bool with_utt : {false, true}) {
    ModelConfig cfg = small_config();
    if (with_utt) {
      cfg.encoders.push_back(EncoderKind::utterance);
      cfg.utterance_mode = UtteranceMode::lex;
    }
    std::map<std::string, std::vector<Example>> sets{
        {"qa", {make_example(kentucky(), cfg, 0), make_example(short_instance(), cfg, 0)}}};
    NlgModel model(cfg, build_model_vocabs(cfg, sets));
    model.parameters().initialize(3, 0.5);
    const Batch b = model.make_batch("qa", sets["qa"]);
    std::mt19937_64 rng(5);
    const std::size_t v = model.target_vocab("qa").size();
    Tensor coef = random_tensor({2, v}, rng);
    auto params = all_params(model.parameters());
    auto fn = [&](Graph& g) {
      const auto enc = model.encode_inputs(g, b);
      const auto step = model.decoder_step(g, "qa", b.target_in.column(0), model.initial_state(g, "qa", enc), enc);
      return g.add(g.sum(g.mul(step.logits, g.constant(coef))), g.sum(g.tanh(step.h_next)));
    };
    CHECK(grad_check(params, fn) < 1e-4);
  }
}

TEST_CASE("forward loss gradient") {
  ModelConfig cfg = small_config();
  std::map<std::string, std::vector<Example>> sets{
      {"qa", {make_example(kentucky(), cfg, 0), make_example(short_instance(), cfg, 0)}}};
  NlgModel model(cfg, build_model_vocabs(cfg, sets));
  const Batch b = model.make_batch("qa", sets["qa"]);
  auto params = all_params(model.parameters());
  auto fn = [&](Graph& g) { return model.forward_loss(g, b).loss; };
  // Range 1.0 keeps gradient entries well above finite-difference rounding (~1e-11).
  for (std::uint64_t seed : {1, 2, 3}) {
    model.parameters().initialize(seed, 1.0);
    CHECK(grad_check(params, fn) < 1e-4);
  }
}

TEST_CASE("untrained loss near ln V, mean invariance, non-negative") {
  Fixture fx(ModelConfig{});
  const NlgModel model = fx.model();
  const auto& ex = fx.sets["qa"];
  const std::size_t v = model.target_vocab("qa").size();
  const Batch b = model.make_batch("qa", ex);
  Graph g(false);
  const auto r = model.forward_loss(g, b);
  const double loss = g.value(r.loss).item();
  CHECK(loss >= 0.0);
  CHECK(std::abs(loss - std::log(static_cast<double>(v))) < 0.15 * std::log(static_cast<double>(v)));

  std::vector<Example> doubled;
  for (const auto& e : ex) {
    doubled.push_back(e);
    doubled.push_back(e);
  }
  Graph g2(false);
  const double loss2 = g2.value(model.forward_loss(g2, model.make_batch("qa", doubled)).loss).item();
  CHECK(std::abs(loss - loss2) < 1e-9);
  CHECK(r.tokens > 0);
}

TEST_CASE("greedy decoding cutoff and determinism") {
  ModelConfig cfg;
  cfg.max_decode_len = 3;
  Fixture fx(cfg);
  const NlgModel model = fx.model();
  for (const auto& ex : fx.sets["qa"]) CHECK(model.decode_greedy("qa", ex).size() <= 3);
  const NlgModel again = fx.model();
  CHECK(model.decode_greedy("qa", fx.sets["qa"][0]) == again.decode_greedy("qa", fx.sets["qa"][0]));
}

TEST_CASE("beam 1 equals greedy and beam dominates greedy") {
  ModelConfig cfg = small_config();
  cfg.max_decode_len = 8;
  Fixture fx(cfg);
  NlgModel model = fx.model();
  model.parameters().initialize(21, 0.6);
  for (std::size_t i = 0; i < 10; ++i) {
    const Example& ex = fx.sets["qa"][i];
    const auto greedy = model.decode_greedy("qa", ex);
    const auto b1 = model.decode_beam("qa", ex, 1);
    REQUIRE(!b1.empty());
    CHECK(b1[0].tokens == greedy);
    const auto b4 = model.decode_beam("qa", ex, 4);
    CHECK(b4[0].score >= b1[0].score);
  }
  CHECK_THROWS_AS(model.decode_beam("qa", fx.sets["qa"][0], 0), ContractError);
}

TEST_CASE("beam search matches exhaustive enumeration on a toy model") {
  // Tokens: 0 = EOS, 1 = a, 2 = b, 3 = BOS. The state is the prefix.
  using Prefix = std::vector<std::size_t>;
  auto probs = [](const Prefix& p) -> std::vector<double> {
    if (p.empty()) return {0.1, 0.5, 0.4};
    if (p.size() == 1) return p[0] == 1 ? std::vector<double>{0.3, 0.35, 0.35} : std::vector<double>{0.9, 0.05, 0.05};
    return {0.5, 0.25, 0.25};
  };
  // The state is the prefix so far; `last` is the token just emitted.
  auto step_with_token = [&](const Prefix& p, std::size_t last) {
    Prefix next = p;
    if (last != 3) next.push_back(last);
    auto pr = probs(next);
    std::vector<double> lp;
    for (double x : pr) lp.push_back(std::log(x));
    return std::pair<std::vector<double>, Prefix>{lp, next};
  };
  const std::size_t max_len = 2;

  // Enumerate every sequence of length <= max_len ending in EOS.
  double best_score = -1e300;
  Prefix best;
  std::function<void(Prefix, double)> walk = [&](Prefix p, double lp) {
    const auto pr = probs(p);
    const double s = (lp + std::log(pr[0])) / static_cast<double>(p.size() + 1);
    if (s > best_score) {
      best_score = s;
      best = p;
    }
    if (p.size() == max_len) return;
    for (std::size_t t = 1; t < 3; ++t) {
      Prefix q = p;
      q.push_back(t);
      walk(q, lp + std::log(pr[t]));
    }
  };
  walk({}, 0.0);
  CHECK(best == Prefix{2});

  const auto beam = beam_search(Prefix{}, step_with_token, 2, max_len, 3, 0);
  REQUIRE(!beam.empty());
  CHECK(beam[0].tokens == best);
  CHECK(beam[0].score == doctest::Approx(best_score).epsilon(1e-12));

  // Greedy picks a, then a (tie broken by lowest id), and scores below the optimum.
  const auto greedy = beam_search(Prefix{}, step_with_token, 1, max_len, 3, 0);
  CHECK(greedy[0].tokens == Prefix{1, 1});
  CHECK(greedy[0].score < best_score);
  CHECK_THROWS_AS(beam_search(Prefix{}, step_with_token, 0, max_len, 3, 0), ContractError);
}

TEST_CASE("architecture C parameter sharing") {
  ModelConfig cfg = small_config();
  cfg.tasks = {"qa", "sfx"};
  Fixture fx(cfg);
  NlgModel model = fx.model();
  const auto shared = model.shared_parameter_paths();
  const auto dec_b = model.decoder_parameter_paths("sfx");
  REQUIRE(!shared.empty());
  REQUIRE(!dec_b.empty());
  for (const auto& p : model.decoder_parameter_paths("qa"))
    CHECK(std::find(shared.begin(), shared.end(), p) == shared.end());

  const auto before = model.parameters().snapshot();
  const auto paths = model.task_parameter_paths("qa");
  model.parameters().zero_grad();
  Graph g;
  const auto r = model.forward_loss(g, model.make_batch("qa", fx.sets["qa"]));
  g.backward(r.loss);
  Adam adam;
  adam.step(model.parameters(), paths);
  const auto after = model.parameters().snapshot();

  bool shared_changed = false;
  for (const auto& p : shared) shared_changed |= before.at(p) != after.at(p);
  CHECK(shared_changed);
  for (const auto& p : dec_b) CHECK(before.at(p) == after.at(p));
  CHECK_THROWS_AS(model.decoder_parameter_paths("missing"), ContractError);
  CHECK_THROWS_AS(model.make_batch("missing", fx.sets["qa"]), ContractError);
}

TEST_CASE("bitwise deterministic logits") {
  Fixture fx(small_config());
  const NlgModel a = fx.model();
  const NlgModel b = fx.model();
  const Batch ba = a.make_batch("qa", fx.sets["qa"]);
  Graph ga(false), gb(false);
  const auto ea = a.encode_inputs(ga, ba);
  const auto eb = b.encode_inputs(gb, ba);
  const auto sa = a.decoder_step(ga, "qa", ba.target_in.column(0), a.initial_state(ga, "qa", ea), ea);
  const auto sb = b.decoder_step(gb, "qa", ba.target_in.column(0), b.initial_state(gb, "qa", eb), eb);
  const auto va = ga.value(sa.logits).values(), vb = gb.value(sb.logits).values();
  CHECK(std::vector<double>(va.begin(), va.end()) == std::vector<double>(vb.begin(), vb.end()));
}
