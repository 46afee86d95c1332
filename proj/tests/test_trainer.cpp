#include <set>
#include <sstream>

#include "doctest.h"
#include "qanlg/trainer.hpp"

using namespace qanlg;

namespace {

ModelConfig tiny_config(std::vector<std::string> tasks = {"qa"}) {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.hidden_dim = 4;
  cfg.max_decode_len = 8;
  cfg.tasks = std::move(tasks);
  return cfg;
}

std::vector<Example> synth_examples(const ModelConfig& cfg, std::size_t groups, std::size_t per_group,
                                    std::uint64_t seed) {
  SynthConfig sc;
  sc.n_groups = groups;
  sc.instances_per_group = per_group;
  Corpus c = synth_corpus(sc, seed);
  // Main references only: one example per instance keeps counts predictable.
  std::vector<Example> out;
  for (const auto& inst : c.instances) out.push_back(make_example(inst, cfg, 0));
  return out;
}

NlgModel build(const ModelConfig& cfg, const std::map<std::string, TaskData>& data) {
  std::map<std::string, std::vector<Example>> sets;
  for (const auto& [task, d] : data) sets[task] = d.train;
  return NlgModel(cfg, build_model_vocabs(cfg, sets));
}

}  // namespace

TEST_CASE("batch_indices arithmetic, determinism, partition") {
  const auto b = batch_indices(70, 32, 1, 1);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 32);
  CHECK(b[1].size() == 32);
  CHECK(b[2].size() == 6);
  CHECK(batch_indices(70, 32, 1, 1) == b);
  CHECK(batch_indices(70, 32, 1, 2) != b);
  std::multiset<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 70);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 70);
  CHECK(*seen.rbegin() == 69);
  CHECK_THROWS_AS(batch_indices(10, 0, 1, 1), ContractError);
}

TEST_CASE("make_batches sizes") {
  const ModelConfig cfg = tiny_config();
  std::map<std::string, TaskData> data{{"qa", {synth_examples(cfg, 7, 10, 2), {}}}};
  const NlgModel model = build(cfg, data);
  const auto batches = make_batches(model, "qa", data["qa"].train, 32, 1, 1);
  REQUIRE(batches.size() == 3);
  CHECK(batches[2].size == 6);
  CHECK_THROWS_AS(make_batches(model, "qa", {}, 32, 1, 1), ContractError);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.patience = 0;
  CHECK_THROWS_AS(tc.validate(), ContractError);
}

TEST_CASE("multi-task schedule law") {
  const ModelConfig cfg = tiny_config({"a", "b"});
  std::map<std::string, TaskData> data;
  auto big = synth_examples(cfg, 5, 4, 3);   // 20 examples
  auto small = synth_examples(cfg, 5, 2, 4);  // 10 examples
  data["a"] = {big, {big[0]}};
  data["b"] = {small, {small[0]}};
  NlgModel model = build(cfg, data);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 2;
  const TrainHistory h = train(model, data, tc);
  REQUIRE(h.epochs.size() == 2);
  for (const auto& rec : h.epochs) {
    CHECK(rec.batches.at("a") == 20);
    CHECK(rec.batches.at("b") == 20);  // cycled
    REQUIRE(rec.schedule.size() == 40);
    for (std::size_t i = 0; i < rec.schedule.size(); ++i) CHECK(rec.schedule[i] == (i % 2 == 0 ? "a" : "b"));
  }
}

TEST_CASE("early stopping law") {
  const ModelConfig cfg = tiny_config();
  auto ex = synth_examples(cfg, 3, 4, 5);
  std::map<std::string, TaskData> data{{"qa", {ex, ex}}};
  NlgModel model = build(cfg, data);
  TrainConfig tc;
  tc.patience = 5;
  tc.min_delta = 1e9;  // nothing after epoch 1 counts as improvement
  tc.max_epochs = 50;
  const TrainHistory h = train(model, data, tc);
  CHECK(h.epochs.size() == 6);
  CHECK(h.best_epoch == 1);
  CHECK(h.stop_reason == "early_stopping");
  // The best snapshot is restored.
  CHECK(evaluate_loss(model, ex, "qa") == doctest::Approx(h.epochs[0].val_loss).epsilon(1e-12));

  std::map<std::string, TaskData> bad{{"qa", {ex, {}}}};
  CHECK_THROWS_AS(train(model, bad, tc), ContractError);
}

TEST_CASE("best val loss is the recorded minimum and callback stops") {
  const ModelConfig cfg = tiny_config();
  auto ex = synth_examples(cfg, 3, 4, 6);
  std::map<std::string, TaskData> data{{"qa", {ex, ex}}};
  NlgModel model = build(cfg, data);
  TrainConfig tc;
  tc.max_epochs = 30;
  tc.learning_rate = 0.01;
  const TrainHistory h = train(model, data, tc, [](const EpochRecord& r) { return r.epoch < 12; });
  CHECK(h.stop_reason == "callback");
  CHECK(h.epochs.size() == 12);
  double best = 1e300;
  for (const auto& r : h.epochs) best = std::min(best, r.val_loss);
  CHECK(h.best_val_loss == best);
  CHECK(h.epochs[h.best_epoch - 1].val_loss == best);
  CHECK(h.epochs.back().val_loss < h.epochs.front().val_loss);
}

TEST_CASE("evaluate_loss batch-size invariance and forward_loss agreement") {
  const ModelConfig cfg = tiny_config();
  auto ex = synth_examples(cfg, 4, 5, 7);
  std::map<std::string, TaskData> data{{"qa", {ex, ex}}};
  const NlgModel model = build(cfg, data);
  const double l1 = evaluate_loss(model, ex, "qa", 1);
  const double l32 = evaluate_loss(model, ex, "qa", 32);
  const double l7 = evaluate_loss(model, ex, "qa", 7);
  CHECK(std::abs(l1 - l32) < 1e-6);
  CHECK(std::abs(l7 - l32) < 1e-6);
  Graph g(false);
  const double whole = g.value(model.forward_loss(g, model.make_batch("qa", ex)).loss).item();
  CHECK(std::abs(whole - evaluate_loss(model, ex, "qa", ex.size())) < 1e-9);
}

TEST_CASE("training is bitwise reproducible") {
  const ModelConfig cfg = tiny_config();
  auto ex = synth_examples(cfg, 3, 4, 8);
  std::map<std::string, TaskData> data{{"qa", {ex, ex}}};
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 4;
  NlgModel a = build(cfg, data), b = build(cfg, data);
  train(a, data, tc);
  train(b, data, tc);
  CHECK(a.parameters().snapshot() == b.parameters().snapshot());
}

TEST_CASE("checkpoint round trip") {
  ModelConfig cfg = tiny_config();
  cfg.encoders.push_back(EncoderKind::utterance);
  cfg.utterance_mode = UtteranceMode::lex;
  auto ex = synth_examples(cfg, 3, 4, 9);
  std::map<std::string, TaskData> data{{"qa", {ex, ex}}};
  NlgModel model = build(cfg, data);
  TrainConfig tc;
  tc.max_epochs = 2;
  const TrainHistory h = train(model, data, tc);

  std::stringstream ss;
  write_checkpoint(model, h, ss);
  const std::string bytes = ss.str();
  LoadedModel loaded = read_checkpoint(ss);
  CHECK(loaded.model.config() == model.config());
  CHECK(loaded.model.vocabs() == model.vocabs());
  CHECK(loaded.model.parameters().snapshot() == model.parameters().snapshot());
  CHECK(loaded.history.best_epoch == h.best_epoch);
  CHECK(loaded.history.epochs.size() == h.epochs.size());
  CHECK(evaluate_loss(loaded.model, ex, "qa") == evaluate_loss(model, ex, "qa"));
  CHECK(loaded.model.decode_greedy("qa", ex[0]) == model.decode_greedy("qa", ex[0]));

  std::stringstream again;
  write_checkpoint(loaded.model, loaded.history, again);
  CHECK(again.str() == bytes);

  // Corruptions.
  std::string bad_header = bytes;
  bad_header.replace(bad_header.find("header {"), 8, "header [");
  std::istringstream s1(bad_header);
  CHECK_THROWS_AS(read_checkpoint(s1), LoadError);
  std::istringstream s2(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(s2), LoadError);
  std::istringstream s3("not a checkpoint\n");
  CHECK_THROWS_AS(read_checkpoint(s3), LoadError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), DataError);
}

TEST_CASE("history tsv") {
  TrainHistory h;
  EpochRecord r;
  r.epoch = 1;
  r.train_loss["qa"] = 1.5;
  r.dev_loss["qa"] = 2.0;
  r.train_accuracy["qa"] = 0.5;
  r.batches["qa"] = 1;
  r.val_loss = 2.0;
  h.epochs.push_back(r);
  std::ostringstream out;
  write_history(h, out);
  const std::string s = out.str();
  CHECK(s.find('\t') != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 3);  // header, one row, trailer
  CHECK(s.find("# best_epoch") != std::string::npos);
}
