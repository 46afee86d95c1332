#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "qanlg/data.hpp"
#include "qanlg/errors.hpp"

using namespace qanlg;

namespace {

std::vector<Slot> kentucky_slots() {
  return {{"timepoint", "1792"}, {"objStr", "kentucky"}, {"claStr", "state"}, {"relStr", "founded"}};
}

Instance kentucky_instance() {
  Instance inst;
  inst.id = "q1";
  inst.group_id = "g1";
  inst.mr.slots = kentucky_slots();
  inst.mr.context = "when was the state of kentucky founded";
  inst.main_reference = "kentucky formed in 1792";
  inst.references = {inst.main_reference, "1792"};
  return inst;
}

const SlotAlignment& slot_at(const Alignment& a, std::size_t i) {
  const SlotAlignment* s = a.find(i);
  REQUIRE(s != nullptr);
  return *s;
}

Corpus equal_groups(std::size_t groups, std::size_t per_group) {
  Corpus c;
  c.name = "eq";
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < per_group; ++i) {
      Instance inst;
      inst.id = "g" + std::to_string(g) + "_" + std::to_string(i);
      inst.group_id = "g" + std::to_string(g);
      inst.mr.slots = {{"timepoint", std::to_string(1700 + i)}};
      inst.main_reference = std::to_string(1700 + i);
      inst.references = {inst.main_reference};
      c.instances.push_back(inst);
    }
  c.refresh_inventories();
  return c;
}

}  // namespace

TEST_CASE("delexicalize kentucky sentence") {
  const auto r = delexicalize("kentucky formed in 1792", kentucky_slots());
  CHECK(r.text == "OBJSTR_1 formed in TIMEPOINT_1");
  CHECK(slot_at(r.alignment, 0).status == AlignStatus::delexicalized);
  CHECK(slot_at(r.alignment, 1).status == AlignStatus::delexicalized);
  CHECK(slot_at(r.alignment, 2).status == AlignStatus::missing);
  CHECK(slot_at(r.alignment, 3).status == AlignStatus::lexical_miss);
  CHECK(r.alignment.realized_count() == 2);
}

TEST_CASE("delexicalize entity-only answer") {
  const auto r = delexicalize("1792", kentucky_slots());
  CHECK(r.text == "TIMEPOINT_1");
  CHECK(r.alignment.realized_count() == 1);
  CHECK(slot_at(r.alignment, 0).status == AlignStatus::delexicalized);
}

TEST_CASE("delexicalize without matches is a no-op") {
  const auto r = delexicalize("nothing to see here", kentucky_slots());
  CHECK(r.text == "nothing to see here");
  CHECK(r.alignment.realized_count() == 0);
}

TEST_CASE("delexicalize numbers same-type slots in MR order and prefers longest match") {
  std::vector<Slot> slots = {{"person", "john"}, {"person", "john smith"}};
  const auto r = delexicalize("john smith met john", slots);
  CHECK(r.text == "PERSON_2 met PERSON_1");
  CHECK(relexicalize(r.text, slots) == "john smith met john");
}

TEST_CASE("binary and relation slots stay lexical") {
  std::vector<Slot> slots = {{"kidsallowed", "no"}, {"name", "red door cafe"}, {"relStr", "founded"}};
  CHECK(slot_kind(slots[0]) == SlotKind::binary);
  CHECK(slot_kind(slots[2]) == SlotKind::relation);
  const auto r = delexicalize("red door cafe was founded and says no", slots);
  CHECK(r.text == "NAME_1 was founded and says no");
  CHECK(slot_at(r.alignment, 0).status == AlignStatus::lexical_match);
  CHECK(slot_at(r.alignment, 2).status == AlignStatus::lexical_match);
}

TEST_CASE("relexicalize") {
  CHECK(relexicalize("OBJSTR_1 formed in TIMEPOINT_1", kentucky_slots()) == "kentucky formed in 1792");
  CHECK(relexicalize("no placeholders", kentucky_slots()) == "no placeholders");
  std::vector<Slot> one = {{"humanBeing", "ada"}};
  CHECK_THROWS_AS(relexicalize("HUMANBEING_2 is here", one), UnresolvedPlaceholderError);
  try {
    relexicalize("HUMANBEING_2 is here", one);
  } catch (const UnresolvedPlaceholderError& e) {
    CHECK(std::string(e.what()).find("HUMANBEING_2") != std::string::npos);
  }
}

TEST_CASE("delex/relex round trip on synthetic data") {
  SynthConfig cfg;
  cfg.n_groups = 10;
  const Corpus c = synth_corpus(cfg, 3);
  for (const auto& inst : c.instances) {
    const auto r = delexicalize(inst.main_reference, inst.mr.slots);
    CHECK(relexicalize(r.text, inst.mr.slots) == inst.main_reference);
  }
}

TEST_CASE("align_filter") {
  Corpus c;
  c.instances.push_back(kentucky_instance());
  Instance stray = kentucky_instance();
  stray.id = "q2";
  stray.mr.slots = {{"timepoint", "1845"}, {"objStr", "texas"}};
  stray.main_reference = "kentucky joined in 1845";  // kentucky is not in this MR
  stray.references = {stray.main_reference};
  c.instances.push_back(stray);
  Instance silent = kentucky_instance();
  silent.id = "q3";
  silent.main_reference = "i do not know";
  silent.references = {silent.main_reference};
  c.instances.push_back(silent);
  c.refresh_inventories();

  const auto r = align_filter(c);
  REQUIRE(r.kept.instances.size() == 1);
  CHECK(r.kept.instances[0].id == "q1");
  CHECK(r.kept.instances[0].delex_main_reference == "OBJSTR_1 formed in TIMEPOINT_1");
  REQUIRE(r.dropped.size() == 2);
  CHECK(r.dropped[0].instance.id == "q2");
  CHECK(r.dropped[0].reasons == std::vector<std::string>{kReasonUnalignedNounPhrase});
  CHECK(r.dropped[1].instance.id == "q3");
  CHECK(r.dropped[1].reasons == std::vector<std::string>{kReasonNoSlotRealized});
}

TEST_CASE("align_filter drops injected noise") {
  SynthConfig cfg;
  cfg.n_groups = 10;
  cfg.noise_rate = 0.3;
  const Corpus c = synth_corpus(cfg, 11);
  const auto r = align_filter(c);
  CHECK(!r.dropped.empty());
  CHECK(r.kept.instances.size() + r.dropped.size() == c.instances.size());
  for (const auto& inst : r.kept.instances) CHECK(inst.alignment->realized_count() >= 1);
}

TEST_CASE("augment substitutes group templates") {
  Instance q1;
  q1.id = "q1";
  q1.group_id = "g";
  q1.mr.slots = {{"timepoint", "1792"}, {"objStr", "kentucky"}};
  q1.main_reference = "kentucky formed in 1792";
  q1.references = {q1.main_reference};
  Instance q2 = q1;
  q2.id = "q2";
  q2.mr.slots = {{"timepoint", "1845"}, {"objStr", "texas"}};
  q2.main_reference = "1845";
  q2.references = {q2.main_reference};
  Instance q3 = q1;
  q3.id = "q3";
  q3.mr.slots = {{"timepoint", "1900"}};
  q3.main_reference = "1900";
  q3.references = {q3.main_reference};
  for (Instance* i : {&q1, &q2, &q3}) i->delexicalize_fields();

  const auto out = augment({q1, q2, q3});
  CHECK(out[0].references == std::vector<std::string>{"kentucky formed in 1792", "1792"});
  CHECK(out[1].references == std::vector<std::string>{"1845", "texas formed in 1845"});
  CHECK(out[2].references == std::vector<std::string>{"1900"});  // sentential template needs objStr
  CHECK(out[1].main_reference == "1845");

  const auto single = augment({q1});
  CHECK(single[0].references == q1.references);

  Instance other = q2;
  other.group_id = "h";
  CHECK_THROWS_AS(augment({q1, other}), ContractError);
}

TEST_CASE("split_by_group") {
  const Corpus c = equal_groups(10, 5);
  const auto s = split_by_group(c, {}, 7);
  CHECK(s.train.group_ids().size() == 8);
  CHECK(s.dev.group_ids().size() == 1);
  CHECK(s.test.group_ids().size() == 1);
  const auto again = split_by_group(c, {}, 7);
  CHECK(again.train.instances == s.train.instances);
  CHECK(again.test.instances == s.test.instances);

  SynthConfig cfg;
  cfg.n_groups = 37;
  const Corpus syn = synth_corpus(cfg, 5);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto sp = split_by_group(syn, {}, seed);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const Corpus* part : {&sp.train, &sp.dev, &sp.test}) {
      total += part->group_ids().size();
      for (const auto& g : part->group_ids()) seen.insert(g);
    }
    CHECK(seen.size() == total);  // disjoint
    CHECK(sp.train.instances.size() + sp.dev.instances.size() + sp.test.instances.size() == syn.instances.size());
  }
  CHECK_THROWS_AS(split_by_group(equal_groups(2, 3), {}, 1), ContractError);
  CHECK_THROWS_AS(split_by_group(c, {0.5, 0.1, 0.1}, 1), ContractError);
}

TEST_CASE("make_partitions") {
  SynthConfig cfg;
  cfg.n_groups = 40;
  cfg.n_slot_types = 30;
  const Corpus c = synth_corpus(cfg, 9);
  std::set<std::string> ontology = c.ontology;
  const auto parts = make_partitions(c, {{10, 20, ontology.size()}});
  REQUIRE(parts.size() == 3);
  CHECK(parts[2].instances.size() == c.instances.size());
  CHECK(parts[0].ontology.size() <= 10);
  CHECK(parts[1].ontology.size() <= 20);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    CHECK(parts[k - 1].instances.size() <= parts[k].instances.size());
    std::set<std::string> ids;
    for (const auto& inst : parts[k].instances) ids.insert(inst.id);
    for (const auto& inst : parts[k - 1].instances) CHECK(ids.count(inst.id) == 1);
  }
  CHECK_THROWS_AS(make_partitions(c, {{ontology.size() + 1}}), ContractError);
  CHECK_THROWS_AS(make_partitions(c, {{5, 5}}), ContractError);
}

TEST_CASE("rank_slot_types ties lexicographic") {
  Corpus c;
  Instance i;
  i.id = "a";
  i.group_id = "g";
  i.mr.slots = {{"b", "x"}, {"a", "y"}, {"c", "z"}, {"c", "w"}};
  i.main_reference = "x";
  i.references = {"x"};
  c.instances.push_back(i);
  c.ontology = {"zz"};
  CHECK(rank_slot_types(c) == std::vector<std::string>{"c", "a", "b", "zz"});
}

TEST_CASE("parse_mr_string") {
  auto mr = parse_mr_string("inform(name='fringale';food='french')");
  CHECK(mr.dialog_act == "inform");
  CHECK(mr.slots == std::vector<Slot>{{"name", "fringale"}, {"food", "french"}});
  mr = parse_mr_string("inform(kidsallowed='no';name='red door cafe')");
  CHECK(slot_kind(mr.slots[0]) == SlotKind::binary);
  mr = parse_mr_string("Request(area; price=\"Cheap\")");
  CHECK(mr.dialog_act == "request");
  CHECK(mr.slots == std::vector<Slot>{{"area", "yes"}, {"price", "cheap"}});
  CHECK(parse_mr_string(format_mr_string(mr)) == mr);
  try {
    parse_mr_string("inform(");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position() == 7);
  }
  CHECK_THROWS_AS(parse_mr_string("inform(a='x'"), ParseError);
  CHECK_THROWS_AS(parse_mr_string("(a='x')"), ParseError);
  CHECK_THROWS_AS(parse_mr_string("inform(a='x') junk"), ParseError);
}

TEST_CASE("corpus I/O") {
  Corpus c;
  c.name = "corpus";
  c.instances.push_back(kentucky_instance());
  Instance b = kentucky_instance();
  b.id = "q2";
  b.mr.context = std::nullopt;
  c.instances.push_back(b);
  Instance d = kentucky_instance();
  d.id = "q3";
  d.mr.dialog_act = "confirm";
  c.instances.push_back(d);
  c.refresh_inventories();
  std::stringstream ss;
  write_corpus(c, ss);
  const Corpus back = read_corpus(ss, CorpusFormat::qa_jsonl);
  CHECK(back.instances == c.instances);
  CHECK(back.ontology == c.ontology);
  CHECK(back.da_inventory == c.da_inventory);

  std::istringstream sfx("{\"mr\": \"inform(name='fringale';food='french')\", \"references\": [\"Fringale serves French food.\"]}\n");
  const Corpus s = read_corpus(sfx, CorpusFormat::sfx, "sfx");
  REQUIRE(s.instances.size() == 1);
  CHECK(s.instances[0].group_id == s.instances[0].id);
  CHECK(s.instances[0].mr.slots.size() == 2);

  std::istringstream bad(
      "{\"id\":\"a\",\"group_id\":\"g\",\"context\":null,\"da\":\"inform\",\"slots\":[],\"references\":[\"x\"]}\n"
      "{\"id\":\"b\",\"group_id\":\"g\",\"context\":null,\"da\":\"inform\",\"slots\":[]}\n");
  try {
    read_corpus(bad, CorpusFormat::qa_jsonl);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("references") != std::string::npos);
  }
  CHECK_THROWS_AS(load_corpus("/nonexistent/file.jsonl"), IoError);
  CHECK(parse_corpus_format("qa-jsonl") == CorpusFormat::qa_jsonl);
  CHECK_THROWS_AS(parse_corpus_format("xml"), UsageError);
}

TEST_CASE("vocab ordering") {
  const Vocab v = Vocab::build({{"b", "a", "b"}, {"c", "a", "b"}});
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "b", "a", "c"});
  CHECK(v.id("zzz") == Vocab::kUnk);
  CHECK(v.encode({"a", "q"}) == std::vector<std::size_t>{5, Vocab::kUnk});
  CHECK(Vocab::from_tokens(v.tokens()) == v);
}

TEST_CASE("field tokens") {
  MeaningRepresentation mr;
  mr.slots = kentucky_slots();
  CHECK(field_tokens(mr, VocabField::slot_types).size() == 4);
  CHECK(target_tokens("kentucky formed in 1792", mr) ==
        std::vector<std::string>{"OBJSTR_1", "formed", "in", "TIMEPOINT_1"});
}

TEST_CASE("synth_corpus") {
  SynthConfig cfg;
  cfg.n_groups = 6;
  cfg.instances_per_group = 4;
  const Corpus a = synth_corpus(cfg, 42);
  const Corpus b = synth_corpus(cfg, 42);
  CHECK(a.instances == b.instances);
  CHECK(a.instances.size() == 24);
  CHECK(a.group_ids().size() == 6);
  CHECK_NOTHROW(a.validate());
  const Corpus c = synth_corpus(cfg, 43);
  CHECK_FALSE(c.instances == a.instances);
  cfg.n_slot_types = 3;
  CHECK_THROWS_AS(synth_corpus(cfg, 1), ContractError);
  cfg.n_slot_types = 20;
  cfg.context = false;
  for (const auto& inst : synth_corpus(cfg, 1).instances) CHECK_FALSE(inst.mr.context.has_value());
  const auto stats = corpus_stats(a);
  CHECK(stats.size == 24);
  CHECK(stats.groups == 6);
}
