#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qanlg/data.hpp"
#include "qanlg/errors.hpp"
#include "qanlg/text.hpp"

namespace qanlg {

namespace {

constexpr std::array kBaseEntityTypes = {
    "timepoint", "objStr",   "humanBeing", "location", "organization", "quantity", "event",
    "work",      "language", "species",    "color",    "sport",        "currency", "award"};

constexpr std::array kClassWords = {"state", "city",  "person", "country", "company",
                                    "river", "book",  "animal", "planet",  "team"};

struct Verb {
  const char* value;
  const char* surface;  // what sentential answers say; may differ from the MR value
};

constexpr std::array kVerbs = {
    Verb{"founded", "formed"},     Verb{"built", "built"},         Verb{"written", "written"},
    Verb{"discovered", "found"},   Verb{"invented", "invented"},   Verb{"born", "born"},
    Verb{"married", "married"},    Verb{"released", "released"},   Verb{"elected", "elected"},
    Verb{"painted", "painted"},    Verb{"composed", "composed"},   Verb{"created", "made"},
    Verb{"directed", "directed"},  Verb{"established", "started"}, Verb{"published", "published"},
    Verb{"opened", "opened"},      Verb{"named", "named"},         Verb{"signed", "signed"},
};

constexpr std::array kPrepositions = {"in", "by", "on", "at", "with", "from", "to", "for"};
constexpr std::array kQuestionWords = {"when", "where", "who", "what", "which"};
constexpr std::array kAux = {"was", "is", "did"};

const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = [] {
    std::set<std::string> w{"i", "am", "not", "sure", "yes", "no", "true", "false", "tell", "me",
                            "the", "a", "of", "and", "it", "sorry", "know", "don't", "do"};
    for (auto* s : kClassWords) w.insert(s);
    for (const auto& v : kVerbs) w.insert(v.value), w.insert(v.surface);
    for (auto* s : kPrepositions) w.insert(s);
    for (auto* s : kQuestionWords) w.insert(s);
    for (auto* s : kAux) w.insert(s);
    return w;
  }();
  return words;
}

class Generator {
 public:
  Generator(const SynthConfig& config, std::uint64_t seed) : cfg_(config), rng_(seed) {}

  Corpus run();

 private:
  enum class TypeKind { entity_word, entity_number };

  struct GroupPlan {
    std::string id;
    std::size_t answer_type = 0;
    std::size_t subject_type = 0;
    std::size_t verb = 0;
    bool polarity = false;
    bool prefers_sentence = false;
    int question_variant = 0;
    std::string class_word;
  };

  std::size_t uniform(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  std::string fresh_word();
  std::string fresh_value(std::size_t type);
  const std::string& draw_value(std::size_t type);
  std::string preposition(std::size_t type) const;
  std::string question_word(std::size_t type) const;

  SynthConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::string> entity_types_;
  std::vector<TypeKind> entity_kinds_;
  std::vector<std::vector<std::string>> pools_;
  std::set<std::string> used_;
  std::vector<bool> verb_prefers_sentence_;
};

std::string Generator::fresh_word() {
  static constexpr const char* consonants = "bdfgklmnprstvz";
  static constexpr const char* vowels = "aeiou";
  while (true) {
    std::string w;
    const std::size_t syllables = 2 + uniform(2);
    for (std::size_t i = 0; i < syllables; ++i) {
      w.push_back(consonants[uniform(14)]);
      w.push_back(vowels[uniform(5)]);
    }
    if (!reserved_words().count(w) && !used_.count(w)) {
      used_.insert(w);
      return w;
    }
  }
}

std::string Generator::fresh_value(std::size_t type) {
  if (entity_kinds_[type] == TypeKind::entity_number) {
    while (true) {
      std::string v = std::to_string(1000 + uniform(1020));
      if (used_.insert(v).second) return v;
    }
  }
  std::string v = fresh_word();
  if (chance(0.25)) v += " " + fresh_word();
  return v;
}

const std::string& Generator::draw_value(std::size_t type) {
  auto& pool = pools_[type];
  if (pool.size() < 40 && (pool.empty() || chance(0.5))) pool.push_back(fresh_value(type));
  return pool[uniform(pool.size())];
}

std::string Generator::preposition(std::size_t type) const {
  const std::string& name = entity_types_[type];
  if (name == "timepoint" || name == "location") return "in";
  if (name == "humanBeing") return "by";
  return kPrepositions[type % kPrepositions.size()];
}

std::string Generator::question_word(std::size_t type) const {
  const std::string& name = entity_types_[type];
  if (name == "timepoint") return "when";
  if (name == "location") return "where";
  if (name == "humanBeing") return "who";
  return kQuestionWords[3 + type % 2];
}

Corpus Generator::run() {
  const std::size_t n_entity = cfg_.n_slot_types - 3;
  for (std::size_t i = 0; i < n_entity; ++i) {
    std::string name;
    if (i < kBaseEntityTypes.size()) {
      name = kBaseEntityTypes[i];
    } else {
      name = std::to_string(i);
      name = "type" + std::string(3 - std::min<std::size_t>(3, name.size()), '0') + name;
    }
    entity_types_.push_back(name);
    entity_kinds_.push_back(name == "timepoint" || name == "quantity" ? TypeKind::entity_number
                                                                        : TypeKind::entity_word);
  }
  pools_.resize(n_entity);
  for (std::size_t v = 0; v < kVerbs.size(); ++v) verb_prefers_sentence_.push_back(chance(0.5));

  // Every entity type gets used: groups take answer/subject types from one
  // shuffled cycle, modifier slots from another.
  std::vector<std::size_t> cycle(n_entity);
  for (std::size_t i = 0; i < n_entity; ++i) cycle[i] = i;
  std::shuffle(cycle.begin(), cycle.end(), rng_);
  std::size_t cycle_pos = 0;
  auto next_type = [&] { return cycle[cycle_pos++ % n_entity]; };

  std::vector<GroupPlan> plans;
  for (std::size_t g = 0; g < cfg_.n_groups; ++g) {
    GroupPlan p;
    char id[32];
    std::snprintf(id, sizeof id, "g%03zu", g);
    p.id = id;
    p.answer_type = next_type();
    p.subject_type = next_type();
    if (n_entity > 1 && p.subject_type == p.answer_type) p.subject_type = next_type();
    p.verb = uniform(kVerbs.size());
    p.polarity = chance(0.15);
    p.prefers_sentence = verb_prefers_sentence_[p.verb];
    p.question_variant = static_cast<int>(uniform(2));
    p.class_word = p.subject_type < kClassWords.size() ? kClassWords[p.subject_type] : fresh_word();
    plans.push_back(std::move(p));
  }

  std::vector<std::size_t> modifier_cycle = cycle;
  std::shuffle(modifier_cycle.begin(), modifier_cycle.end(), rng_);
  std::size_t modifier_pos = 0;

  Corpus corpus;
  corpus.name = "synth";
  corpus.da_inventory.insert("inform");
  corpus.ontology.insert({"relStr", "polarity", "claStr"});
  for (const auto& t : entity_types_) corpus.ontology.insert(t);

  std::string foreign_subject;  // a subject from the previous group
  std::size_t noise_counter = 0;
  for (const GroupPlan& plan : plans) {
    std::string group_subject;
    const Verb& verb = kVerbs[plan.verb];
    const std::string& answer_type = entity_types_[plan.answer_type];
    const std::string& subject_type = entity_types_[plan.subject_type];
    for (std::size_t k = 0; k < cfg_.instances_per_group; ++k) {
      Instance inst;
      inst.id = plan.id + "-" + std::to_string(k);
      inst.group_id = plan.id;

      const std::string answer = draw_value(plan.answer_type);
      std::string subject = draw_value(plan.subject_type);
      for (int tries = 0; subject == answer && tries < 16; ++tries) subject = draw_value(plan.subject_type);
      if (subject == answer) subject = fresh_value(plan.subject_type);

      std::size_t modifier = modifier_cycle[modifier_pos++ % n_entity];
      if (n_entity > 2)
        while (modifier == plan.answer_type || modifier == plan.subject_type)
          modifier = modifier_cycle[modifier_pos++ % n_entity];
      const std::string modifier_value = draw_value(modifier);

      const bool positive = chance(0.5);
      auto& slots = inst.mr.slots;
      if (plan.polarity) slots.push_back({"polarity", positive ? "yes" : "no"});
      slots.push_back({answer_type, answer});
      slots.push_back({subject_type, subject});
      slots.push_back({"claStr", plan.class_word});
      if (n_entity > 2 && modifier_value != answer && modifier_value != subject)
        slots.push_back({entity_types_[modifier], modifier_value});
      slots.push_back({"relStr", verb.value});

      const std::string aux = kAux[plan.verb % kAux.size()];
      if (cfg_.context) {
        std::string q;
        if (plan.polarity)
          q = aux + " " + subject + " " + verb.value + " " + preposition(plan.answer_type) + " " + answer;
        else if (plan.question_variant == 0)
          q = question_word(plan.answer_type) + " " + aux + " " + subject + " " + verb.value;
        else
          q = "tell me " + question_word(plan.answer_type) + " " + subject + " " + aux + " " + verb.value;
        inst.mr.context = q;
      }

      const bool sentence = chance(cfg_.form_consistency) ? plan.prefers_sentence : !plan.prefers_sentence;
      std::string text;
      const std::string clause = std::string(verb.surface) + " " + preposition(plan.answer_type) + " " + answer;
      if (plan.polarity) {
        const std::string word = positive ? "yes" : "no";
        text = sentence ? word + " , " + subject + (positive ? " " : " " + aux + " not ") + clause : word;
      } else {
        text = sentence ? subject + " " + clause : answer;
      }

      if (cfg_.noise_rate > 0 && chance(cfg_.noise_rate)) {
        const bool can_mention = !foreign_subject.empty() && foreign_subject != subject &&
                                 foreign_subject != answer && foreign_subject != modifier_value;
        if (noise_counter++ % 2 == 0 && can_mention)
          text = foreign_subject + " " + clause;  // entity outside this MR
        else
          text = "sorry i am not sure";
      }
      if (group_subject.empty()) group_subject = subject;

      inst.main_reference = normalize_text(text);
      inst.references = {inst.main_reference};
      corpus.instances.push_back(std::move(inst));
    }
    foreign_subject = group_subject;
  }
  return corpus;
}

}  // namespace

Corpus synth_corpus(const SynthConfig& config, std::uint64_t seed) {
  if (config.n_groups == 0 || config.instances_per_group == 0 || config.n_slot_types == 0)
    throw ContractError("synth_corpus: counts must be positive");
  if (config.n_slot_types < 4)
    throw ContractError("synth_corpus: need at least 4 slot types (entity, class, relation, polarity), got " +
                        std::to_string(config.n_slot_types));
  if (config.noise_rate < 0.0 || config.noise_rate > 1.0) throw ContractError("synth_corpus: noise_rate outside [0,1]");
  return Generator(config, seed).run();
}

}  // namespace qanlg
