#include "qanlg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "qanlg/errors.hpp"
#include "qanlg/text.hpp"

namespace qanlg {

using ordered_json = nlohmann::ordered_json;

bool is_binary_value(const std::string& value) {
  const std::string v = to_lower(trim(value));
  return v == "yes" || v == "no" || v == "true" || v == "false";
}

SlotKind slot_kind(const Slot& slot) {
  if (to_lower(slot.type).rfind("rel", 0) == 0) return SlotKind::relation;
  if (is_binary_value(slot.value)) return SlotKind::binary;
  return SlotKind::noun_phrase;
}

std::vector<std::string> slot_placeholders(const MeaningRepresentation& mr) {
  std::vector<std::string> out;
  std::map<std::string, std::size_t> seen;
  for (const Slot& s : mr.slots) {
    if (slot_kind(s) != SlotKind::noun_phrase) {
      out.emplace_back();
      continue;
    }
    out.push_back(make_placeholder(s.type, ++seen[to_upper(s.type)]));
  }
  return out;
}

const char* align_status_name(AlignStatus s) {
  switch (s) {
    case AlignStatus::delexicalized: return "delexicalized";
    case AlignStatus::missing: return "missing";
    case AlignStatus::lexical_match: return "lexical_match";
    case AlignStatus::lexical_miss: return "lexical_miss";
  }
  return "?";
}

std::size_t Alignment::realized_count() const {
  std::size_t n = 0;
  for (const auto& s : slots)
    if (s.status == AlignStatus::delexicalized || s.status == AlignStatus::lexical_match) ++n;
  return n;
}

const SlotAlignment* Alignment::find(std::size_t slot_index) const {
  for (const auto& s : slots)
    if (s.slot == slot_index) return &s;
  return nullptr;
}

namespace {

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos, const std::vector<std::string>& needle) {
  if (needle.empty() || pos + needle.size() > tokens.size()) return false;
  for (std::size_t i = 0; i < needle.size(); ++i)
    if (tokens[pos + i] != needle[i]) return false;
  return true;
}

// Start positions of non-overlapping left-to-right matches.
std::vector<std::size_t> find_all(const std::vector<std::string>& tokens, const std::vector<std::string>& needle) {
  std::vector<std::size_t> out;
  if (needle.empty()) return out;
  for (std::size_t i = 0; i + needle.size() <= tokens.size();) {
    if (matches_at(tokens, i, needle)) {
      out.push_back(i);
      i += needle.size();
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace

DelexResult delexicalize(const std::string& text, const std::vector<Slot>& slots) {
  const std::vector<std::string> tokens = tokenize(text);
  MeaningRepresentation mr;
  mr.slots = slots;
  const std::vector<std::string> placeholders = slot_placeholders(mr);

  struct Candidate {
    std::size_t slot;
    std::vector<std::string> value;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (slot_kind(slots[i]) == SlotKind::noun_phrase) candidates.push_back({i, tokenize(slots[i].value)});
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.value.size() > b.value.size(); });

  std::vector<std::vector<std::size_t>> positions(slots.size());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tokens.size();) {
    bool replaced = false;
    for (const Candidate& c : candidates) {
      if (!matches_at(tokens, i, c.value)) continue;
      positions[c.slot].push_back(out.size());
      out.push_back(placeholders[c.slot]);
      i += c.value.size();
      replaced = true;
      break;
    }
    if (!replaced) out.push_back(tokens[i++]);
  }

  DelexResult result;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    SlotAlignment a;
    a.slot = i;
    a.kind = slot_kind(slots[i]);
    if (a.kind == SlotKind::noun_phrase) {
      a.placeholder = placeholders[i];
      a.positions = positions[i];
      a.status = a.positions.empty() ? AlignStatus::missing : AlignStatus::delexicalized;
    } else {
      a.positions = find_all(out, tokenize(slots[i].value));
      a.status = a.positions.empty() ? AlignStatus::lexical_miss : AlignStatus::lexical_match;
    }
    result.alignment.slots.push_back(std::move(a));
  }
  result.text = join(out);
  return result;
}

std::string relexicalize(const std::string& delex_text, const std::vector<Slot>& slots) {
  std::map<std::string, std::vector<std::string>> by_type;
  for (const Slot& s : slots)
    if (slot_kind(s) == SlotKind::noun_phrase) by_type[to_upper(s.type)].push_back(normalize_text(s.value));
  std::vector<std::string> out;
  for (const std::string& tok : split_whitespace(delex_text)) {
    const auto ph = parse_placeholder(tok);
    if (!ph) {
      out.push_back(tok);
      continue;
    }
    auto it = by_type.find(ph->type_key);
    if (it == by_type.end() || ph->index > it->second.size()) throw UnresolvedPlaceholderError(tok);
    out.push_back(it->second[ph->index - 1]);
  }
  return join(out);
}

void Instance::delexicalize_fields() {
  DelexResult d = delexicalize(main_reference, mr.slots);
  delex_main_reference = d.text;
  alignment = std::move(d.alignment);
  if (mr.context)
    delex_context = delexicalize(*mr.context, mr.slots).text;
  else
    delex_context.reset();
}

void Corpus::refresh_inventories() {
  for (const Instance& inst : instances) {
    da_inventory.insert(inst.mr.dialog_act);
    for (const Slot& s : inst.mr.slots) ontology.insert(s.type);
  }
}

std::set<std::string> Corpus::group_ids() const {
  std::set<std::string> out;
  for (const Instance& inst : instances) out.insert(inst.group_id);
  return out;
}

void Corpus::validate() const {
  std::set<std::string> ids;
  for (const Instance& inst : instances) {
    const std::string where = "instance '" + inst.id + "': ";
    if (!ids.insert(inst.id).second) throw ContractError(where + "duplicate id");
    if (inst.references.empty() || inst.references.front() != inst.main_reference)
      throw ContractError(where + "references must start with the main reference");
    if (!da_inventory.count(inst.mr.dialog_act)) throw ContractError(where + "dialog act outside inventory");
    for (const Slot& s : inst.mr.slots) {
      if (s.type.empty() || s.value.empty()) throw ContractError(where + "empty slot type or value");
      if (!ontology.count(s.type)) throw ContractError(where + "slot type " + s.type + " outside ontology");
    }
    if (inst.delex_main_reference && relexicalize(*inst.delex_main_reference, inst.mr.slots) != inst.main_reference)
      throw ContractError(where + "delexicalized reference does not relexicalize to the main reference");
  }
}

FilterResult align_filter(const Corpus& corpus, const AlignPolicy& policy) {
  // Entity lexicon keyed by first token; longest entries first.
  std::unordered_map<std::string, std::vector<std::vector<std::string>>> lexicon;
  auto add_entry = [&](const std::string& value) {
    auto toks = tokenize(value);
    if (toks.empty()) return;
    auto& bucket = lexicon[toks.front()];
    if (std::find(bucket.begin(), bucket.end(), toks) == bucket.end()) bucket.push_back(std::move(toks));
  };
  if (policy.entity_lexicon.empty()) {
    for (const Instance& inst : corpus.instances)
      for (const Slot& s : inst.mr.slots)
        if (slot_kind(s) == SlotKind::noun_phrase) add_entry(s.value);
  } else {
    for (const auto& v : policy.entity_lexicon) add_entry(v);
  }
  for (auto& [first, bucket] : lexicon) {
    std::sort(bucket.begin(), bucket.end());
    std::stable_sort(bucket.begin(), bucket.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
  }

  FilterResult result;
  result.kept.name = corpus.name;
  result.kept.ontology = corpus.ontology;
  result.kept.da_inventory = corpus.da_inventory;
  for (const Instance& original : corpus.instances) {
    Instance inst = original;
    inst.delexicalize_fields();
    const std::vector<std::string> toks = split_whitespace(*inst.delex_main_reference);

    bool unaligned = false;
    for (std::size_t i = 0; i < toks.size() && !unaligned; ++i) {
      auto it = lexicon.find(toks[i]);
      if (it == lexicon.end()) continue;
      for (const auto& entry : it->second)
        if (matches_at(toks, i, entry)) {
          unaligned = true;
          break;
        }
    }
    std::vector<std::string> reasons;
    if (unaligned) reasons.emplace_back(kReasonUnalignedNounPhrase);
    if (inst.alignment->realized_count() < policy.min_realized_slots) reasons.emplace_back(kReasonNoSlotRealized);
    if (reasons.empty())
      result.kept.instances.push_back(std::move(inst));
    else
      result.dropped.push_back({original, std::move(reasons)});
  }
  return result;
}

namespace {

bool template_satisfiable(const std::string& delex, const MeaningRepresentation& mr) {
  std::map<std::string, std::size_t> available;
  for (const Slot& s : mr.slots)
    if (slot_kind(s) == SlotKind::noun_phrase) ++available[to_upper(s.type)];
  for (const std::string& tok : split_whitespace(delex)) {
    const auto ph = parse_placeholder(tok);
    if (!ph) continue;
    auto it = available.find(ph->type_key);
    if (it == available.end() || ph->index > it->second) return false;
  }
  return true;
}

}  // namespace

std::vector<Instance> augment(const std::vector<Instance>& group) {
  for (const Instance& inst : group) {
    if (inst.group_id != group.front().group_id) throw ContractError("augment: instances span several groups");
    if (!inst.delex_main_reference) throw ContractError("augment: instance '" + inst.id + "' is not delexicalized");
  }
  std::vector<Instance> out = group;
  for (Instance& inst : out) {
    std::set<std::string> seen(inst.references.begin(), inst.references.end());
    for (const Instance& source : group) {
      const std::string& tmpl = *source.delex_main_reference;
      if (!template_satisfiable(tmpl, inst.mr)) continue;
      std::string candidate = relexicalize(tmpl, inst.mr.slots);
      if (seen.insert(candidate).second) inst.references.push_back(std::move(candidate));
    }
  }
  return out;
}

Corpus augment_corpus(const Corpus& corpus) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
    const auto& gid = corpus.instances[i].group_id;
    if (!members.count(gid)) order.push_back(gid);
    members[gid].push_back(i);
  }
  Corpus out = corpus;
  for (const auto& gid : order) {
    std::vector<Instance> group;
    for (auto i : members[gid]) group.push_back(corpus.instances[i]);
    std::vector<Instance> augmented = augment(group);
    for (std::size_t k = 0; k < members[gid].size(); ++k) out.instances[members[gid][k]] = std::move(augmented[k]);
  }
  return out;
}

CorpusSplit split_by_group(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9)
    throw ContractError("split ratios must be non-negative and sum to 1");
  std::vector<std::string> groups;
  std::map<std::string, std::size_t> counts;
  for (const Instance& inst : corpus.instances)
    if (counts[inst.group_id]++ == 0) groups.push_back(inst.group_id);
  if (groups.size() < 3) throw ContractError("split_by_group needs at least 3 groups, got " + std::to_string(groups.size()));

  std::sort(groups.begin(), groups.end());
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  const std::size_t g = groups.size();
  std::vector<double> cum(g + 1, 0.0);
  for (std::size_t i = 0; i < g; ++i) cum[i + 1] = cum[i] + static_cast<double>(counts[groups[i]]);
  const double total = cum[g];
  auto closest = [&](std::size_t lo, std::size_t hi, double target) {
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i)
      if (std::abs(cum[i] / total - target) < std::abs(cum[best] / total - target)) best = i;
    return best;
  };
  const std::size_t train_end = closest(1, g - 2, ratios.train);
  const std::size_t dev_end = closest(train_end + 1, g - 1, ratios.train + ratios.dev);

  std::map<std::string, int> assignment;
  for (std::size_t i = 0; i < g; ++i) assignment[groups[i]] = i < train_end ? 0 : (i < dev_end ? 1 : 2);

  CorpusSplit split;
  Corpus* parts[3] = {&split.train, &split.dev, &split.test};
  const char* names[3] = {"train", "dev", "test"};
  for (int k = 0; k < 3; ++k) {
    parts[k]->name = corpus.name + "/" + names[k];
    parts[k]->ontology = corpus.ontology;
    parts[k]->da_inventory = corpus.da_inventory;
  }
  for (const Instance& inst : corpus.instances) parts[assignment[inst.group_id]]->instances.push_back(inst);
  return split;
}

std::vector<std::string> rank_slot_types(const Corpus& corpus) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : corpus.ontology) freq[t] = 0;
  for (const Instance& inst : corpus.instances)
    for (const Slot& s : inst.mr.slots) ++freq[s.type];
  std::vector<std::string> ranked;
  for (const auto& [t, n] : freq) ranked.push_back(t);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](const std::string& a, const std::string& b) { return freq[a] > freq[b]; });
  return ranked;
}

std::vector<Corpus> make_partitions(const Corpus& corpus, const PartitionSpec& spec) {
  std::set<std::string> ontology = corpus.ontology;
  for (const Instance& inst : corpus.instances)
    for (const Slot& s : inst.mr.slots) ontology.insert(s.type);
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    if (spec.sizes[i] == 0) throw ContractError("partition sizes must be positive");
    if (i && spec.sizes[i] <= spec.sizes[i - 1]) throw ContractError("partition sizes must be strictly increasing");
    if (spec.sizes[i] > ontology.size())
      throw ContractError("partition size " + std::to_string(spec.sizes[i]) + " exceeds ontology of " +
                          std::to_string(ontology.size()) + " slot types");
  }
  Corpus full = corpus;
  full.ontology = ontology;
  const std::vector<std::string> ranked = rank_slot_types(full);

  std::vector<Corpus> out;
  for (std::size_t k = 0; k < spec.sizes.size(); ++k) {
    const std::set<std::string> allowed(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(spec.sizes[k]));
    Corpus part;
    part.name = corpus.name + "/p" + std::to_string(k + 1);
    part.da_inventory = corpus.da_inventory;
    for (const Instance& inst : corpus.instances) {
      const bool inside = std::all_of(inst.mr.slots.begin(), inst.mr.slots.end(),
                                      [&](const Slot& s) { return allowed.count(s.type) > 0; });
      if (inside) part.instances.push_back(inst);
    }
    part.refresh_inventories();
    out.push_back(std::move(part));
  }
  return out;
}

MeaningRepresentation parse_mr_string(const std::string& mr) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < mr.size() && std::isspace(static_cast<unsigned char>(mr[pos]))) ++pos;
  };
  auto fail = [&](const std::string& what) -> void { throw ParseError("malformed MR: " + what, pos); };

  MeaningRepresentation out;
  skip_ws();
  const std::size_t da_start = pos;
  while (pos < mr.size() && mr[pos] != '(') ++pos;
  if (pos >= mr.size()) fail("expected '('");
  out.dialog_act = to_lower(trim(mr.substr(da_start, pos - da_start)));
  if (out.dialog_act.empty()) {
    pos = da_start;
    fail("missing dialog act");
  }
  ++pos;  // '('
  skip_ws();
  if (pos >= mr.size()) fail("unexpected end of input");
  if (mr[pos] == ')') {
    ++pos;
  } else {
    while (true) {
      skip_ws();
      const std::size_t name_start = pos;
      while (pos < mr.size() && mr[pos] != '=' && mr[pos] != ';' && mr[pos] != ')') ++pos;
      if (pos >= mr.size()) fail("unexpected end of input");
      Slot slot;
      slot.type = trim(mr.substr(name_start, pos - name_start));
      if (slot.type.empty()) {
        pos = name_start;
        fail("missing slot name");
      }
      if (mr[pos] == '=') {
        ++pos;
        skip_ws();
        if (pos >= mr.size()) fail("unexpected end of input");
        if (mr[pos] == '\'' || mr[pos] == '"') {
          const char quote = mr[pos++];
          const std::size_t value_start = pos;
          while (pos < mr.size() && mr[pos] != quote) ++pos;
          if (pos >= mr.size()) fail("unterminated quoted value");
          slot.value = mr.substr(value_start, pos - value_start);
          ++pos;
          skip_ws();
        } else {
          const std::size_t value_start = pos;
          while (pos < mr.size() && mr[pos] != ';' && mr[pos] != ')') ++pos;
          slot.value = trim(mr.substr(value_start, pos - value_start));
        }
        slot.value = normalize_text(slot.value);
        if (slot.value.empty()) fail("empty slot value");
      } else {
        slot.value = "yes";
      }
      out.slots.push_back(std::move(slot));
      if (pos >= mr.size()) fail("unexpected end of input");
      if (mr[pos] == ';') {
        ++pos;
        continue;
      }
      if (mr[pos] == ')') {
        ++pos;
        break;
      }
      fail("expected ';' or ')'");
    }
  }
  skip_ws();
  if (pos != mr.size()) fail("trailing characters");
  return out;
}

std::string format_mr_string(const MeaningRepresentation& mr) {
  std::string out = mr.dialog_act + "(";
  for (std::size_t i = 0; i < mr.slots.size(); ++i) {
    if (i) out += ";";
    out += mr.slots[i].type + "='" + mr.slots[i].value + "'";
  }
  return out + ")";
}

CorpusFormat parse_corpus_format(const std::string& name) {
  if (name == "qa-jsonl" || name == "jsonl") return CorpusFormat::qa_jsonl;
  if (name == "sfx") return CorpusFormat::sfx;
  throw UsageError("unknown corpus format '" + name + "' (expected qa-jsonl or sfx)");
}

namespace {

const ordered_json& require_field(const ordered_json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(std::string("missing field '") + key + "'", line);
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, std::size_t line) {
  const auto& v = require_field(obj, key, line);
  if (!v.is_string()) throw SchemaError(std::string("field '") + key + "' must be a string", line);
  return v.get<std::string>();
}

std::vector<std::string> require_references(const ordered_json& obj, std::size_t line) {
  const auto& refs = require_field(obj, "references", line);
  if (!refs.is_array() || refs.empty()) throw SchemaError("field 'references' must be a nonempty array", line);
  std::vector<std::string> out;
  for (const auto& r : refs) {
    if (!r.is_string()) throw SchemaError("references must be strings", line);
    out.push_back(normalize_text(r.get<std::string>()));
  }
  return out;
}

Instance parse_qa_line(const ordered_json& obj, std::size_t line) {
  Instance inst;
  inst.id = require_string(obj, "id", line);
  inst.group_id = require_string(obj, "group_id", line);
  const auto& ctx = require_field(obj, "context", line);
  if (ctx.is_string())
    inst.mr.context = normalize_text(ctx.get<std::string>());
  else if (!ctx.is_null())
    throw SchemaError("field 'context' must be a string or null", line);
  inst.mr.dialog_act = to_lower(require_string(obj, "da", line));
  const auto& slots = require_field(obj, "slots", line);
  if (!slots.is_array()) throw SchemaError("field 'slots' must be an array", line);
  for (const auto& s : slots) {
    if (!s.is_object()) throw SchemaError("slots must be objects", line);
    Slot slot{require_string(s, "type", line), normalize_text(require_string(s, "value", line))};
    if (slot.type.empty() || slot.value.empty()) throw SchemaError("slot type and value must be nonempty", line);
    inst.mr.slots.push_back(std::move(slot));
  }
  inst.references = require_references(obj, line);
  inst.main_reference = inst.references.front();
  return inst;
}

}  // namespace

Corpus read_corpus(std::istream& in, CorpusFormat format, const std::string& name) {
  Corpus corpus;
  corpus.name = name;
  std::string raw;
  std::size_t line = 0;
  std::set<std::string> ids;
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!obj.is_object()) throw SchemaError("expected a JSON object", line);
    Instance inst;
    if (format == CorpusFormat::qa_jsonl) {
      inst = parse_qa_line(obj, line);
    } else {
      try {
        inst.mr = parse_mr_string(require_string(obj, "mr", line));
      } catch (const ParseError& e) {
        throw SchemaError(e.what(), line);
      }
      inst.references = require_references(obj, line);
      inst.main_reference = inst.references.front();
      inst.id = name + "-" + std::to_string(line);
      inst.group_id = inst.id;
    }
    if (!ids.insert(inst.id).second) throw SchemaError("duplicate id '" + inst.id + "'", line);
    corpus.instances.push_back(std::move(inst));
  }
  corpus.refresh_inventories();
  return corpus;
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const Instance& inst : corpus.instances) {
    ordered_json obj;
    obj["id"] = inst.id;
    obj["group_id"] = inst.group_id;
    obj["context"] = inst.mr.context ? ordered_json(*inst.mr.context) : ordered_json(nullptr);
    obj["da"] = inst.mr.dialog_act;
    obj["slots"] = ordered_json::array();
    for (const Slot& s : inst.mr.slots) obj["slots"].push_back({{"type", s.type}, {"value", s.value}});
    obj["references"] = inst.references;
    out << obj.dump() << '\n';
  }
}

Corpus load_corpus(const std::string& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (auto dot = name.find('.'); dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  try {
    return read_corpus(in, format, name);
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what(), e.line());
  }
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_corpus(corpus, out);
  if (!out) throw IoError("write failed for " + path);
}

Vocab::Vocab() {
  for (const char* s : kSpecials) {
    index_[s] = tokens_.size();
    tokens_.emplace_back(s);
  }
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sequences) {
  std::map<std::string, std::size_t> freq;
  for (const auto& seq : sequences)
    for (const auto& tok : seq) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : items) {
    if (v.contains(tok)) continue;
    v.index_[tok] = v.tokens_.size();
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 4) throw LoadError("vocabulary lacks the special tokens");
  for (std::size_t i = 0; i < 4; ++i)
    if (tokens[i] != kSpecials[i]) throw LoadError("vocabulary special token mismatch at id " + std::to_string(i));
  Vocab v;
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw LoadError("duplicate vocabulary token '" + tokens[i] + "'");
    v.index_[tokens[i]] = v.tokens_.size();
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> field_tokens(const MeaningRepresentation& mr, VocabField field) {
  std::vector<std::string> out;
  switch (field) {
    case VocabField::slot_types:
      for (const Slot& s : mr.slots) out.push_back(s.type);
      break;
    case VocabField::slot_values:
      for (std::size_t i = 0; i < mr.slots.size(); ++i) {
        if (i) out.emplace_back(kSlotSeparator);
        for (auto& t : tokenize(mr.slots[i].value)) out.push_back(std::move(t));
      }
      break;
    case VocabField::dialog_act:
      out.push_back(mr.dialog_act);
      break;
    case VocabField::context_lex:
      if (mr.context) out = tokenize(*mr.context);
      break;
    case VocabField::context_delex:
      if (mr.context) out = split_whitespace(delexicalize(*mr.context, mr.slots).text);
      break;
    case VocabField::target:
      throw ContractError("target tokens depend on a reference; use target_tokens()");
  }
  return out;
}

std::vector<std::string> target_tokens(const std::string& reference, const MeaningRepresentation& mr) {
  return split_whitespace(delexicalize(reference, mr.slots).text);
}

Vocab build_vocab(const Corpus& corpus, VocabField field) {
  std::vector<std::vector<std::string>> seqs;
  for (const Instance& inst : corpus.instances) {
    if (field == VocabField::target) {
      for (const auto& ref : inst.references) seqs.push_back(target_tokens(ref, inst.mr));
    } else {
      seqs.push_back(field_tokens(inst.mr, field));
    }
  }
  return Vocab::build(seqs);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats st;
  st.size = corpus.instances.size();
  std::set<std::string> types(corpus.ontology), das(corpus.da_inventory), words;
  for (const Instance& inst : corpus.instances) {
    das.insert(inst.mr.dialog_act);
    for (const Slot& s : inst.mr.slots) types.insert(s.type);
    for (const auto& ref : inst.references)
      for (auto& t : target_tokens(ref, inst.mr)) words.insert(std::move(t));
    st.context = st.context || inst.mr.context.has_value();
  }
  st.slots = types.size();
  st.das = das.size();
  st.words = words.size();
  st.groups = corpus.group_ids().size();
  return st;
}

}  // namespace qanlg
