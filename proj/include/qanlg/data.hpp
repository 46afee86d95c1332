#pragma once

// Corpus model and preparation pipeline: MR handling, delexicalization,
// alignment filtering, template augmentation, group-disjoint splits,
// progressive ontology partitions, corpus I/O, and vocabularies.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace qanlg {

struct Slot {
  std::string type;
  std::string value;

  bool operator==(const Slot&) const = default;
};

enum class SlotKind { noun_phrase, relation, binary };

// Relation slots have a type starting with "rel" (e.g. relStr); binary slots
// carry yes/no style values. Everything else is a noun phrase.
SlotKind slot_kind(const Slot& slot);
bool is_binary_value(const std::string& value);

struct MeaningRepresentation {
  std::string dialog_act = "inform";
  std::vector<Slot> slots;
  std::optional<std::string> context;

  bool operator==(const MeaningRepresentation&) const = default;
};

// Placeholder index of every noun-phrase slot ("" for lexical slots).
std::vector<std::string> slot_placeholders(const MeaningRepresentation& mr);

enum class AlignStatus { delexicalized, missing, lexical_match, lexical_miss };
const char* align_status_name(AlignStatus s);

struct SlotAlignment {
  std::size_t slot = 0;  // index into mr.slots
  SlotKind kind = SlotKind::noun_phrase;
  AlignStatus status = AlignStatus::missing;
  std::string placeholder;             // noun phrases only
  std::vector<std::size_t> positions;  // token positions in the delexicalized text

  bool operator==(const SlotAlignment&) const = default;
};

struct Alignment {
  std::vector<SlotAlignment> slots;

  std::size_t realized_count() const;
  const SlotAlignment* find(std::size_t slot_index) const;
  bool operator==(const Alignment&) const = default;
};

struct DelexResult {
  std::string text;
  Alignment alignment;
};

DelexResult delexicalize(const std::string& text, const std::vector<Slot>& slots);
std::string relexicalize(const std::string& delex_text, const std::vector<Slot>& slots);

struct Instance {
  std::string id;
  std::string group_id;
  MeaningRepresentation mr;
  std::string main_reference;
  std::vector<std::string> references;  // main first
  std::optional<std::string> delex_main_reference;
  std::optional<std::string> delex_context;
  std::optional<Alignment> alignment;

  // Fills the delexicalized fields from mr + main_reference.
  void delexicalize_fields();
  bool operator==(const Instance&) const = default;
};

struct Corpus {
  std::string name;
  std::vector<Instance> instances;
  std::set<std::string> ontology;
  std::set<std::string> da_inventory;

  // Adds every slot type / DA seen in the instances to the inventories.
  void refresh_inventories();
  std::set<std::string> group_ids() const;
  // Throws ContractError on any broken invariant.
  void validate() const;
};

struct DroppedInstance {
  Instance instance;
  std::vector<std::string> reasons;
};

struct AlignPolicy {
  // Noun-phrase values known anywhere in the corpus; a reference mentioning
  // one that its own MR lacks is unaligned. Built from the corpus when empty.
  std::vector<std::string> entity_lexicon;
  std::size_t min_realized_slots = 1;
};

inline constexpr const char* kReasonUnalignedNounPhrase = "unaligned noun phrase";
inline constexpr const char* kReasonNoSlotRealized = "no slot realized";

struct FilterResult {
  Corpus kept;
  std::vector<DroppedInstance> dropped;
};

FilterResult align_filter(const Corpus& corpus, const AlignPolicy& policy = {});

// Instances must share a group and carry delex_main_reference.
std::vector<Instance> augment(const std::vector<Instance>& group);
Corpus augment_corpus(const Corpus& corpus);

struct SplitRatios {
  double train = 0.8, dev = 0.1, test = 0.1;
};

struct CorpusSplit {
  Corpus train, dev, test;
};

CorpusSplit split_by_group(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed);

struct PartitionSpec {
  std::vector<std::size_t> sizes;  // strictly increasing
};

// Slot types ranked by descending frequency, ties lexicographic; ontology
// types that never occur come last.
std::vector<std::string> rank_slot_types(const Corpus& corpus);
std::vector<Corpus> make_partitions(const Corpus& corpus, const PartitionSpec& spec);

MeaningRepresentation parse_mr_string(const std::string& mr);
std::string format_mr_string(const MeaningRepresentation& mr);

enum class CorpusFormat { qa_jsonl, sfx };
CorpusFormat parse_corpus_format(const std::string& name);

Corpus read_corpus(std::istream& in, CorpusFormat format, const std::string& name = "corpus");
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus load_corpus(const std::string& path, CorpusFormat format = CorpusFormat::qa_jsonl);
void save_corpus(const Corpus& corpus, const std::string& path);

struct SynthConfig {
  std::size_t n_groups = 50;
  std::size_t instances_per_group = 10;
  std::size_t n_slot_types = 20;
  bool context = true;
  double noise_rate = 0.0;
  // Probability that a group's answers use its preferred answer form.
  double form_consistency = 0.8;
};

// Deterministic stand-in for proprietary QA source data.
Corpus synth_corpus(const SynthConfig& config, std::uint64_t seed);

// Token -> id with PAD=0, BOS=1, EOS=2, UNK=3, then tokens by descending
// frequency (ties lexicographic).
class Vocab {
 public:
  static constexpr std::size_t kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr const char* kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

  Vocab();
  static Vocab build(const std::vector<std::vector<std::string>>& sequences);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class VocabField { slot_types, slot_values, dialog_act, target, context_lex, context_delex };

inline constexpr const char* kSlotSeparator = "<sep>";

// Token sequence an encoder/decoder stream sees for one instance.
std::vector<std::string> field_tokens(const MeaningRepresentation& mr, VocabField field);
std::vector<std::string> target_tokens(const std::string& reference, const MeaningRepresentation& mr);

Vocab build_vocab(const Corpus& corpus, VocabField field);

struct CorpusStats {
  std::size_t size = 0;
  std::size_t slots = 0;
  std::size_t das = 0;
  std::size_t words = 0;  // distinct tokens of delexicalized references
  std::size_t groups = 0;
  bool context = false;
};

CorpusStats corpus_stats(const Corpus& corpus);

}  // namespace qanlg
