#pragma once

// Slot error rates against the MR, the main reference and the reference set,
// plus corpus BLEU-4. SER comparisons run in delexicalized space: every text
// is (re-)delexicalized against the instance MR first, which leaves already
// delexicalized text unchanged.

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qanlg/data.hpp"

namespace qanlg {

// Slot type -> number of realizations. Placeholders are mapped back to the MR
// slot type they name; placeholders naming no MR type keep their uppercase key.
using SlotRealization = std::map<std::string, std::size_t>;

SlotRealization realized_slots(const std::string& text, const MeaningRepresentation& mr);

struct SerResult {
  std::size_t p = 0;  // missing (mr, trg) or unsupported (mtrg)
  std::size_t q = 0;  // redundant; always 0 for mtrg
  std::size_t n = 0;
  // Empty when n == 0.
  std::optional<double> score;
};

SerResult ser_mr(const std::string& output, const MeaningRepresentation& mr);
SerResult ser_trg(const std::string& output, const std::string& main_reference, const MeaningRepresentation& mr);
SerResult ser_mtrg(const std::string& output, const std::vector<std::string>& references,
                   const MeaningRepresentation& mr);

enum class SerVariant { mr, trg, mtrg };
const char* ser_variant_name(SerVariant v);

struct SerReport {
  SerVariant variant = SerVariant::mr;
  std::vector<SerResult> rows;
  double micro = 0.0;  // (Σp + Σq) / ΣN over defined rows
  double macro = 0.0;  // mean of defined per-row scores
  std::size_t skipped = 0;
};

SerReport aggregate_ser(SerVariant variant, std::vector<SerResult> rows);

struct BleuReport {
  double score = 0.0;
  double precisions[4] = {0, 0, 0, 0};
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

// Corpus BLEU-4 over whitespace tokens of already tokenized text.
BleuReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::vector<std::string>>& references);

enum class Metric { bleu, ser_mr, ser_trg, ser_mtrg };
const char* metric_name(Metric m);
// Throws UsageError listing the valid names.
Metric parse_metric(const std::string& name);
std::set<Metric> parse_metrics(const std::vector<std::string>& names);

struct EvaluationReport {
  std::vector<std::string> ids;
  std::vector<std::string> outputs;
  std::set<Metric> metrics;
  std::map<SerVariant, SerReport> ser;
  std::optional<BleuReport> bleu;
};

EvaluationReport evaluate_corpus(const std::vector<std::string>& outputs, const Corpus& corpus,
                                 const std::set<Metric>& metrics);

// One JSON object per instance, then one aggregate object.
void write_report_jsonl(const EvaluationReport& report, std::ostream& out);
// Aligned human-readable aggregate table.
void write_report_table(const EvaluationReport& report, std::ostream& out);

}  // namespace qanlg
