#include "qanlg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"
#include "qanlg/errors.hpp"
#include "qanlg/text.hpp"

namespace qanlg {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t count_matches(const std::vector<std::string>& tokens, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > tokens.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + needle.size() <= tokens.size();) {
    if (std::equal(needle.begin(), needle.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
      ++n;
      i += needle.size();
    } else {
      ++i;
    }
  }
  return n;
}

SerResult compare(const SlotRealization& expected, const SlotRealization& found) {
  SerResult r;
  for (const auto& [type, count] : expected) {
    r.n += count;
    auto it = found.find(type);
    const std::size_t f = it == found.end() ? 0 : it->second;
    if (f < count) r.p += count - f;
  }
  for (const auto& [type, count] : found) {
    auto it = expected.find(type);
    const std::size_t e = it == expected.end() ? 0 : it->second;
    if (count > e) r.q += count - e;
  }
  if (r.n > 0) r.score = static_cast<double>(r.p + r.q) / static_cast<double>(r.n);
  return r;
}

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  Ngrams out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

ordered_json ser_json(const SerResult& r) {
  ordered_json j;
  j["p"] = r.p;
  j["q"] = r.q;
  j["n"] = r.n;
  j["score"] = r.score ? ordered_json(*r.score) : ordered_json(nullptr);
  return j;
}

}  // namespace

SlotRealization realized_slots(const std::string& text, const MeaningRepresentation& mr) {
  SlotRealization out;
  const std::vector<std::string> tokens = split_whitespace(delexicalize(text, mr.slots).text);
  std::map<std::string, std::string> type_of_key;
  for (const Slot& s : mr.slots) type_of_key.emplace(to_upper(s.type), s.type);
  for (const auto& tok : tokens) {
    auto ph = parse_placeholder(tok);
    if (!ph) continue;
    auto it = type_of_key.find(ph->type_key);
    ++out[it == type_of_key.end() ? ph->type_key : it->second];
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const Slot& s : mr.slots) {
    if (slot_kind(s) == SlotKind::noun_phrase || !seen.insert({s.type, s.value}).second) continue;
    if (auto n = count_matches(tokens, tokenize(s.value))) out[s.type] += n;
  }
  return out;
}

SerResult ser_mr(const std::string& output, const MeaningRepresentation& mr) {
  SlotRealization expected;
  for (const Slot& s : mr.slots) ++expected[s.type];
  return compare(expected, realized_slots(output, mr));
}

SerResult ser_trg(const std::string& output, const std::string& main_reference, const MeaningRepresentation& mr) {
  return compare(realized_slots(main_reference, mr), realized_slots(output, mr));
}

SerResult ser_mtrg(const std::string& output, const std::vector<std::string>& references,
                   const MeaningRepresentation& mr) {
  if (references.empty()) throw ContractError("ser_mtrg: empty reference set");
  std::set<std::string> in_refs;
  for (const auto& ref : references)
    for (const auto& [type, _] : realized_slots(ref, mr)) in_refs.insert(type);
  SerResult r;
  r.n = in_refs.size();
  for (const auto& [type, _] : realized_slots(output, mr))
    if (!in_refs.count(type)) ++r.p;
  if (r.n > 0) r.score = static_cast<double>(r.p) / static_cast<double>(r.n);
  return r;
}

const char* ser_variant_name(SerVariant v) {
  switch (v) {
    case SerVariant::mr: return "ser_mr";
    case SerVariant::trg: return "ser_trg";
    case SerVariant::mtrg: return "ser_mtrg";
  }
  return "?";
}

SerReport aggregate_ser(SerVariant variant, std::vector<SerResult> rows) {
  SerReport rep;
  rep.variant = variant;
  std::size_t num = 0, den = 0, defined = 0;
  double sum = 0.0;
  for (const auto& r : rows) {
    if (!r.score) {
      ++rep.skipped;
      continue;
    }
    num += r.p + r.q;
    den += r.n;
    sum += *r.score;
    ++defined;
  }
  rep.micro = den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  rep.macro = defined ? sum / static_cast<double>(defined) : 0.0;
  rep.rows = std::move(rows);
  return rep;
}

BleuReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size())
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " reference sets");
  BleuReport rep;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) throw ContractError("bleu: empty reference set at index " + std::to_string(i));
    const auto hyp = split_whitespace(hypotheses[i]);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references[i]) refs.push_back(split_whitespace(r));

    const std::size_t c = hyp.size();
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    rep.hypothesis_length += c;
    rep.reference_length += best;

    for (std::size_t n = 1; n <= 4; ++n) {
      Ngrams max_ref;
      for (const auto& r : refs)
        for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : ngrams(hyp, n)) {
        auto it = max_ref.find(g);
        rep.matches[n - 1] += std::min(k, it == max_ref.end() ? 0 : it->second);
      }
      rep.totals[n - 1] += c >= n ? c - n + 1 : 0;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    rep.precisions[n] = rep.totals[n] ? static_cast<double>(rep.matches[n]) / static_cast<double>(rep.totals[n]) : 0.0;
    if (rep.matches[n] == 0) zero = true;
    else log_sum += std::log(rep.precisions[n]);
  }
  const double c = static_cast<double>(rep.hypothesis_length), r = static_cast<double>(rep.reference_length);
  rep.brevity_penalty = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  rep.score = zero ? 0.0 : rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::bleu: return "bleu";
    case Metric::ser_mr: return "ser_mr";
    case Metric::ser_trg: return "ser_trg";
    case Metric::ser_mtrg: return "ser_mtrg";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  for (Metric m : {Metric::bleu, Metric::ser_mr, Metric::ser_trg, Metric::ser_mtrg})
    if (name == metric_name(m)) return m;
  throw UsageError("unknown metric '" + name + "' (valid: bleu, ser_mr, ser_trg, ser_mtrg)");
}

std::set<Metric> parse_metrics(const std::vector<std::string>& names) {
  if (names.empty()) throw UsageError("no metrics selected (valid: bleu, ser_mr, ser_trg, ser_mtrg)");
  std::set<Metric> out;
  for (const auto& n : names) out.insert(parse_metric(n));
  return out;
}

EvaluationReport evaluate_corpus(const std::vector<std::string>& outputs, const Corpus& corpus,
                                 const std::set<Metric>& metrics) {
  if (outputs.size() != corpus.instances.size())
    throw ContractError("evaluate_corpus: " + std::to_string(outputs.size()) + " outputs for " +
                        std::to_string(corpus.instances.size()) + " instances");
  EvaluationReport rep;
  rep.metrics = metrics;
  std::vector<SerResult> mr, trg, mtrg;
  std::vector<std::string> hyps;
  std::vector<std::vector<std::string>> refs;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Instance& inst = corpus.instances[i];
    const std::string out = normalize_text(outputs[i]);
    rep.ids.push_back(inst.id);
    rep.outputs.push_back(out);
    if (metrics.count(Metric::ser_mr)) mr.push_back(ser_mr(out, inst.mr));
    if (metrics.count(Metric::ser_trg)) trg.push_back(ser_trg(out, inst.main_reference, inst.mr));
    if (metrics.count(Metric::ser_mtrg)) mtrg.push_back(ser_mtrg(out, inst.references, inst.mr));
    hyps.push_back(out);
    std::vector<std::string> r;
    for (const auto& ref : inst.references) r.push_back(normalize_text(ref));
    refs.push_back(std::move(r));
  }
  if (metrics.count(Metric::ser_mr)) rep.ser[SerVariant::mr] = aggregate_ser(SerVariant::mr, std::move(mr));
  if (metrics.count(Metric::ser_trg)) rep.ser[SerVariant::trg] = aggregate_ser(SerVariant::trg, std::move(trg));
  if (metrics.count(Metric::ser_mtrg)) rep.ser[SerVariant::mtrg] = aggregate_ser(SerVariant::mtrg, std::move(mtrg));
  if (metrics.count(Metric::bleu)) rep.bleu = bleu(hyps, refs);
  return rep;
}

void write_report_jsonl(const EvaluationReport& report, std::ostream& out) {
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    ordered_json j;
    j["id"] = report.ids[i];
    j["output"] = report.outputs[i];
    for (const auto& [v, r] : report.ser) j[ser_variant_name(v)] = ser_json(r.rows[i]);
    out << j.dump() << "\n";
  }
  ordered_json agg;
  agg["instances"] = report.ids.size();
  agg["headline"] = "micro";
  agg["slot_counting"] = "multiset per slot type";
  if (report.bleu) {
    const auto& b = *report.bleu;
    ordered_json bj;
    bj["score"] = b.score;
    bj["precisions"] = std::vector<double>(b.precisions, b.precisions + 4);
    bj["brevity_penalty"] = b.brevity_penalty;
    bj["hypothesis_length"] = b.hypothesis_length;
    bj["reference_length"] = b.reference_length;
    agg["bleu"] = bj;
  }
  for (const auto& [v, r] : report.ser) {
    ordered_json sj;
    sj["micro"] = r.micro;
    sj["macro"] = r.macro;
    sj["skipped"] = r.skipped;
    agg[ser_variant_name(v)] = sj;
  }
  ordered_json wrap;
  wrap["aggregate"] = agg;
  out << wrap.dump() << "\n";
}

void write_report_table(const EvaluationReport& report, std::ostream& out) {
  char line[128];
  out << "instances: " << report.ids.size() << "  (SER headline = micro; slots counted as multisets per type)\n";
  std::snprintf(line, sizeof line, "%-10s %10s %10s %8s\n", "metric", "micro", "macro", "skipped");
  out << line;
  if (report.bleu) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10s %8s\n", "BLEU", report.bleu->score, "-", "-");
    out << line;
  }
  const char* labels[] = {"SER_mr", "SER_trg", "SER_mtrg"};
  for (const auto& [v, r] : report.ser) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %8zu\n", labels[static_cast<int>(v)], r.micro, r.macro,
                  r.skipped);
    out << line;
  }
}

}  // namespace qanlg
