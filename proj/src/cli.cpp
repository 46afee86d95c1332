#include "qanlg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qanlg/config.hpp"
#include "qanlg/data.hpp"
#include "qanlg/metrics.hpp"
#include "qanlg/model.hpp"
#include "qanlg/text.hpp"
#include "qanlg/trainer.hpp"

namespace qanlg {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kCodeVersion = "qanlg 1.0";

bool parse_switch(const std::string& flag, const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw UsageError(flag + " expects on or off, got '" + v + "'");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string stats_table(const std::vector<std::pair<std::string, CorpusStats>>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %6s %4s %7s %7s %8s\n", "Dataset", "Size", "Slots", "DAs", "Words",
                "Groups", "Context");
  os << line;
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof line, "%-16s %8zu %6zu %4zu %7zu %7zu %8s\n", name.c_str(), s.size, s.slots, s.das,
                  s.words, s.groups, s.context ? "yes" : "no");
    os << line;
  }
  return os.str();
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t groups = 50, per_group = 10, slot_types = 20;
  std::string context = "on";
  double noise = 0.0, form_consistency = 0.8;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  cfg.n_groups = a.groups;
  cfg.instances_per_group = a.per_group;
  cfg.n_slot_types = a.slot_types;
  cfg.context = parse_switch("--context", a.context);
  cfg.noise_rate = a.noise;
  cfg.form_consistency = a.form_consistency;
  if (a.slot_types < 4) throw UsageError("--slot-types must be at least 4, got " + std::to_string(a.slot_types));
  if (a.groups == 0 || a.per_group == 0) throw UsageError("--groups and --per-group must be positive");
  if (a.noise < 0 || a.noise > 1) throw UsageError("--noise must lie in [0,1]");
  if (a.form_consistency < 0 || a.form_consistency > 1) throw UsageError("--form-consistency must lie in [0,1]");
  Corpus c = synth_corpus(cfg, a.seed);
  if (auto parent = fs::path(a.out).parent_path(); !parent.empty()) ensure_dir(parent.string());
  save_corpus(c, a.out);
  out << stats_table({{c.name, corpus_stats(c)}});
  return kExitOk;
}

// ---- prepare --------------------------------------------------------------

struct PrepareArgs {
  std::string in, out, format = "qa-jsonl", augment = "off", split = "80,10,10", partitions;
  std::uint64_t seed = 1;
};

SplitRatios parse_split(const std::string& s) {
  auto parts = split_list(s);
  if (parts.size() != 3) throw UsageError("--split expects three comma-separated numbers, got '" + s + "'");
  double v[3];
  for (int i = 0; i < 3; ++i) {
    try {
      v[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw UsageError("--split: bad number '" + parts[i] + "'");
    }
    if (v[i] < 0) throw UsageError("--split: negative ratio");
  }
  const double total = v[0] + v[1] + v[2];
  if (total <= 0) throw UsageError("--split: ratios sum to zero");
  return SplitRatios{v[0] / total, v[1] / total, 1.0 - v[0] / total - v[1] / total};
}

void check_split(const CorpusSplit& s, std::size_t expected) {
  const auto a = s.train.group_ids(), b = s.dev.group_ids(), c = s.test.group_ids();
  for (const auto& g : a)
    if (b.count(g) || c.count(g)) throw ContractError("split is not group-disjoint: " + g);
  for (const auto& g : b)
    if (c.count(g)) throw ContractError("split is not group-disjoint: " + g);
  if (s.train.instances.size() + s.dev.instances.size() + s.test.instances.size() != expected)
    throw ContractError("split lost or duplicated instances");
}

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  CorpusFormat format;
  format = parse_corpus_format(a.format);
  const bool augment = parse_switch("--augment", a.augment);
  const SplitRatios ratios = parse_split(a.split);
  PartitionSpec spec;
  for (const auto& p : split_list(a.partitions)) {
    try {
      spec.sizes.push_back(std::stoul(p));
    } catch (const std::exception&) {
      throw UsageError("--partitions: bad size '" + p + "'");
    }
  }

  Corpus corpus = load_corpus(a.in, format);
  FilterResult filtered = align_filter(corpus);
  Corpus kept = augment ? augment_corpus(filtered.kept) : filtered.kept;
  ensure_dir(a.out);

  {
    std::ofstream drops(a.out + "/drops.jsonl", std::ios::binary | std::ios::trunc);
    if (!drops) throw IoError("cannot write " + a.out + "/drops.jsonl");
    for (const auto& d : filtered.dropped) {
      ordered_json j;
      j["id"] = d.instance.id;
      j["reasons"] = d.reasons;
      drops << j.dump() << "\n";
    }
  }

  std::vector<std::pair<std::string, Corpus>> parts;
  if (spec.sizes.empty()) {
    parts.emplace_back("", kept);
  } else {
    try {
      auto ps = make_partitions(kept, spec);
      for (std::size_t k = 0; k < ps.size(); ++k) parts.emplace_back("p" + std::to_string(k + 1), std::move(ps[k]));
    } catch (const ContractError& e) {
      throw UsageError(std::string("--partitions: ") + e.what());
    }
    // Nestedness: every instance of a partition appears in the next one.
    for (std::size_t k = 1; k < parts.size(); ++k) {
      std::set<std::string> ids;
      for (const auto& inst : parts[k].second.instances) ids.insert(inst.id);
      for (const auto& inst : parts[k - 1].second.instances)
        if (!ids.count(inst.id)) throw ContractError("partitions are not nested: " + inst.id);
      for (const auto& t : parts[k - 1].second.ontology)
        if (!parts[k].second.ontology.count(t)) throw ContractError("partition ontologies are not nested: " + t);
    }
  }

  std::vector<std::pair<std::string, CorpusStats>> stats;
  stats.emplace_back(corpus.name, corpus_stats(corpus));
  for (auto& [name, part] : parts) {
    const std::string dir = name.empty() ? a.out : a.out + "/" + name;
    ensure_dir(dir);
    CorpusSplit split;
    try {
      split = split_by_group(part, ratios, a.seed);
    } catch (const ContractError& e) {
      throw DataError(std::string("cannot split ") + (name.empty() ? "corpus" : name) + ": " + e.what());
    }
    check_split(split, part.instances.size());
    save_corpus(split.train, dir + "/train.jsonl");
    save_corpus(split.dev, dir + "/dev.jsonl");
    save_corpus(split.test, dir + "/test.jsonl");
    stats.emplace_back(name.empty() ? "prepared" : name, corpus_stats(part));
  }
  out << "kept " << filtered.kept.instances.size() << " of " << corpus.instances.size() << " instances, dropped "
      << filtered.dropped.size() << "\n";
  out << stats_table(stats);
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, out;
  std::vector<std::string> data, sets;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  for (const auto& s : a.sets) apply_override(rc, s);

  std::vector<std::string> data_order;
  if (!a.data.empty()) {
    rc.data.tasks.clear();
    for (const auto& d : a.data) {
      const auto eq = d.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == d.size())
        throw UsageError("--data expects task=DIR, got '" + d + "'");
      const std::string task = d.substr(0, eq);
      if (rc.data.tasks.count(task)) throw UsageError("--data lists task " + task + " twice");
      rc.data.tasks[task] = d.substr(eq + 1);
      data_order.push_back(task);
    }
  } else {
    for (const auto& [task, _] : rc.data.tasks) data_order.push_back(task);
  }
  if (rc.data.tasks.empty()) throw UsageError("no training data: pass --data task=DIR");

  const std::set<std::string> cfg_tasks(rc.model.tasks.begin(), rc.model.tasks.end());
  const std::set<std::string> data_tasks(data_order.begin(), data_order.end());
  if (cfg_tasks != data_tasks) {
    if (rc.model.tasks != ModelConfig{}.tasks)
      throw UsageError("model.tasks (" + join(rc.model.tasks, ",") + ") does not match the data tasks (" +
                       join(data_order, ",") + ")");
    rc.model.tasks = data_order;
  }
  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const ContractError& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }

  std::map<std::string, TaskData> data;
  std::map<std::string, std::vector<Example>> train_sets;
  std::vector<std::pair<std::string, std::string>> fingerprints;
  for (const auto& task : rc.model.tasks) {
    const std::string dir = rc.data.tasks.at(task);
    const std::string train_path = dir + "/train.jsonl", dev_path = dir + "/dev.jsonl";
    if (!fs::exists(train_path)) throw UsageError("task " + task + ": missing " + train_path);
    if (!fs::exists(dev_path)) throw UsageError("task " + task + ": missing " + dev_path);
    Corpus train = load_corpus(train_path), dev = load_corpus(dev_path);
    if (train.instances.empty()) throw UsageError("task " + task + ": empty " + train_path);
    if (dev.instances.empty()) throw UsageError("task " + task + ": empty " + dev_path);
    if (rc.model.has(EncoderKind::utterance)) {
      for (const auto* c : {&train, &dev})
        for (const auto& inst : c->instances)
          if (!inst.mr.context)
            throw UsageError("utterance encoder enabled but instance " + inst.id + " of task " + task +
                             " has no context");
    }
    data[task] = TaskData{make_examples(train, rc.model), make_examples(dev, rc.model)};
    train_sets[task] = data[task].train;
    fingerprints.emplace_back(train_path, fingerprint_file(train_path));
    fingerprints.emplace_back(dev_path, fingerprint_file(dev_path));
  }

  NlgModel model(rc.model, build_model_vocabs(rc.model, train_sets));
  ensure_dir(a.out);
  if (!a.quiet)
    out << "architecture " << rc.model.architecture() << ", " << model.parameters().size() << " parameter tensors\n";

  auto fmt = [](double d) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", d);
    return std::string(b);
  };
  TrainHistory history = train(model, data, rc.train, [&](const EpochRecord& e) {
    if (!a.quiet) {
      out << "epoch " << e.epoch;
      for (const auto& task : rc.model.tasks) {
        out << "  " << task << ": train " << fmt(e.train_loss.at(task)) << " acc "
            << fmt(e.train_accuracy.at(task));
        if (e.dev_loss.count(task)) out << " dev " << fmt(e.dev_loss.at(task));
      }
      out << "\n";
    }
    return true;
  });

  save_checkpoint(model, history, a.out + "/model.ckpt");
  {
    std::ofstream h(a.out + "/history.tsv", std::ios::binary | std::ios::trunc);
    write_history(history, h);
  }
  write_text(a.out + "/config.txt", format_run_config(rc));

  std::ostringstream m;
  m << "code_version = " << kCodeVersion << "\n";
  m << "architecture = " << rc.model.architecture() << "\n";
  m << "shared_encoders = " << (rc.model.multitask() ? "yes" : "no") << "\n";
  m << "schedule = " << (rc.model.multitask() ? "round_robin:" + join(rc.model.tasks, ",") : "single") << "\n";
  m << "smaller_task_policy = cycle_reshuffled\n";
  m << "init = uniform(-0.08,0.08) weights, zero biases, seed " << rc.model.seed << "\n";
  m << "gradient_clip_norm = " << rc.train.clip_norm << "\n";
  m << "decoder_init = linear(mean of MR encoder finals)\n";
  for (const auto& [path, fp] : fingerprints) m << "dataset." << path << " = fnv1a64:" << fp << "\n";
  m << "checkpoint = fnv1a64:" << fingerprint_file(a.out + "/model.ckpt") << "\n";
  m << "best_epoch = " << history.best_epoch << "\n";
  m << "epochs_run = " << history.epochs.size() << "\n";
  m << "stop_reason = " << history.stop_reason << "\n";
  if (!history.epochs.empty())
    for (const auto& [task, acc] : history.epochs.back().train_accuracy)
      m << "final_train_accuracy." << task << " = " << fmt(acc) << "\n";
  m << "\n" << format_run_config(rc);
  write_text(a.out + "/manifest.txt", m.str());

  if (!history.epochs.empty()) {
    out << "best epoch " << history.best_epoch << " (" << history.stop_reason << ")";
    for (const auto& [task, acc] : history.epochs.back().train_accuracy)
      out << "  final train accuracy " << task << " " << fmt(acc);
    out << "\n";
  }
  return kExitOk;
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::string model, in, out, decode = "greedy", lexicalize = "on", task;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  std::size_t beam = 0;
  if (a.decode.rfind("beam:", 0) == 0) {
    try {
      beam = std::stoul(a.decode.substr(5));
    } catch (const std::exception&) {
      throw UsageError("--decode beam:K needs a number, got '" + a.decode + "'");
    }
    if (beam == 0) throw UsageError("--decode beam width must be >= 1");
  } else if (a.decode != "greedy") {
    throw UsageError("--decode must be greedy or beam:K, got '" + a.decode + "'");
  }
  const bool lexicalize = parse_switch("--lexicalize", a.lexicalize);
  LoadedModel loaded = load_checkpoint(a.model);
  const NlgModel& model = loaded.model;
  const std::string task = a.task.empty() ? model.config().tasks.front() : a.task;
  if (std::find(model.config().tasks.begin(), model.config().tasks.end(), task) == model.config().tasks.end())
    throw UsageError("model has no task '" + task + "' (tasks: " + join(model.config().tasks, ",") + ")");
  Corpus corpus = load_corpus(a.in);

  std::ofstream file(a.out, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + a.out);
  std::size_t unresolved = 0;
  for (const Instance& inst : corpus.instances) {
    const Example ex = make_input(inst, model.config());
    std::vector<std::size_t> ids = beam ? model.decode_beam(task, ex, beam).front().tokens : model.decode_greedy(task, ex);
    std::string text = join(model.tokens(task, ids));
    if (lexicalize) {
      try {
        text = relexicalize(text, inst.mr.slots);
      } catch (const UnresolvedPlaceholderError& e) {
        ++unresolved;
        err << "warning: " << inst.id << ": " << e.what() << "; emitting delexicalized text\n";
      }
    }
    ordered_json j;
    j["id"] = inst.id;
    j["output"] = text;
    file << j.dump() << "\n";
  }
  out << "generated " << corpus.instances.size() << " outputs, " << unresolved << " with unresolved placeholders\n";
  return kExitOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string outputs, corpus, metrics = "bleu,ser_mr,ser_trg,ser_mtrg", report;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const std::set<Metric> metrics = parse_metrics(split_list(a.metrics));
  Corpus corpus = load_corpus(a.corpus);
  std::ifstream in(a.outputs);
  if (!in) throw IoError("cannot read " + a.outputs);
  std::vector<std::string> outputs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(a.outputs + ": " + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("output") || !j["id"].is_string() ||
        !j["output"].is_string())
      throw SchemaError(a.outputs + ": expected {\"id\", \"output\"}", lineno);
    const std::size_t i = outputs.size();
    const std::string id = j["id"].get<std::string>();
    if (i >= corpus.instances.size())
      throw UsageError("outputs and corpus are misaligned: extra output id " + id);
    if (corpus.instances[i].id != id)
      throw UsageError("outputs and corpus are misaligned at id " + id + " (corpus has " + corpus.instances[i].id + ")");
    outputs.push_back(j["output"].get<std::string>());
  }
  if (outputs.size() != corpus.instances.size())
    throw UsageError("outputs and corpus are misaligned: no output for id " + corpus.instances[outputs.size()].id);

  EvaluationReport rep = evaluate_corpus(outputs, corpus, metrics);
  if (!a.report.empty()) {
    std::ofstream r(a.report, std::ios::binary | std::ios::trunc);
    if (!r) throw IoError("cannot write " + a.report);
    write_report_jsonl(rep, r);
  }
  write_report_table(rep, out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qanlg: MR-to-text generation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic QA corpus");
  s->add_option("--out", synth.out, "output corpus (jsonl)")->required();
  s->add_option("--groups", synth.groups, "question groups");
  s->add_option("--per-group", synth.per_group, "instances per group");
  s->add_option("--slot-types", synth.slot_types, "slot type inventory size (>= 4)");
  s->add_option("--context", synth.context, "on|off");
  s->add_option("--noise", synth.noise, "fraction of unaligned references");
  s->add_option("--form-consistency", synth.form_consistency, "how often a group uses its preferred answer form");
  s->add_option("--seed", synth.seed);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "delexicalize, filter, augment, partition and split a corpus");
  p->add_option("--in", prep.in)->required();
  p->add_option("--out", prep.out, "output directory")->required();
  p->add_option("--format", prep.format, "qa-jsonl|sfx");
  p->add_option("--augment", prep.augment, "on|off");
  p->add_option("--split", prep.split, "train,dev,test ratios");
  p->add_option("--partitions", prep.partitions, "increasing slot-type inventory sizes");
  p->add_option("--seed", prep.seed);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "run config file");
  t->add_option("--data", tr.data, "task=DIR with train.jsonl and dev.jsonl (repeatable)");
  t->add_option("--set", tr.sets, "section.key=value override (repeatable)");
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_flag("--quiet", tr.quiet);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "decode a corpus with a trained model");
  g->add_option("--model", gen.model, "checkpoint")->required();
  g->add_option("--in", gen.in)->required();
  g->add_option("--out", gen.out)->required();
  g->add_option("--decode", gen.decode, "greedy|beam:K");
  g->add_option("--lexicalize", gen.lexicalize, "on|off");
  g->add_option("--task", gen.task, "decoder to use (default: first task)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "score outputs against a corpus");
  e->add_option("--outputs", ev.outputs)->required();
  e->add_option("--corpus", ev.corpus)->required();
  e->add_option("--metrics", ev.metrics, "comma list of bleu, ser_mr, ser_trg, ser_mtrg");
  e->add_option("--report", ev.report, "report file (jsonl)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (p->parsed()) return cmd_prepare(prep, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (g->parsed()) return cmd_generate(gen, out, err);
    if (e->parsed()) return cmd_evaluate(ev, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace qanlg
