// Checkpoint layout (text):
//   qanlg-checkpoint 1
//   header <json: model config, vocabularies, history>
//   params <count>
//   <path> <rank> <dims...> <values as hex floats...>   one line per parameter
//   end
// Hex floats make the round trip bitwise exact.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "qanlg/config.hpp"
#include "qanlg/text.hpp"
#include "qanlg/trainer.hpp"

namespace qanlg {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kMagic = "qanlg-checkpoint";
constexpr int kVersion = 1;

ordered_json number_or_null(double d) { return std::isfinite(d) ? ordered_json(d) : ordered_json(nullptr); }

double number_from(const ordered_json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

ordered_json history_to_json(const TrainHistory& h) {
  ordered_json j;
  j["best_epoch"] = h.best_epoch;
  j["best_val_loss"] = number_or_null(h.best_val_loss);
  j["stop_reason"] = h.stop_reason;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : h.epochs) {
    ordered_json r;
    r["epoch"] = e.epoch;
    r["batches"] = e.batches;
    ordered_json tl, ta, dl;
    for (const auto& [k, v] : e.train_loss) tl[k] = number_or_null(v);
    for (const auto& [k, v] : e.train_accuracy) ta[k] = number_or_null(v);
    for (const auto& [k, v] : e.dev_loss) dl[k] = number_or_null(v);
    r["train_loss"] = tl;
    r["train_accuracy"] = ta;
    r["dev_loss"] = dl;
    r["val_loss"] = number_or_null(e.val_loss);
    epochs.push_back(r);
  }
  j["epochs"] = epochs;
  return j;
}

TrainHistory history_from_json(const ordered_json& j) {
  TrainHistory h;
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  h.best_val_loss = number_from(j.at("best_val_loss"));
  h.stop_reason = j.at("stop_reason").get<std::string>();
  for (const auto& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<std::size_t>();
    e.batches = r.at("batches").get<std::map<std::string, std::size_t>>();
    for (const auto& [k, v] : r.at("train_loss").items()) e.train_loss[k] = number_from(v);
    for (const auto& [k, v] : r.at("train_accuracy").items()) e.train_accuracy[k] = number_from(v);
    for (const auto& [k, v] : r.at("dev_loss").items()) e.dev_loss[k] = number_from(v);
    e.val_loss = number_from(r.at("val_loss"));
    h.epochs.push_back(std::move(e));
  }
  return h;
}

std::string hex_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", d);
  return buf;
}

}  // namespace

void write_checkpoint(const NlgModel& model, const TrainHistory& history, std::ostream& out) {
  ordered_json header;
  header["model"] = to_json(model.config());
  ordered_json inputs, targets;
  for (const auto& [k, v] : model.vocabs().inputs) inputs[encoder_name(k)] = v.tokens();
  for (const auto& [k, v] : model.vocabs().targets) targets[k] = v.tokens();
  header["vocab_inputs"] = inputs;
  header["vocab_targets"] = targets;
  header["history"] = history_to_json(history);

  out << kMagic << " " << kVersion << "\n";
  out << "header " << header.dump() << "\n";
  const auto& tensors = model.parameters().tensors();
  out << "params " << tensors.size() << "\n";
  for (const auto& [path, t] : tensors) {
    out << path << " " << t.rank();
    for (auto d : t.shape()) out << " " << d;
    for (double v : t.values()) out << " " << hex_double(v);
    out << "\n";
  }
  out << "end\n";
}

LoadedModel read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw LoadError("checkpoint: empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kMagic) throw LoadError("checkpoint: bad magic line");
    if (version != kVersion)
      throw LoadError("checkpoint: version " + std::to_string(version) + " != supported " +
                      std::to_string(kVersion));
  }
  if (!std::getline(in, line) || line.rfind("header ", 0) != 0) throw LoadError("checkpoint: missing header");
  ordered_json header;
  try {
    header = ordered_json::parse(line.substr(7));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  for (const char* key : {"model", "vocab_inputs", "vocab_targets", "history"})
    if (!header.contains(key)) throw LoadError(std::string("checkpoint: header lacks field '") + key + "'");

  ModelConfig config = model_config_from_json(header["model"]);
  ModelVocabs vocabs;
  TrainHistory history;
  try {
    for (const auto& [k, v] : header["vocab_inputs"].items())
      vocabs.inputs[parse_encoder_kind(k)] = Vocab::from_tokens(v.get<std::vector<std::string>>());
    for (const auto& [k, v] : header["vocab_targets"].items())
      vocabs.targets[k] = Vocab::from_tokens(v.get<std::vector<std::string>>());
    history = history_from_json(header["history"]);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: corrupt header: ") + e.what());
  } catch (const ContractError& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
  for (EncoderKind k : config.encoders)
    if (!vocabs.inputs.count(k)) throw LoadError(std::string("checkpoint: missing vocabulary for ") + encoder_name(k));
  for (const auto& t : config.tasks)
    if (!vocabs.targets.count(t)) throw LoadError("checkpoint: missing target vocabulary for task " + t);

  NlgModel model(config, vocabs);
  ParameterStore& store = model.parameters();

  if (!std::getline(in, line) || line.rfind("params ", 0) != 0) throw LoadError("checkpoint: missing params line");
  std::size_t count = 0;
  try {
    count = std::stoul(line.substr(7));
  } catch (const std::exception&) {
    throw LoadError("checkpoint: bad params count");
  }
  if (count != store.size())
    throw LoadError("checkpoint: " + std::to_string(count) + " parameters stored, model defines " +
                    std::to_string(store.size()));
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw LoadError("checkpoint: truncated parameter section");
    std::istringstream ls(line);
    std::string path;
    std::size_t rank = 0;
    if (!(ls >> path >> rank)) throw LoadError("checkpoint: bad parameter line " + std::to_string(i + 1));
    if (!store.contains(path)) throw LoadError("checkpoint: unknown parameter " + path);
    Tensor& t = store.get(path);
    Shape shape(rank);
    for (auto& d : shape)
      if (!(ls >> d)) throw LoadError("checkpoint: bad shape for " + path);
    if (shape != t.shape())
      throw LoadError("checkpoint: parameter " + path + " has shape " + shape_string(shape) + ", model expects " +
                      shape_string(t.shape()));
    auto values = t.mutable_values();
    for (auto& v : values) {
      std::string tok;
      if (!(ls >> tok)) throw LoadError("checkpoint: too few values for " + path);
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) throw LoadError("checkpoint: bad value '" + tok + "' for " + path);
    }
    std::string extra;
    if (ls >> extra) throw LoadError("checkpoint: too many values for " + path);
  }
  if (!std::getline(in, line) || line != "end") throw LoadError("checkpoint: missing end marker");
  return LoadedModel{std::move(model), std::move(history)};
}

void save_checkpoint(const NlgModel& model, const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  write_checkpoint(model, history, out);
  if (!out) throw IoError("failed writing checkpoint " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

void write_history(const TrainHistory& history, std::ostream& out) {
  std::vector<std::string> tasks;
  if (!history.epochs.empty())
    for (const auto& [t, _] : history.epochs.front().train_loss) tasks.push_back(t);
  out << "epoch";
  for (const auto& t : tasks) out << "\ttrain_loss." << t << "\ttrain_acc." << t << "\tdev_loss." << t;
  out << "\tval_loss\twall_seconds\n";
  char buf[64];
  auto num = [&](double d) {
    std::snprintf(buf, sizeof buf, "%.6f", d);
    return std::string(buf);
  };
  for (const auto& e : history.epochs) {
    out << e.epoch;
    for (const auto& t : tasks) {
      out << "\t" << num(e.train_loss.at(t)) << "\t" << num(e.train_accuracy.at(t)) << "\t"
          << (e.dev_loss.count(t) ? num(e.dev_loss.at(t)) : "nan");
    }
    out << "\t" << num(e.val_loss) << "\t" << num(e.wall_seconds) << "\n";
  }
  out << "# best_epoch " << history.best_epoch << " stop_reason " << history.stop_reason << "\n";
}

std::string fingerprint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

}  // namespace qanlg
