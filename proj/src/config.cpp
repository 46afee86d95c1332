#include "qanlg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "qanlg/text.hpp"

namespace qanlg {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw UsageError(key + ": expected on/off, got '" + v + "'");
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace

std::vector<std::string> split_list(const std::string& value, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(value);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void set_config_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  const std::string name = section + "." + key;
  try {
    if (section == "model") {
      auto& m = c.model;
      if (key == "encoders") {
        m.encoders.clear();
        for (const auto& e : split_list(value)) m.encoders.push_back(parse_encoder_kind(e));
      } else if (key == "utterance_mode") {
        m.utterance_mode = parse_utterance_mode(value);
      } else if (key == "tasks") {
        m.tasks = split_list(value);
      } else if (key == "embedding_dim") {
        m.embedding_dim = to_size(name, value);
      } else if (key == "hidden_dim") {
        m.hidden_dim = to_size(name, value);
      } else if (key == "max_decode_len") {
        m.max_decode_len = to_size(name, value);
      } else if (key == "seed") {
        m.seed = to_size(name, value);
      } else if (key == "share_input_embeddings") {
        m.share_input_embeddings = to_bool(name, value);
      } else if (key == "context_to_output") {
        m.context_to_output = to_bool(name, value);
      } else {
        throw UsageError("unknown key " + name);
      }
    } else if (section == "train") {
      auto& t = c.train;
      if (key == "batch_size") t.batch_size = to_size(name, value);
      else if (key == "max_epochs") t.max_epochs = to_size(name, value);
      else if (key == "learning_rate") t.learning_rate = to_double(name, value);
      else if (key == "patience") t.patience = to_size(name, value);
      else if (key == "min_delta") t.min_delta = to_double(name, value);
      else if (key == "clip_norm") t.clip_norm = to_double(name, value);
      else if (key == "seed") t.seed = to_size(name, value);
      else if (key == "eval_every") t.eval_every = to_size(name, value);
      else throw UsageError("unknown key " + name);
    } else if (section == "data") {
      if (key == "metrics") {
        c.data.metrics = split_list(value);
      } else if (key.rfind("task.", 0) == 0 && key.size() > 5) {
        c.data.tasks[key.substr(5)] = value;
      } else {
        throw UsageError("unknown key " + name);
      }
    } else {
      throw UsageError("unknown section [" + section + "]");
    }
  } catch (const ContractError& e) {
    throw UsageError(name + ": " + e.what());
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig c;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data")
        throw UsageError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value'");
    if (section.empty()) throw UsageError(where + "key outside any section");
    try {
      set_config_value(c, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  return parse_run_config(in, path);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw UsageError("override '" + assignment + "' is not section.key=value");
  set_config_value(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
                   trim(assignment.substr(eq + 1)));
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  const auto& m = c.model;
  std::vector<std::string> enc;
  for (auto e : m.encoders) enc.emplace_back(encoder_name(e));
  os << "[model]\n"
     << "encoders = " << join(enc, ",") << "\n"
     << "utterance_mode = " << utterance_mode_name(m.utterance_mode) << "\n"
     << "tasks = " << join(m.tasks, ",") << "\n"
     << "embedding_dim = " << m.embedding_dim << "\n"
     << "hidden_dim = " << m.hidden_dim << "\n"
     << "max_decode_len = " << m.max_decode_len << "\n"
     << "seed = " << m.seed << "\n"
     << "share_input_embeddings = " << (m.share_input_embeddings ? "on" : "off") << "\n"
     << "context_to_output = " << (m.context_to_output ? "on" : "off") << "\n";
  const auto& t = c.train;
  os << "\n[train]\n"
     << "batch_size = " << t.batch_size << "\n"
     << "max_epochs = " << t.max_epochs << "\n"
     << "learning_rate = " << fmt_double(t.learning_rate) << "\n"
     << "patience = " << t.patience << "\n"
     << "min_delta = " << fmt_double(t.min_delta) << "\n"
     << "clip_norm = " << fmt_double(t.clip_norm) << "\n"
     << "seed = " << t.seed << "\n"
     << "eval_every = " << t.eval_every << "\n";
  os << "\n[data]\n"
     << "metrics = " << join(c.data.metrics, ",") << "\n";
  for (const auto& [task, dir] : c.data.tasks) os << "task." << task << " = " << dir << "\n";
  return os.str();
}

ordered_json to_json(const ModelConfig& m) {
  ordered_json j;
  std::vector<std::string> enc;
  for (auto e : m.encoders) enc.emplace_back(encoder_name(e));
  j["encoders"] = enc;
  j["utterance_mode"] = utterance_mode_name(m.utterance_mode);
  j["tasks"] = m.tasks;
  j["embedding_dim"] = m.embedding_dim;
  j["hidden_dim"] = m.hidden_dim;
  j["max_decode_len"] = m.max_decode_len;
  j["seed"] = m.seed;
  j["share_input_embeddings"] = m.share_input_embeddings;
  j["context_to_output"] = m.context_to_output;
  return j;
}

ModelConfig model_config_from_json(const ordered_json& j) {
  auto field = [&](const char* key) -> const ordered_json& {
    if (!j.is_object() || !j.contains(key)) throw LoadError(std::string("model config lacks field '") + key + "'");
    return j.at(key);
  };
  try {
    ModelConfig m;
    m.encoders.clear();
    for (const auto& e : field("encoders")) m.encoders.push_back(parse_encoder_kind(e.get<std::string>()));
    m.utterance_mode = parse_utterance_mode(field("utterance_mode").get<std::string>());
    m.tasks = field("tasks").get<std::vector<std::string>>();
    m.embedding_dim = field("embedding_dim").get<std::size_t>();
    m.hidden_dim = field("hidden_dim").get<std::size_t>();
    m.max_decode_len = field("max_decode_len").get<std::size_t>();
    m.seed = field("seed").get<std::uint64_t>();
    m.share_input_embeddings = field("share_input_embeddings").get<bool>();
    m.context_to_output = field("context_to_output").get<bool>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("model config: ") + e.what());
  } catch (const ContractError& e) {
    throw LoadError(std::string("model config: ") + e.what());
  }
}

ordered_json to_json(const TrainConfig& t) {
  ordered_json j;
  j["batch_size"] = t.batch_size;
  j["max_epochs"] = t.max_epochs;
  j["learning_rate"] = t.learning_rate;
  j["patience"] = t.patience;
  j["min_delta"] = t.min_delta;
  j["clip_norm"] = t.clip_norm;
  j["seed"] = t.seed;
  j["eval_every"] = t.eval_every;
  return j;
}

}  // namespace qanlg
