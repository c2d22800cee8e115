#include "depthcontrast/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "depthcontrast/json_fields.hpp"

namespace dc {

using json = nlohmann::ordered_json;

std::string_view precision_name(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

void RunConfig::validate() const {
  try {
    model.validate();
    generator.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  pretrain.validate();
  downstream.validate();
  if (pretrain.mode != TrainMode::pretrain) throw ConfigError("pretrain section must use pretrain mode");
  if (downstream.mode == TrainMode::pretrain) throw ConfigError("downstream section cannot use pretrain mode");
  if (runs < 1) throw ConfigError("protocol.runs must be >= 1");
  ProtocolSpec::parse(protocol);
  const Index reach = model.encoder.output_size(std::max(pretrain.crop_size, downstream.crop_size));
  if (reach < 1) throw ConfigError("crop size too small for the encoder stages");
}

RunConfig RunConfig::from_preset(std::string_view name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper-faithful") {
    c.preset = "paper-faithful";
    c.model.projector = ProjectionHeadConfig::scaled(1.0);
    c.pretrain = TrainConfig::faithful(TrainMode::pretrain);
    c.downstream = TrainConfig::faithful(TrainMode::finetune);
    c.generator.image_size = 256;
    return c;
  }
  std::string valid;
  for (auto n : kPresetNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown preset '" + std::string(name) + "' (valid: " + valid + ")");
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["precision"] = std::string(precision_name(c.precision));
  j["model"] = to_json(c.model);
  json pre = to_json(c.pretrain);
  pre.erase("mode");
  pre.erase("seed");
  json down = to_json(c.downstream);
  down.erase("mode");
  down.erase("seed");
  j["pretrain"] = pre;
  j["downstream"] = down;
  j["generator"] = {{"scale", c.generator.scale}, {"image_size", c.generator.image_size}, {"seed", c.generator_seed}};
  j["protocol"] = {{"name", c.protocol}, {"runs", c.runs}, {"semi", c.semi}};
  return j;
}

namespace {

// Line of the first occurrence of every path component in order, e.g.
// "model.encoder.stages[1].stride". Returns 0 when the text has no match.
int locate(std::string_view text, const std::string& path) {
  std::size_t pos = 0;
  int found = 0;
  std::stringstream parts(path);
  std::string part;
  while (std::getline(parts, part, '.')) {
    const std::string key = "\"" + part.substr(0, part.find('[')) + "\"";
    const std::size_t at = text.find(key, pos);
    if (at == std::string_view::npos) break;
    pos = at + key.size();
    found = int(std::count(text.begin(), text.begin() + std::ptrdiff_t(at), '\n')) + 1;
  }
  return found;
}

void read_train(JsonFields& f, TrainConfig& t, bool pretrain) {
  f.field("learning_rate", t.learning_rate);
  f.field("batch_size", t.batch_size);
  f.field("epochs", t.epochs);
  f.field("crop_size", t.crop_size);
  if (pretrain)
    f.field("tau", t.tau);
  else
    f.field("dropout_rate", t.dropout_rate);
  f.finish();
}

// Reads one section; ConfigErrors without a path get the section name.
template <typename Fn>
void section(const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(name, 0) == 0) throw;
    throw ConfigError(name + ": " + what);
  } catch (const ValueError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

RunConfig parse_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string preset = "desk";
  JsonFields top(j, "config");
  section("preset", [&] { top.field("preset", preset); });
  RunConfig c = RunConfig::from_preset(preset);

  section("seed", [&] { top.field("seed", c.seed); });
  std::string precision = std::string(precision_name(c.precision));
  section("precision", [&] {
    top.field("precision", precision);
    if (precision == "float32")
      c.precision = Precision::float32;
    else if (precision == "float64")
      c.precision = Precision::float64;
    else
      throw ConfigError("precision: expected float32 or float64, got '" + precision + "'");
  });
  if (const json* m = top.child("model")) {
    // Sections given in the file replace the preset's sections wholesale.
    const ModelConfig parsed = model_config_from_json(*m);
    if (m->contains("encoder")) c.model.encoder = parsed.encoder;
    if (m->contains("projector")) c.model.projector = parsed.projector;
    if (m->contains("classifier")) c.model.classifier = parsed.classifier;
    section("model", [&] { c.model.validate(); });
  }
  if (const json* p = top.child("pretrain"))
    section("pretrain", [&] {
      JsonFields f(*p, "pretrain");
      read_train(f, c.pretrain, true);
      c.pretrain.validate();
    });
  if (const json* d = top.child("downstream"))
    section("downstream", [&] {
      JsonFields f(*d, "downstream");
      read_train(f, c.downstream, false);
      c.downstream.validate();
    });
  if (const json* g = top.child("generator"))
    section("generator", [&] {
      JsonFields f(*g, "generator");
      f.field("scale", c.generator.scale);
      f.field("image_size", c.generator.image_size);
      f.field("seed", c.generator_seed);
      f.finish();
      c.generator.validate();
    });
  if (const json* p = top.child("protocol"))
    section("protocol", [&] {
      JsonFields f(*p, "protocol");
      f.field("name", c.protocol);
      f.field("runs", c.runs);
      f.field("semi", c.semi);
      f.finish();
      ProtocolSpec::parse(c.protocol);
    });
  top.finish();
  c.validate();
  return c;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto upto = text.substr(0, std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size()));
    const int line = int(std::count(upto.begin(), upto.end(), '\n')) + 1;
    throw ConfigError(source + ":" + std::to_string(line) + ": " + e.what());
  }
  try {
    return parse_json(j);
  } catch (const ConfigError& e) {
    std::string what = e.what();
    // "path: message" or "path: unknown key 'k'"
    std::string path = what.substr(0, what.find(':'));
    if (path.rfind("config", 0) == 0) path = path.size() > 6 ? path.substr(7) : "";
    const std::size_t q = what.find("unknown key '");
    if (q != std::string::npos) {
      const std::string key = what.substr(q + 13, what.find('\'', q + 13) - q - 13);
      path = path.empty() ? key : path + "." + key;
    }
    const int line = path.empty() ? 0 : locate(text, path);
    throw ConfigError(source + (line > 0 ? ":" + std::to_string(line) : "") + ": " + what);
  }
}

RunConfig load_run_config(const std::string& name_or_path) {
  if (std::find(kPresetNames.begin(), kPresetNames.end(), name_or_path) != kPresetNames.end()) {
    RunConfig c = RunConfig::from_preset(name_or_path);
    c.validate();
    return c;
  }
  std::ifstream in(name_or_path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + name_or_path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), name_or_path);
}

}  // namespace dc
