#include "cdseg/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cdseg/error.hpp"

namespace cdseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') fail(ErrorKind::kConfig, key + ": not a number: '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') fail(ErrorKind::kConfig, key + ": not an integer: '" + v + "'");
  return i;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail(ErrorKind::kConfig, key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeyHandler {
  ConfigKey doc;
  Setter set;
  Getter get;
};

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = [] {
    std::vector<KeyHandler> t;
    auto real = [&t](const char* key, const char* def, const char* help, auto member) {
      t.push_back({{key, def, help},
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = to_double(k, v);
                   },
                   [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }});
    };
    auto integer = [&t](const char* key, const char* def, const char* help, auto member) {
      t.push_back({{key, def, help},
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_int(k, v));
                   },
                   [member](const RunConfig& c) {
                     return std::to_string(member(const_cast<RunConfig&>(c)));
                   }});
    };
    real("lr0", "0.01", "initial learning rate", [](RunConfig& c) -> double& { return c.train.lr0; });
    real("momentum", "0.9", "SGD momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    real("decay", "0.95", "per-epoch learning-rate decay factor",
         [](RunConfig& c) -> double& { return c.train.decay; });
    integer("epochs", "30", "epochs per stage", [](RunConfig& c) -> int& { return c.train.epochs; });
    integer("batch_size", "4", "batch size (stage 2 needs >= 2)",
            [](RunConfig& c) -> int& { return c.train.batch_size; });
    real("tau", "0.5", "contrastive temperature", [](RunConfig& c) -> double& { return c.train.tau; });
    integer("seed", "0", "training seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    t.push_back({{"use_cdfm", "true", "stage 2: add the contrastive alignment loss"},
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.train.use_cdfm = to_bool(k, v); },
                 [](const RunConfig& c) { return std::string(c.train.use_cdfm ? "true" : "false"); }});
    t.push_back({{"modality", "rgb", "stage 1 input modality: rgb or depth"},
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "rgb") c.modality = Modality::kRgb;
                   else if (v == "depth") c.modality = Modality::kDepth;
                   else fail(ErrorKind::kConfig, k + ": expected rgb or depth");
                 },
                 [](const RunConfig& c) { return std::string(c.modality == Modality::kRgb ? "rgb" : "depth"); }});
    t.push_back({{"stage_channels", "8,16,24,32,40", "encoder widths of the five stages"},
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   const auto parts = split(v, ',');
                   if (parts.size() != kNumStages) fail(ErrorKind::kConfig, k + ": expected 5 comma-separated ints");
                   for (int s = 0; s < kNumStages; ++s) {
                     c.encoder.stage_channels[s] = static_cast<int>(to_int(k, parts[s]));
                   }
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (int i = 0; i < kNumStages; ++i) {
                     s += (i ? "," : "") + std::to_string(c.encoder.stage_channels[i]);
                   }
                   return s;
                 }});
    integer("kernel_size", "3", "encoder/decoder kernel size (odd)",
            [](RunConfig& c) -> int& { return c.encoder.kernel_size; });
    integer("decoder_min_channels", "8", "lower bound on decoder widths",
            [](RunConfig& c) -> int& { return c.encoder.decoder_min_channels; });
    integer("width", "96", "generated frame width (multiple of 32)", [](RunConfig& c) -> int& { return c.width; });
    integer("height", "96", "generated frame height (multiple of 32)", [](RunConfig& c) -> int& { return c.height; });
    t.push_back({{"presets", "HF,HR,LF,LR", "scenario presets to generate"},
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.presets = split(v, ',');
                   for (const auto& p : c.presets) lunar::preset(p);
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.presets.size(); ++i) s += (i ? "," : "") + c.presets[i];
                   return s;
                 }});
    integer("craters_min", "2", "minimum craters per scene", [](RunConfig& c) -> int& { return c.craters.min; });
    integer("craters_max", "5", "maximum craters per scene", [](RunConfig& c) -> int& { return c.craters.max; });
    integer("rocks_min", "3", "minimum rocks per scene", [](RunConfig& c) -> int& { return c.rocks.min; });
    integer("rocks_max", "8", "maximum rocks per scene", [](RunConfig& c) -> int& { return c.rocks.max; });
    real("crater_radius_min", "0.8", "smallest crater bowl radius (m)",
         [](RunConfig& c) -> double& { return c.crater_radius.min; });
    real("crater_radius_max", "2.2", "largest crater bowl radius (m)",
         [](RunConfig& c) -> double& { return c.crater_radius.max; });
    real("rock_radius_min", "0.25", "smallest rock semi-axis (m)",
         [](RunConfig& c) -> double& { return c.rock_radius.min; });
    real("rock_radius_max", "0.7", "largest rock semi-axis (m)",
         [](RunConfig& c) -> double& { return c.rock_radius.max; });
    integer("per_preset", "60", "train samples per preset", [](RunConfig& c) -> int& { return c.per_preset; });
    integer("test_per_preset", "15", "test samples per preset",
            [](RunConfig& c) -> int& { return c.test_per_preset; });
    integer("threads", "1", "generation worker threads", [](RunConfig& c) -> int& { return c.threads; });
    t.push_back({{"data", "", "dataset root"},
                 [](RunConfig& c, const std::string&, const std::string& v) { c.data = v; },
                 [](const RunConfig& c) { return c.data; }});
    t.push_back({{"out", "", "output path"},
                 [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
                 [](const RunConfig& c) { return c.out; }});
    return t;
  }();
  return table;
}

}  // namespace

std::vector<lunar::SceneSpec> RunConfig::scene_specs() const {
  std::vector<lunar::SceneSpec> out;
  for (const auto& tag : presets) {
    auto s = lunar::preset(tag, width, height);
    s.craters = craters;
    s.rocks = rocks;
    s.crater_radius = crater_radius;
    s.rock_radius = rock_radius;
    s.validate();
    out.push_back(s);
  }
  return out;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& h : handlers()) k.push_back(h.doc);
    return k;
  }();
  return keys;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const KeyHandler*> by_key;
  for (const auto& h : handlers()) by_key[h.doc.key] = &h;

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    cfg.source_lines.push_back(line);
    std::string body = line.substr(0, line.find('#'));
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(cfg, key, value);
  }
  cfg.encoder.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& h : handlers()) out += std::string(h.doc.key) + "=" + h.get(cfg) + "\n";
  return out;
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& l : cfg.source_lines) out += "# config: " + l + "\n";
  std::istringstream eff(format_config(cfg));
  std::string line;
  while (std::getline(eff, line)) out += "# effective: " + line + "\n";
  return out;
}

}  // namespace cdseg
