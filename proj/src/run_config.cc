#include "natseg/run_config.h"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "natseg/rng.h"

namespace natseg {
namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& origin, const std::string& want) {
  throw ConfigError(origin + ": " + key + ": expected " + want + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const std::string& origin,
               const char* want) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(key, value, origin, want);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value, const std::string& origin) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, origin, "a boolean (true/false)");
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value,
                                  const std::string& origin)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeyDef {
  Setter set;
  Getter get;
};

KeyDef int_key(int RunConfig::*field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
            c.*field = parse_number<int>(k, v, o, "an integer");
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <typename S, typename F>
KeyDef nested_int(S RunConfig::*outer, F S::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
            (c.*outer).*field = parse_number<F>(k, v, o, "an integer");
          },
          [=](const RunConfig& c) { return std::to_string((c.*outer).*field); }};
}

template <typename S>
KeyDef nested_double(S RunConfig::*outer, double S::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
            (c.*outer).*field = parse_number<double>(k, v, o, "a number");
          },
          [=](const RunConfig& c) { return format_double((c.*outer).*field); }};
}

template <typename S>
KeyDef nested_bool(S RunConfig::*outer, bool S::*field) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
            (c.*outer).*field = parse_bool(k, v, o);
          },
          [=](const RunConfig& c) { return std::string((c.*outer).*field ? "true" : "false"); }};
}

KeyDef string_key(std::string RunConfig::*field) {
  return {[field](RunConfig& c, const std::string&, const std::string& v, const std::string&) {
            c.*field = v;
          },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::map<std::string, KeyDef>& schema() {
  static const std::map<std::string, KeyDef> table = [] {
    std::map<std::string, KeyDef> t;
    t["variant"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
                      try {
                        c.variant = parse_variant(v);
                      } catch (const ConfigError&) {
                        bad_value(k, v, o, "v1, v2 or resunet");
                      }
                    },
                    [](const RunConfig& c) { return variant_name(c.variant); }};
    t["input_size"] = int_key(&RunConfig::input_size);
    t["base_width"] = int_key(&RunConfig::base_width);
    t["nat.window"] = nested_int(&RunConfig::nat, &NATConfig::window);
    t["nat.proj_out"] = nested_bool(&RunConfig::nat, &NATConfig::proj_out);
    t["nat.proj_bias"] = nested_bool(&RunConfig::nat, &NATConfig::proj_bias);
    t["nat.residual"] = nested_bool(&RunConfig::nat, &NATConfig::residual);

    t["loss"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
                   try {
                     c.train.loss = parse_loss(v);
                   } catch (const ConfigError&) {
                     bad_value(k, v, o, "bce or iou");
                   }
                 },
                 [](const RunConfig& c) { return loss_name(c.train.loss); }};
    t["lr"] = nested_double(&RunConfig::train, &TrainConfig::lr);
    t["batch_size"] = nested_int(&RunConfig::train, &TrainConfig::batch_size);
    t["epochs"] = nested_int(&RunConfig::train, &TrainConfig::epochs);
    t["seed"] = nested_int(&RunConfig::train, &TrainConfig::seed);
    t["checkpoint_every"] = nested_int(&RunConfig::train, &TrainConfig::checkpoint_every);
    t["eval_every"] = nested_int(&RunConfig::train, &TrainConfig::eval_every);
    t["clip_norm"] = nested_double(&RunConfig::train, &TrainConfig::clip_norm);
    t["max_steps"] = nested_int(&RunConfig::train, &TrainConfig::max_steps);
    t["out_dir"] = {[](RunConfig& c, const std::string&, const std::string& v, const std::string&) {
                      c.train.out_dir = v;
                    },
                    [](const RunConfig& c) { return c.train.out_dir; }};

    t["preset"] = string_key(&RunConfig::preset);
    t["train_sources"] = int_key(&RunConfig::train_sources);
    t["data_root"] = string_key(&RunConfig::data_root);
    t["split.train"] = nested_double(&RunConfig::split, &SplitFractions::train);
    t["split.val"] = nested_double(&RunConfig::split, &SplitFractions::val);
    t["split.test"] = nested_double(&RunConfig::split, &SplitFractions::test);
    t["patch_size"] = int_key(&RunConfig::patch_size);
    t["patch_stride"] = int_key(&RunConfig::patch_stride);

    t["synth"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::string& o) {
                    c.synth = parse_bool(k, v, o);
                  },
                  [](const RunConfig& c) { return std::string(c.synth ? "true" : "false"); }};
    t["synth.num_samples"] = nested_int(&RunConfig::synth_cfg, &SynthConfig::num_samples);
    t["synth.min_lines"] = nested_int(&RunConfig::synth_cfg, &SynthConfig::min_lines);
    t["synth.max_lines"] = nested_int(&RunConfig::synth_cfg, &SynthConfig::max_lines);
    t["synth.min_width"] = nested_double(&RunConfig::synth_cfg, &SynthConfig::min_width);
    t["synth.max_width"] = nested_double(&RunConfig::synth_cfg, &SynthConfig::max_width);
    t["synth.texture_amplitude"] = nested_double(&RunConfig::synth_cfg, &SynthConfig::texture_amplitude);
    t["synth.noise_std"] = nested_double(&RunConfig::synth_cfg, &SynthConfig::noise_std);
    return t;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() { train.eval_every = 1; }

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  const auto& table = schema();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(origin + ": unknown key '" + key + "'");
  it->second.set(*this, key, value, origin);
  explicit_.insert(key);
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    set(key, trim(line.substr(eq + 1)), where);
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  load_text(text.str(), path);
}

void RunConfig::finalize() {
  if (!preset.empty()) {
    const ScenarioPreset& p = scenario_preset(preset);
    if (!is_set("loss")) train.loss = p.loss;
    if (!is_set("train_sources")) train_sources = p.train_sources;
  }
  synth_cfg.size = input_size;
  synth_cfg.seed = train.seed;
  if (train_sources < 0) throw ConfigError("train_sources: must be >= 0");
  if (patch_size < 0 || patch_stride < 0) throw ConfigError("patch_size/patch_stride: must be >= 0");
  if (patch_size != 0 && patch_size != input_size) {
    throw ConfigError("patch_size: must equal input_size (" + std::to_string(input_size) + ")");
  }
  if (base_width < 0) throw ConfigError("base_width: must be >= 1");
  validate_nat_config([&] {
    NATConfig n = nat;
    n.dim = 1;
    return n;
  }());
  model_config().validate();
  train.validate();
  if (synth) synth_cfg.validate();
}

int RunConfig::effective_base_width() const {
  if (base_width > 0) return base_width;
  return variant == Variant::kV2 ? 12 : 16;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = ModelConfig::make(variant, input_size, effective_base_width(), train.seed);
  const int dim = m.nat.dim;
  m.nat = nat;
  m.nat.dim = dim;
  return m;
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& [key, def] : schema()) out += key + "=" + def.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& entry : schema()) v.push_back(entry.first);
    return v;
  }();
  return names;
}

std::vector<SamplePair> take_sources(const std::vector<SamplePair>& samples, int count,
                                     std::uint64_t seed) {
  std::vector<std::string> sources;
  for (const auto& s : samples) sources.push_back(source_id(s.id));
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  if (count <= 0 || static_cast<std::size_t>(count) >= sources.size()) return samples;

  Rng rng(mix_seed(seed, 0x5eed5));
  rng.shuffle(sources);
  sources.resize(static_cast<std::size_t>(count));
  std::sort(sources.begin(), sources.end());
  std::vector<SamplePair> out;
  for (const auto& s : samples) {
    if (std::binary_search(sources.begin(), sources.end(), source_id(s.id))) out.push_back(s);
  }
  return out;
}

std::vector<SamplePair> fit_to_input(const std::vector<SamplePair>& samples, int input_size,
                                     int stride) {
  std::vector<SamplePair> out;
  for (const auto& s : samples) {
    if (s.height() == input_size && s.width() == input_size) {
      out.push_back(s);
    } else if (s.height() < input_size || s.width() < input_size) {
      throw ConfigError("sample '" + s.id + "' is " + std::to_string(s.height()) + "x" +
                        std::to_string(s.width()) + ", smaller than the model input " +
                        std::to_string(input_size));
    } else {
      for (auto& p : extract_patches(s, input_size, stride > 0 ? stride : input_size)) {
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  if (cfg.synth) {
    DataSplit parts = split(generate_synthetic(cfg.synth_cfg), cfg.split, cfg.train.seed);
    d.train = std::move(parts.train);
    d.val = std::move(parts.val);
    d.test = std::move(parts.test);
  } else if (!cfg.data_root.empty()) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(fs::path(cfg.data_root) / "train")) {
      throw IoError("data_root: '" + cfg.data_root + "' has no train/ directory");
    }
    d.train = load_split_dir(cfg.data_root, "train");
    if (fs::is_directory(fs::path(cfg.data_root) / "val")) d.val = load_split_dir(cfg.data_root, "val");
    if (fs::is_directory(fs::path(cfg.data_root) / "test")) d.test = load_split_dir(cfg.data_root, "test");
  } else {
    throw ConfigError("no training data: set data_root (--data) or synth (--synth)");
  }
  d.train = take_sources(d.train, cfg.train_sources, cfg.train.seed);
  d.train = fit_to_input(d.train, cfg.input_size, cfg.patch_stride);
  d.val = fit_to_input(d.val, cfg.input_size, cfg.patch_stride);
  d.test = fit_to_input(d.test, cfg.input_size, cfg.patch_stride);
  if (d.train.empty()) throw ConfigError("no training samples after splitting");
  return d;
}

}  // namespace natseg
