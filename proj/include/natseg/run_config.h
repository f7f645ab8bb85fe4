#ifndef NATSEG_RUN_CONFIG_H_
#define NATSEG_RUN_CONFIG_H_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "natseg/data.h"
#include "natseg/model.h"
#include "natseg/trainer.h"

namespace natseg {

// Everything a training run needs, as flat key=value settings. Values are
// layered defaults < config file < command-line flags; every key is checked
// against a fixed schema and unknown keys are errors.
struct RunConfig {
  Variant variant = Variant::kV2;
  int input_size = 48;
  int base_width = 0;  // 0 picks the desk width for the variant
  NATConfig nat;
  TrainConfig train;
  std::string preset;
  int train_sources = 0;  // 0 keeps every training source
  std::string data_root;
  SplitFractions split;
  int patch_size = 0;    // 0 = model input size
  int patch_stride = 0;  // 0 = patch size
  bool synth = false;
  SynthConfig synth_cfg;

  RunConfig();

  // `origin` names where the value came from ("run.cfg:12", "--lr"), and is
  // quoted in errors.
  void set(const std::string& key, const std::string& value, const std::string& origin);
  // Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
  void load_text(const std::string& text, const std::string& origin);
  void load_file(const std::string& path);

  // Applies the scenario preset to keys not set explicitly, syncs derived
  // values and validates. Call once after all layers are in.
  void finalize();

  ModelConfig model_config() const;
  int effective_base_width() const;
  bool is_set(const std::string& key) const { return explicit_.count(key) != 0; }

  // Sorted "key=value" lines covering every key.
  std::string render() const;
  static const std::vector<std::string>& keys();

 private:
  std::set<std::string> explicit_;
};

// Training and validation sets for a finalized config: synthetic data split
// by source, or <data_root>/{train,val}. Oversized tiles are cut into
// patch_size patches; a train_sources cap keeps a seeded subset of sources.
struct PreparedData {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  std::vector<SamplePair> test;
};
PreparedData prepare_data(const RunConfig& cfg);

// Keeps `count` sources (ids before '@'), chosen by a seeded shuffle; the
// result stays ordered by id. count <= 0 or >= available keeps everything.
std::vector<SamplePair> take_sources(const std::vector<SamplePair>& samples, int count,
                                     std::uint64_t seed);

// Brings tiles to the model input size: exact sizes pass through, larger
// tiles are cut on a grid, smaller ones are a ConfigError.
std::vector<SamplePair> fit_to_input(const std::vector<SamplePair>& samples, int input_size,
                                     int stride);

}  // namespace natseg

#endif  // NATSEG_RUN_CONFIG_H_
