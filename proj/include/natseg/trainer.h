#ifndef NATSEG_TRAINER_H_
#define NATSEG_TRAINER_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "natseg/adam.h"
#include "natseg/checkpoint.h"
#include "natseg/data.h"
#include "natseg/model.h"
#include "natseg/objectives.h"

namespace natseg {

struct TrainConfig {
  LossKind loss = LossKind::kBce;
  double lr = 1e-3;
  int batch_size = 4;
  int epochs = 10;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 = only the final checkpoint
  int eval_every = 1;        // epochs; 0 = never
  double clip_norm = 0.0;    // 0 = no clipping
  std::int64_t max_steps = 0;  // stop after this many optimizer steps in total; 0 = no cap
  std::string out_dir;       // checkpoints are written here when non-empty

  // lr 1e-4, batch 1, 40 epochs.
  static TrainConfig paper();
  void validate() const;
};

// Training-set scenarios: number of training sources and loss.
struct ScenarioPreset {
  std::string name;
  LossKind loss;
  int train_sources;
};
const std::vector<ScenarioPreset>& scenario_presets();
// Throws ConfigError for an unknown name.
const ScenarioPreset& scenario_preset(const std::string& name);

struct StepRecord {
  std::int64_t epoch;
  std::int64_t step;
  double loss;
};

struct EpochRecord {
  std::int64_t epoch;
  std::int64_t step;  // cumulative steps at epoch end
  double loss;        // mean training loss over the epoch
  std::optional<MetricsReport> val;
};

struct TrainLog {
  std::string loss_name;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool halted = false;
  std::string halt_reason;

  // epoch,step,loss,val_f1,val_dice_soft,val_auc (empty fields when not evaluated).
  std::string epochs_csv() const;
  std::string steps_csv() const;
};

struct EvalOptions {
  double threshold = 0.5;
  int batch_size = 4;
  bool per_image_auc = false;  // default pools all pixels
};

// Eval-mode, graph-free pass over `samples`. Counts pool over every pixel.
MetricsReport evaluate(Model& model, const std::vector<SamplePair>& samples,
                       const EvalOptions& opts = {});

// Graph-free probabilities for a batch, in eval mode; restores the prior mode.
Tensor predict(Model& model, const Tensor& images);

// Probabilities for an image of any size >= the model input: the model runs
// on a grid of input-sized windows (spaced by `stride`, last window flush
// with the border) and overlapping predictions are averaged. Returns
// (1,1,H,W).
Tensor predict_tiled(Model& model, const Tensor& image, int stride);

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  // Runs from the current cursor to cfg.epochs (or max_steps). With `progress`
  // set, one line per step and per epoch is written to it.
  TrainLog run(const std::vector<SamplePair>& train, const std::vector<SamplePair>& val,
               std::ostream* progress = nullptr);

  // Restores model, optimizer and cursor; the loss kind must agree.
  void resume(const Checkpoint& ck);
  Checkpoint snapshot();

  const TrainCursor& cursor() const { return cursor_; }
  const AdamState& adam() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }

  // Sample order for an epoch: a permutation seeded by (seed, epoch).
  static std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch);

 private:
  void save_to(const std::string& name);

  Model& model_;
  TrainConfig cfg_;
  AdamState adam_;
  TrainCursor cursor_;
};

}  // namespace natseg

#endif  // NATSEG_TRAINER_H_
