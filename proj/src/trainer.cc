#include "natseg/trainer.h"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "natseg/autograd.h"
#include "natseg/rng.h"

namespace natseg {

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.lr = 1e-4;
  c.batch_size = 1;
  c.epochs = 40;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr: must be a finite value >= 0");
  if (batch_size < 1) throw ConfigError("batch: must be >= 1");
  if (epochs < 0) throw ConfigError("epochs: must be >= 0");
  if (checkpoint_every < 0 || eval_every < 0) throw ConfigError("checkpoint_every/eval_every: must be >= 0");
  if (clip_norm < 0.0) throw ConfigError("clip_norm: must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps: must be >= 0");
}

const std::vector<ScenarioPreset>& scenario_presets() {
  static const std::vector<ScenarioPreset> presets = {
      {"mrd100", LossKind::kBce, 100},
      {"mrd800", LossKind::kBce, 800},
      {"mrd100iou", LossKind::kIou, 100},
      {"mrd800iou", LossKind::kIou, 800},
  };
  return presets;
}

const ScenarioPreset& scenario_preset(const std::string& name) {
  for (const auto& p : scenario_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + name + "' (expected mrd100, mrd800, mrd100iou or mrd800iou)");
}

std::string TrainLog::epochs_csv() const {
  std::ostringstream os;
  os << "epoch,step,loss,val_f1,val_dice_soft,val_auc\n";
  os << std::setprecision(8);
  for (const auto& e : epochs) {
    os << e.epoch << "," << e.step << "," << e.loss << ",";
    if (e.val) {
      os << e.val->f1 << "," << e.val->dice_soft << ",";
      if (!e.val->auc_undefined) os << e.val->auc;
    } else {
      os << ",,";
    }
    os << "\n";
  }
  return os.str();
}

std::string TrainLog::steps_csv() const {
  std::ostringstream os;
  os << "epoch,step,loss\n" << std::setprecision(9);
  for (const auto& s : steps) os << s.epoch << "," << s.step << "," << s.loss << "\n";
  return os.str();
}

Tensor predict(Model& model, const Tensor& images) {
  const NormMode prior = model.mode();
  model.set_mode(NormMode::kEval);
  NoGradScope no_grad;
  Tensor out;
  try {
    out = model.forward(images);
  } catch (...) {
    model.set_mode(prior);
    throw;
  }
  model.set_mode(prior);
  return out;
}

Tensor predict_tiled(Model& model, const Tensor& image, int stride) {
  const Shape& s = image.shape();
  const int th = model.config().input_h, tw = model.config().input_w;
  if (s.n != 1 || s.c != 3) throw ShapeError("predict: expected a (1,3,H,W) image, got " + s.str());
  if (s.h < th || s.w < tw) {
    throw ConfigError("predict: image " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                      " is smaller than the model input " + std::to_string(tw) + "x" +
                      std::to_string(th));
  }
  const auto ys = grid_offsets(s.h, th, stride);
  const auto xs = grid_offsets(s.w, tw, stride);
  std::vector<double> acc(static_cast<std::size_t>(s.h) * s.w, 0.0);
  std::vector<int> hits(acc.size(), 0);
  SamplePair whole{image, Tensor::create(Shape{1, 1, s.h, s.w}), "image"};
  for (int y : ys) {
    for (int x : xs) {
      const Tensor p = predict(model, crop(whole, y, x, th, tw, "").image);
      const auto pd = p.data();
      for (int r = 0; r < th; ++r) {
        for (int c = 0; c < tw; ++c) {
          const std::size_t at = static_cast<std::size_t>(y + r) * s.w + x + c;
          acc[at] += pd[static_cast<std::size_t>(r) * tw + c];
          hits[at] += 1;
        }
      }
    }
  }
  Tensor out = Tensor::create(Shape{1, 1, s.h, s.w});
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < acc.size(); ++i) od[i] = static_cast<Real>(acc[i] / hits[i]);
  return out;
}

MetricsReport evaluate(Model& model, const std::vector<SamplePair>& samples, const EvalOptions& opts) {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  std::vector<Real> probs, targets;
  double auc_sum = 0.0;
  int auc_images = 0;
  for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(opts.batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(samples.size(), first + opts.batch_size); ++i) idx.push_back(i);
    Tensor x, y;
    make_batch(samples, idx, x, y);
    Tensor p = predict(model, x);
    auto pd = p.data();
    auto yd = y.data();
    probs.insert(probs.end(), pd.begin(), pd.end());
    targets.insert(targets.end(), yd.begin(), yd.end());
    if (opts.per_image_auc) {
      const std::size_t plane = static_cast<std::size_t>(p.shape().plane());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        try {
          auc_sum += roc_auc(pd.subspan(k * plane, plane), yd.subspan(k * plane, plane));
          ++auc_images;
        } catch (const NumericError&) {
          // single-class image: no ROC curve, skipped from the average
        }
      }
    }
  }
  MetricsReport r = prf_dice(confusion(probs, targets, opts.threshold), probs, targets);
  r.threshold = opts.threshold;
  if (opts.per_image_auc) {
    r.auc_undefined = auc_images == 0;
    r.auc = auc_images ? auc_sum / auc_images : 0.0;
  } else {
    try {
      r.auc = roc_auc(probs, targets);
    } catch (const NumericError&) {
      r.auc_undefined = true;
    }
  }
  return r;
}

Trainer::Trainer(Model& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  adam_ = AdamState::make(model_.parameters(), cfg_.lr);
  cursor_.seed = cfg_.seed;
  cursor_.loss = loss_name(cfg_.loss);
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

Checkpoint Trainer::snapshot() { return capture_checkpoint(model_, &adam_, &cursor_); }

void Trainer::resume(const Checkpoint& ck) {
  const TrainCursor c = ck.cursor();
  if (c.loss != loss_name(cfg_.loss)) {
    throw StateError("checkpoint was trained with loss '" + c.loss + "', run is configured for '" +
                     loss_name(cfg_.loss) + "'");
  }
  apply_checkpoint(ck, model_, &adam_);
  adam_.lr = cfg_.lr;
  cursor_ = c;
  cfg_.seed = c.seed;
}

void Trainer::save_to(const std::string& name) {
  if (cfg_.out_dir.empty()) return;
  std::filesystem::create_directories(cfg_.out_dir);
  save_checkpoint((std::filesystem::path(cfg_.out_dir) / name).string(), snapshot());
}

TrainLog Trainer::run(const std::vector<SamplePair>& train, const std::vector<SamplePair>& val,
                      std::ostream* progress) {
  if (train.empty()) throw ConfigError("train: the training set is empty");
  TrainLog log;
  log.loss_name = loss_name(cfg_.loss);
  const ParamList params = model_.parameters();
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((train.size() + bs - 1) / bs);

  const auto halt = [&](const std::string& why, const std::vector<std::vector<Real>>& saved) {
    // Running statistics were touched by the failed forward pass; roll back.
    BufferList buffers = model_.buffers();
    for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].values = saved[i];
    log.halted = true;
    log.halt_reason = why;
    save_to("last_good.nseg");
    if (progress) *progress << "halted: " << why << "\n";
  };

  bool capped = false;
  while (cursor_.epoch < cfg_.epochs && !capped) {
    const auto order = epoch_order(train.size(), cursor_.seed, cursor_.epoch);
    for (std::int64_t b = cursor_.batch_in_epoch; b < per_epoch; ++b) {
      if (cfg_.max_steps > 0 && cursor_.step >= cfg_.max_steps) {
        capped = true;
        break;
      }
      std::vector<std::size_t> idx;
      for (std::size_t k = static_cast<std::size_t>(b) * bs; k < std::min(train.size(), (b + 1) * bs); ++k) {
        idx.push_back(order[k]);
      }
      Tensor x, y;
      make_batch(train, idx, x, y);

      std::vector<std::vector<Real>> saved;
      for (const auto& buf : model_.buffers()) saved.push_back(*buf.values);

      model_.set_mode(NormMode::kTrain);
      for (const auto& p : params) Tensor(p.tensor).zero_grad();
      double lv = 0.0;
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = compute_loss_from_logits(cfg_.loss, model_.forward_logits(x), y);
        lv = loss.item();
        if (!std::isfinite(lv)) {
          halt("non-finite loss at epoch " + std::to_string(cursor_.epoch) + ", step " +
                   std::to_string(cursor_.step),
               saved);
          return log;
        }
        tape.backward(loss);
      }
      try {
        adam_step(params, adam_, cfg_.clip_norm);
      } catch (const NumericError& e) {
        halt(std::string(e.what()) + " (epoch " + std::to_string(cursor_.epoch) + ", step " +
                 std::to_string(cursor_.step) + ")",
             saved);
        return log;
      }
      cursor_.step += 1;
      cursor_.batch_in_epoch = b + 1;
      cursor_.epoch_loss_sum += lv;
      log.steps.push_back({cursor_.epoch, cursor_.step, lv});
      if (progress) {
        *progress << "epoch " << cursor_.epoch + 1 << "/" << cfg_.epochs << " step " << cursor_.step
                  << " " << log.loss_name << " " << std::setprecision(6) << lv << "\n";
      }
    }
    if (capped) break;

    EpochRecord rec{cursor_.epoch, cursor_.step, cursor_.epoch_loss_sum / static_cast<double>(per_epoch), {}};
    const std::int64_t done = cursor_.epoch + 1;
    if (cfg_.eval_every > 0 && done % cfg_.eval_every == 0 && !val.empty()) {
      rec.val = evaluate(model_, val, EvalOptions{0.5, cfg_.batch_size, false});
    }
    log.epochs.push_back(rec);
    if (progress) {
      *progress << "epoch " << done << " mean " << log.loss_name << " " << std::setprecision(6) << rec.loss;
      if (rec.val) *progress << " val_f1 " << rec.val->f1 << " val_dice " << rec.val->dice_soft;
      *progress << "\n";
    }
    cursor_.epoch = done;
    cursor_.batch_in_epoch = 0;
    cursor_.epoch_loss_sum = 0.0;
    if (cfg_.checkpoint_every > 0 && done % cfg_.checkpoint_every == 0) {
      save_to("epoch_" + std::to_string(done) + ".nseg");
    }
  }
  save_to("final.nseg");
  return log;
}

}  // namespace natseg
