// natseg command-line driver. Exit codes: 0 success, 1 runtime failure
// (non-finite training, failed gradient check), 2 usage or configuration
// error (bad flags, unreadable inputs, incompatible checkpoints).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "natseg/checkpoint.h"
#include "natseg/data.h"
#include "natseg/gradcheck_suite.h"
#include "natseg/model.h"
#include "natseg/raster.h"
#include "natseg/run_config.h"
#include "natseg/trainer.h"

namespace fs = std::filesystem;
using namespace natseg;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

// ---- summary ---------------------------------------------------------------

struct SummaryArgs {
  std::string variant = "v1";
  int input_size = 384;
  int base_width = 0;
  bool csv = false;
};

int run_summary(const SummaryArgs& a) {
  const Variant v = parse_variant(a.variant);
  const int base = a.base_width > 0 ? a.base_width : ModelConfig::paper(v).base_width;
  const ModelConfig cfg = ModelConfig::make(v, a.input_size, base);
  cfg.validate();
  const auto rows = summarize(cfg);
  std::cout << (a.csv ? render_summary_csv(rows) : render_summary_text(rows));
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string resume;
  std::vector<std::string> sets;
  bool synth = false;
  // Flag -> run config key, in the order they are applied.
  std::vector<std::pair<std::string, std::string>> flag_keys = {
      {"--preset", "preset"},       {"--variant", "variant"},     {"--base-width", "base_width"},
      {"--size", "input_size"},     {"--num-samples", "synth.num_samples"},
      {"--data", "data_root"},      {"--out", "out_dir"},         {"--epochs", "epochs"},
      {"--lr", "lr"},               {"--batch", "batch_size"},    {"--loss", "loss"},
      {"--seed", "seed"},           {"--max-steps", "max_steps"},
  };
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

int run_train(TrainArgs& a) {
  RunConfig cfg;
  cfg.train.out_dir = "natseg_run";
  if (!a.config_path.empty()) cfg.load_file(a.config_path);
  for (const auto& [flag, key] : a.flag_keys) {
    if (a.options.at(flag)->count() > 0) cfg.set(key, a.values.at(flag), flag);
  }
  if (a.synth) cfg.set("synth", "true", "--synth");
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv);
  }
  cfg.finalize();

  const PreparedData data = prepare_data(cfg);
  const fs::path out_dir = cfg.train.out_dir;
  fs::create_directories(out_dir);
  write_text(out_dir / "run_config.txt", cfg.render());

  Model model(cfg.model_config());
  Trainer trainer(model, cfg.train);
  if (!a.resume.empty()) trainer.resume(load_checkpoint(a.resume));
  std::cout << "training " << variant_name(cfg.variant) << " (" << model.param_count()
            << " params) on " << data.train.size() << " samples, " << data.val.size()
            << " validation, loss " << loss_name(cfg.train.loss) << "\n";

  const TrainLog log = trainer.run(data.train, data.val, &std::cout);
  write_text(out_dir / "train_log.csv", log.epochs_csv());
  write_text(out_dir / "steps.csv", log.steps_csv());
  if (log.halted) {
    std::cerr << "natseg train: halted: " << log.halt_reason << " (last good state in "
              << (out_dir / "last_good.nseg").string() << ")\n";
    return kRuntimeFailure;
  }
  std::cout << "wrote " << (out_dir / "final.nseg").string() << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool synth = false;
  int num_samples = 32;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  bool per_image_auc = false;
  int batch = 4;
  std::string out;
};

Model load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  Model model(ck.model_config());
  apply_checkpoint(ck, model, nullptr);
  return model;
}

int run_eval(const EvalArgs& a) {
  Model model = load_model(a.checkpoint);
  const int input = model.config().input_h;
  std::vector<SamplePair> samples;
  if (a.synth) {
    SynthConfig sc;
    sc.size = input;
    sc.num_samples = a.num_samples;
    sc.seed = a.seed;
    sc.validate();
    samples = generate_synthetic(sc);
  } else if (!a.data.empty()) {
    samples = load_split_dir(a.data, a.split);
  } else {
    throw ConfigError("eval: pass --data DIR or --synth");
  }
  samples = fit_to_input(samples, input, input);
  if (a.batch < 1) throw ConfigError("--batch: must be >= 1");
  const MetricsReport r = evaluate(model, samples, EvalOptions{a.threshold, a.batch, a.per_image_auc});
  std::cout << "evaluated " << samples.size() << " samples at threshold " << a.threshold
            << (a.per_image_auc ? " (per-image AUC)" : "") << "\n"
            << r.render_block();
  if (!a.out.empty()) write_text(a.out, MetricsReport::csv_header() + "\n" + r.csv_row() + "\n");
  return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
  std::string prob;
  double threshold = 0.5;
  int stride = 0;
};

int run_predict(const PredictArgs& a) {
  Model model = load_model(a.checkpoint);
  const Tensor image = load_image(a.image);
  const int input = model.config().input_h;
  const int stride = a.stride > 0 ? a.stride : std::max(1, input / 2);
  const Tensor prob = predict_tiled(model, image, stride);
  const int h = prob.shape().h, w = prob.shape().w;
  const auto pd = prob.data();

  Raster mask{w, h, 1, std::vector<std::uint8_t>(pd.size())};
  for (std::size_t i = 0; i < pd.size(); ++i) mask.pixels[i] = pd[i] >= a.threshold ? 255 : 0;
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_png(a.out, mask);

  if (!a.prob.empty()) {
    if (fs::path(a.prob).extension() == ".csv") {
      std::ostringstream os;
      os << "y,x,prob\n" << std::setprecision(7);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) os << y << "," << x << "," << pd[static_cast<std::size_t>(y) * w + x] << "\n";
      }
      write_text(a.prob, os.str());
    } else {
      Raster pm{w, h, 1, std::vector<std::uint8_t>(pd.size())};
      for (std::size_t i = 0; i < pd.size(); ++i) {
        pm.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp<double>(pd[i], 0.0, 1.0) * 255.0));
      }
      write_png(a.prob, pm);
    }
  }
  std::cout << "wrote " << w << "x" << h << " mask to " << a.out << "\n";
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(const std::string& scope, std::uint64_t seed) {
  const auto checks = scope == "model" ? gradcheck_model(seed) : gradcheck_ops(seed);
  std::cout << "gradcheck scope=" << scope << " seed=" << seed << " real=" << (kRealBytes * 8)
            << "-bit\n"
            << render_checks(checks);
  return all_passed(checks) ? 0 : kRuntimeFailure;
}

// ---- synth-data ------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int size = 48;
  int num_samples = 32;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  SynthConfig sc;
  sc.size = a.size;
  sc.num_samples = a.num_samples;
  sc.seed = a.seed;
  sc.validate();
  const DataSplit parts = split(generate_synthetic(sc), {}, a.seed);
  write_dataset(a.out, parts);
  std::cout << "wrote " << parts.train.size() << " train, " << parts.val.size() << " val, "
            << parts.test.size() << " test samples to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limit_from_env();

  CLI::App app{"natseg: road segmentation with neighbourhood attention"};
  app.require_subcommand(1);
  std::function<int()> command;

  SummaryArgs sum;
  auto* summary = app.add_subcommand("summary", "Print the layer table for a model configuration");
  summary->add_option("--variant", sum.variant, "v1, v2 or resunet")->capture_default_str();
  summary->add_option("--input-size", sum.input_size, "Square input size")->capture_default_str();
  summary->add_option("--base-width", sum.base_width, "First-stage width (default 64, or 66 for v2)");
  summary->add_flag("--csv", sum.csv, "Emit CSV instead of the aligned table");
  summary->callback([&] { command = [&] { return run_summary(sum); }; });

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints and logs");
  train->add_option("--config", tr.config_path, "key=value config file");
  for (const auto& [flag, key] : tr.flag_keys) {
    tr.options[flag] = train->add_option(flag, tr.values[flag], "Sets " + key);
  }
  train->add_flag("--synth", tr.synth, "Train on synthetic roads");
  train->add_option("--resume", tr.resume, "Continue from a checkpoint");
  train->add_option("--set", tr.sets, "Extra key=value override (repeatable)");
  train->callback([&] { command = [&] { return run_train(tr); }; });

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on labelled data");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", ev.data, "Dataset root with <split>/{sat,map}");
  eval->add_option("--split", ev.split, "Split under --data")->capture_default_str();
  eval->add_flag("--synth", ev.synth, "Evaluate on freshly generated synthetic samples");
  eval->add_option("--num-samples", ev.num_samples, "Synthetic sample count")->capture_default_str();
  eval->add_option("--seed", ev.seed, "Synthetic data seed")->capture_default_str();
  eval->add_option("--threshold", ev.threshold, "Binarisation threshold")->capture_default_str();
  eval->add_flag("--per-image-auc", ev.per_image_auc, "Average AUC per image instead of pooling pixels");
  eval->add_option("--batch", ev.batch, "Evaluation batch size")->capture_default_str();
  eval->add_option("--out", ev.out, "Write metrics CSV here");
  eval->callback([&] { command = [&] { return run_eval(ev); }; });

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Segment one image into a road mask");
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict->add_option("--image", pr.image, "Input RGB PNG")->required();
  predict->add_option("--out", pr.out, "Output mask PNG ({0,255})")->required();
  predict->add_option("--prob", pr.prob, "Also write probabilities (.png or .csv)");
  predict->add_option("--threshold", pr.threshold, "Mask threshold")->capture_default_str();
  predict->add_option("--stride", pr.stride, "Tile stride (default half the model input)");
  predict->callback([&] { command = [&] { return run_predict(pr); }; });

  std::string scope = "ops";
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--scope", scope, "ops or model")
      ->check(CLI::IsMember({"ops", "model"}))
      ->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Input seed")->capture_default_str();
  gradcheck->callback([&] { command = [&] { return run_gradcheck(scope, gc_seed); }; });

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset split into train/val/test");
  synth->add_option("--out", sy.out, "Dataset root")->required();
  synth->add_option("--size", sy.size, "Tile size")->capture_default_str();
  synth->add_option("--num-samples", sy.num_samples, "Number of tiles")->capture_default_str();
  synth->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();
  synth->callback([&] { command = [&] { return run_synth(sy); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }

  try {
    return command();
  } catch (const ConfigError& e) {
    std::cerr << "natseg: " << e.what() << "\n";
    return kUsageError;
  } catch (const IoError& e) {
    std::cerr << "natseg: " << e.what() << "\n";
    return kUsageError;
  } catch (const StateError& e) {
    std::cerr << "natseg: incompatible state: " << e.what() << "\n";
    return kUsageError;
  } catch (const ShapeError& e) {
    std::cerr << "natseg: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "natseg: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}
