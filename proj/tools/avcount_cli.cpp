// Command-line front end: synth, train, infer, evaluate, report.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifdef AVCOUNT_CLI11_PACKAGE
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include "avcount/errors.hpp"
#include "avcount/pipeline.hpp"

namespace fs = std::filesystem;
using namespace avcount;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kData = 4 };

struct Flags {
  std::string config;
  std::string preset = "paper";
  std::string stage;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string weights_dir;
  std::string run_dir;
  std::optional<int> fixed_stride;
  bool no_audio = false;
  std::optional<double> gamma_override;
  std::string split = "val";
  std::string out;
  std::string predictions;
};

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) c = load_run_config(f.config);
  else if (f.preset == "desk") c = desk_config();
  else if (f.preset == "paper") c = paper_config();
  else throw ConfigError("unknown preset '" + f.preset + "'");
  auto note = [&](const std::string& key) { c.overrides.push_back(key); };
  if (f.seed) {
    c.seed = *f.seed;
    note("seed");
  }
  if (!f.dataset.empty()) {
    c.dataset = f.dataset;
    note("dataset");
  }
  if (!f.weights_dir.empty()) {
    c.weights_dir = f.weights_dir;
    note("weights_dir");
  }
  if (!f.run_dir.empty()) {
    c.run_dir = f.run_dir;
    note("run_dir");
  }
  if (f.fixed_stride) {
    c.fixed_stride = *f.fixed_stride;
    note("fixed_stride");
  }
  if (f.no_audio) {
    c.no_audio = true;
    note("no_audio");
  }
  if (f.gamma_override) {
    c.gamma_override = *f.gamma_override;
    note("gamma_override");
  }
  const auto split = parse_split(f.split);
  if (!split) throw ConfigError("unknown split '" + f.split + "'");
  c.eval_split = *split;
  validate(c);
  return c;
}

int cmd_synth(const Flags& f) {
  const RunConfig c = resolve(f);
  const fs::path dir = f.out.empty() ? c.work_dir / "synthetic" : fs::path(f.out);
  const SyntheticDataset data = synth_dataset(c.synthetic);
  const fs::path manifest = materialize(data.dataset, dir);
  std::cout << manifest.string() << "\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  const RunConfig c = resolve(f);
  std::vector<Stage> stages;
  if (f.stage.empty() || f.stage == "all") {
    stages = {Stage::train_sight, Stage::train_sound, Stage::train_stride, Stage::train_reliability};
  } else {
    const auto s = parse_stage(f.stage);
    if (!s || (*s != Stage::train_sight && *s != Stage::train_sound && *s != Stage::train_stride &&
               *s != Stage::train_reliability))
      throw ConfigError("'" + f.stage + "' is not a training stage");
    stages = {*s};
  }
  const Dataset dataset = open_dataset(c);
  for (Stage s : stages) {
    const RunRecord record = train_stage(c, s, dataset);
    if (!record.epochs.empty()) {
      const EpochLog& last = record.epochs.back();
      std::cout << to_string(s) << ": " << record.epochs.size() << " epochs, final loss " << last.train_loss;
      if (last.val_relative_mae) std::cout << ", val relative MAE " << *last.val_relative_mae;
      std::cout << "\n";
    }
  }
  return kOk;
}

Evaluation run_evaluation(const RunConfig& c) {
  const Dataset dataset = open_dataset(c);
  Models models = load_models(c);
  return evaluate(dataset, c.eval_split, models, inference_options(c));
}

int cmd_infer(const Flags& f) {
  const RunConfig c = resolve(f);
  const Evaluation ev = run_evaluation(c);
  const fs::path out = f.out.empty() ? c.run_dir / "predictions.jsonl" : fs::path(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_predictions(out, ev.rows);
  for (const PredictionRow& r : ev.rows)
    std::cout << r.video_id << "\tstride " << r.stride << "\tsight " << r.sight << "\tsound "
              << (r.sound ? std::to_string(*r.sound) : std::string("-")) << "\tgamma " << r.gamma << "\tfused "
              << r.fused << "\n";
  return kOk;
}

int cmd_evaluate(const Flags& f) {
  const RunConfig c = resolve(f);
  const Evaluation ev = run_evaluation(c);
  const fs::path dir = f.out.empty() ? c.run_dir : fs::path(f.out);
  fs::create_directories(dir);
  save_predictions(dir / "predictions.jsonl", ev.rows);
  write_report(dir, ev);
  std::cout << format_report(ev);
  return kOk;
}

int cmd_report(const Flags& f) {
  if (f.predictions.empty()) throw ConfigError("report needs --predictions");
  const Evaluation ev = evaluate_rows(load_predictions(f.predictions));
  if (!f.out.empty()) write_report(f.out, ev);
  std::cout << format_report(ev);
  return kOk;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  app->add_option("--preset", f.preset, "Built-in config when --config is absent (paper, desk)");
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("--dataset", f.dataset, "Manifest path (default: in-memory synthetic set)");
  app->add_option("--weights-dir", f.weights_dir, "Directory for model weights");
  app->add_option("--run-dir", f.run_dir, "Directory for run records and reports");
}

void add_inference(CLI::App* app, Flags& f) {
  app->add_option("--fixed-stride", f.fixed_stride, "Bypass stride selection")->check(CLI::PositiveNumber);
  app->add_flag("--no-audio", f.no_audio, "Sight-only inference");
  app->add_option("--gamma-override", f.gamma_override, "Fixed fusion weight in [0,1]")->check(CLI::Range(0.0, 1.0));
  app->add_option("--split", f.split, "Split to evaluate (train, val, test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audiovisual repetition counting"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* synth = app.add_subcommand("synth", "Generate and write the synthetic dataset");
  add_common(synth, f);
  synth->add_option("--out", f.out, "Output directory");

  CLI::App* train = app.add_subcommand("train", "Train one stage or all stages in order");
  add_common(train, f);
  train->add_option("--stage", f.stage, "train_sight, train_sound, train_stride, train_reliability or all");

  CLI::App* infer = app.add_subcommand("infer", "Predict counts and write predictions");
  add_common(infer, f);
  add_inference(infer, f);
  infer->add_option("--out", f.out, "Predictions file");

  CLI::App* eval = app.add_subcommand("evaluate", "Predict, score and write a report");
  add_common(eval, f);
  add_inference(eval, f);
  eval->add_option("--out", f.out, "Report directory");

  CLI::App* report = app.add_subcommand("report", "Score saved predictions");
  report->add_option("--predictions", f.predictions, "Predictions file")->check(CLI::ExistingFile);
  report->add_option("--out", f.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(f);
    if (*train) return cmd_train(f);
    if (*infer) return cmd_infer(f);
    if (*eval) return cmd_evaluate(f);
    if (*report) return cmd_report(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return kDependency;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const MediaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
