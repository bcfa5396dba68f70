#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avcount/datasets.hpp"
#include "avcount/metrics.hpp"
#include "avcount/reliability_fusion.hpp"
#include "avcount/sight_stream.hpp"
#include "avcount/sound_stream.hpp"
#include "avcount/stride_decision.hpp"
#include "avcount/synthetic.hpp"

namespace avcount {

enum class Stage { train_sight, train_sound, train_stride, train_reliability, infer, evaluate, synth };
std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view text);

struct StageSchedule {
  int epochs = 8;
  int batch_size = 8;
  nn::SgdConfig sgd;
  /// Stream stages only: the final epochs (at most all of them) train with
  /// normalization layers using their running statistics, at learning rate
  /// times the scale.
  int frozen_norm_epochs = 0;
  double frozen_norm_lr_scale = 1.0;

  bool frozen_norm(int epoch) const noexcept { return epoch >= 1 && epoch > epochs - frozen_norm_epochs; }
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  /// Manifest path; empty selects the in-memory synthetic dataset.
  std::filesystem::path dataset;
  std::filesystem::path weights_dir = "weights";
  std::filesystem::path run_dir = "runs";
  std::filesystem::path work_dir = "work";

  SightConfig sight;
  SoundConfig sound;
  StrideModuleConfig stride;
  ReliabilityConfig reliability;

  StageSchedule sight_schedule{8, 8, {1e-4, 0.0, 0.0, 0.0}};
  StageSchedule sound_schedule{20, 8, {1e-4, 0.0, 0.0, 0.0}};
  StageSchedule stride_schedule{5, 8, {1e-3, 0.0, 0.0, 0.0}};
  StageSchedule reliability_schedule{20, 8, {1e-4, 0.0, 0.0, 0.0}};

  ClipAggregation aggregation = ClipAggregation::sum;
  SyntheticDatasetConfig synthetic;

  std::optional<int> fixed_stride;
  bool no_audio = false;
  std::optional<double> gamma_override;
  Split eval_split = Split::val;

  /// Dotted keys of values that differ from the preset.
  std::vector<std::string> overrides;
};

/// Published training recipe: full backbones, 112x112x64 clips.
RunConfig paper_config();
/// Small backbones and 16x16 synthetic video for CPU runs.
RunConfig desk_config();

/// Starts from the preset named by "preset" (default "paper") and applies
/// every given field. Unknown keys and invalid values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);
void validate(const RunConfig& config);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_relative_mae;
};

struct RunRecord {
  Stage stage = Stage::train_sight;
  nlohmann::json config;
  std::vector<EpochLog> epochs;
  std::map<std::string, std::string> artifacts;
  std::vector<std::string> skipped;  // video ids left out, with reason
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

/// Artifact locations inside a weights directory.
struct ArtifactPaths {
  std::filesystem::path sight, sound, stride, gate, mining, empirical, sight_epochs, sound_epochs;
  explicit ArtifactPaths(const std::filesystem::path& weights_dir);
};

/// Trained parts used at inference; any may be absent.
struct Models {
  std::unique_ptr<SightModel> sight;
  std::unique_ptr<SoundModel> sound;
  std::unique_ptr<StrideModule> stride;
  std::unique_ptr<ReliabilityGate> gate;
};

Models build_models(const RunConfig& config, std::mt19937_64& rng);
/// Builds every part and loads its weights; missing files raise DependencyError.
Models load_models(const RunConfig& config);

Dataset open_dataset(const RunConfig& config);

/// Smallest stride in 1..S_K whose clip covers two repetitions, if any.
std::optional<int> positive_stride(const VideoRecord& record, const RunConfig& config);

/// Video-level sight count at the record's positive stride.
double sight_count_at_positive_stride(const VideoRecord& record, const VideoSource& video, SightModel& sight,
                                      const RunConfig& config);

RunRecord train_stage(const RunConfig& config, Stage stage, const Dataset& dataset);
RunRecord train_stage(const RunConfig& config, Stage stage);

struct InferenceOptions {
  std::optional<int> fixed_stride;
  bool no_audio = false;
  std::optional<double> gamma_override;
  ClipAggregation aggregation = ClipAggregation::sum;
};

InferenceOptions inference_options(const RunConfig& config);

struct InferenceResult {
  CountPrediction fused{0.0, Modality::fused};
  CountPrediction sight{0.0, Modality::sight};
  std::optional<CountPrediction> sound;
  double gamma = 0.0;
  int stride = 1;
  std::vector<double> stride_scores;
};

/// Stride selection, tiled sight counting, sound counting and gated fusion.
/// Without audio the fused count is the sight count and gamma is 0.
InferenceResult infer_video(const VideoRecord& record, const VideoSource& video, const AudioSource* audio,
                            Models& models, const InferenceOptions& options);

struct PredictionRow {
  std::string video_id;
  double label = 0.0;
  double sight = 0.0;
  std::optional<double> sound;
  double fused = 0.0;
  double gamma = 0.0;
  int stride = 1;
  TagSet tags;
};

struct Evaluation {
  EvalReport fused;
  EvalReport sight;
  std::optional<EvalReport> sound;  // over videos with audio
  std::vector<PredictionRow> rows;
};

Evaluation evaluate(const Dataset& dataset, Split split, Models& models, const InferenceOptions& options);
Evaluation evaluate_rows(std::vector<PredictionRow> rows);

void save_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> load_predictions(const std::filesystem::path& path);

/// Aligned text table: overall MAE/OBO per modality, then per-challenge MAE.
std::string format_report(const Evaluation& evaluation);
void write_report(const std::filesystem::path& dir, const Evaluation& evaluation);

}  // namespace avcount
