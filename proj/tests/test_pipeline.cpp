#include <gtest/gtest.h>

#include <fstream>

#include "avcount/errors.hpp"
#include "avcount/metrics.hpp"
#include "avcount/pipeline.hpp"
#include "test_support.hpp"

using namespace avcount;
using nlohmann::json;

namespace {

RunConfig small_desk(const std::filesystem::path& root, int n_train = 16, int n_val = 8) {
  RunConfig c = desk_config();
  c.synthetic.n_train = n_train;
  c.synthetic.n_val = n_val;
  c.weights_dir = root / "weights";
  c.run_dir = root / "runs";
  c.work_dir = root / "work";
  return c;
}

Models constant_sound_models(const RunConfig& config, double per_video) {
  std::mt19937_64 rng(config.seed);
  Models m = build_models(config, rng);
  m.sound->stream().zero_parameters();
  for (auto& v : m.sound->stream().head().count_branch().bias().value.storage()) v = per_video;
  return m;
}

}  // namespace

TEST(RunConfig, PresetsValidate) {
  EXPECT_NO_THROW(validate(paper_config()));
  EXPECT_NO_THROW(validate(desk_config()));
  const RunConfig p = paper_config();
  EXPECT_EQ(p.sight.clip.clip_len, 64);
  EXPECT_EQ(p.sight.clip.resolution, 112);
  EXPECT_EQ(p.sight.head.num_classes, 41);
  EXPECT_EQ(p.sound.head.num_classes, 43);
  EXPECT_DOUBLE_EQ(p.stride.margin, 2.9);
  EXPECT_DOUBLE_EQ(p.stride.theta_s, 0.29);
  EXPECT_DOUBLE_EQ(p.reliability.theta_r_v, 0.36);
  EXPECT_DOUBLE_EQ(p.reliability.theta_r_a, 0.40);
  EXPECT_EQ(p.sight_schedule.epochs, 8);
  EXPECT_EQ(p.sound_schedule.epochs, 20);
  EXPECT_EQ(p.stride_schedule.epochs, 5);
  EXPECT_DOUBLE_EQ(p.stride_schedule.sgd.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(p.sight_schedule.sgd.learning_rate, 1e-4);
}

TEST(RunConfig, JsonOverridesAndRoundTrip) {
  const json j = {{"preset", "desk"},
                  {"seed", 3},
                  {"sight", {{"clip_len", 32}}},
                  {"stride", {{"theta_s", 0.2}}},
                  {"fixed_stride", 2},
                  {"schedule", {{"sound", {{"epochs", 4}}}}}};
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.sight.clip.clip_len, 32);
  EXPECT_DOUBLE_EQ(c.stride.theta_s, 0.2);
  EXPECT_EQ(c.fixed_stride, 2);
  EXPECT_EQ(c.sound_schedule.epochs, 4);
  EXPECT_EQ(c.sight.clip.resolution, desk_config().sight.clip.resolution);
  for (const char* key : {"seed", "sight.clip_len", "stride.theta_s", "fixed_stride", "schedule.sound.epochs"})
    EXPECT_NE(std::find(c.overrides.begin(), c.overrides.end(), key), c.overrides.end()) << key;
  EXPECT_EQ(c.overrides.size(), 5u);

  const RunConfig again = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(run_config_from_json(json{{"sight", {{"clip_length", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"preset", "huge"}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"stride", {{"margin", "wide"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"gamma_override", 1.5}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json::array()), ConfigError);
  avtest::TempDir dir("cfg");
  std::ofstream(dir.path() / "bad.json") << "{ not json";
  EXPECT_THROW(load_run_config(dir.path() / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir.path() / "missing.json"), ConfigError);
}

TEST(PositiveStride, SmallestCoveringStride) {
  RunConfig c = desk_config();
  VideoRecord r;
  r.count = CountLabel(4.0);
  r.start_s = 0.0;
  r.end_s = 4.0 * 40.0 / 25.0;  // period 40 frames
  EXPECT_EQ(positive_stride(r, c), 2);  // 63 * 2 >= 80
  r.end_s = 4.0 * 300.0 / 25.0;
  EXPECT_EQ(positive_stride(r, c), std::nullopt);
}

TEST(TrainStage, StrideWithoutSightWeightsIsDependencyError) {
  avtest::TempDir dir("dep");
  const RunConfig c = small_desk(dir.path());
  const auto ds = synth_dataset(c.synthetic);
  EXPECT_THROW(train_stage(c, Stage::train_stride, ds.dataset), DependencyError);
  EXPECT_THROW(train_stage(c, Stage::train_reliability, ds.dataset), DependencyError);
  EXPECT_THROW(load_models(c), DependencyError);
}

TEST(RunConfig, FrozenNormEpochsAreBounded) {
  RunConfig c = desk_config();
  c.sound_schedule.frozen_norm_epochs = -1;
  EXPECT_THROW(validate(c), ConfigError);
  c.sound_schedule.frozen_norm_epochs = 2;
  c.sound_schedule.frozen_norm_lr_scale = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  StageSchedule s{5, 8, {}, 2, 0.5};
  EXPECT_FALSE(s.frozen_norm(3));
  EXPECT_TRUE(s.frozen_norm(4));
  EXPECT_TRUE(s.frozen_norm(5));
  s.frozen_norm_epochs = 9;
  EXPECT_TRUE(s.frozen_norm(1));
  EXPECT_FALSE(s.frozen_norm(0));
}

TEST(TrainStage, SightLossDecreasesAndArtifactsAreWritten) {
  avtest::TempDir dir("smoke");
  RunConfig c = small_desk(dir.path(), 64, 8);
  c.sight_schedule.epochs = 3;
  c.sight_schedule.frozen_norm_epochs = 0;
  const auto ds = synth_dataset(c.synthetic);
  const RunRecord rec = train_stage(c, Stage::train_sight, ds.dataset);
  ASSERT_EQ(rec.epochs.size(), 3u);
  EXPECT_LT(rec.epochs.back().train_loss, rec.epochs.front().train_loss);
  const ArtifactPaths paths(c.weights_dir);
  EXPECT_TRUE(std::filesystem::exists(paths.sight));
  EXPECT_TRUE(std::filesystem::exists(paths.sight_epochs));
  EXPECT_TRUE(std::filesystem::exists(c.run_dir / "train_sight_record.json"));
}

TEST(Inference, GammaOverrideControlsFusion) {
  avtest::TempDir dir("gamma");
  RunConfig c = small_desk(dir.path(), 0, 6);
  const auto ds = synth_dataset(c.synthetic);
  std::mt19937_64 rng(1);
  Models m = build_models(c, rng);
  InferenceOptions opt;
  opt.fixed_stride = 2;
  opt.gamma_override = 0.0;
  const Evaluation zero = evaluate(ds.dataset, Split::val, m, opt);
  ASSERT_EQ(zero.rows.size(), 6u);
  for (const auto& r : zero.rows) EXPECT_EQ(r.fused, r.sight);
  opt.gamma_override = 0.5;
  const Evaluation half = evaluate(ds.dataset, Split::val, m, opt);
  for (const auto& r : half.rows) EXPECT_NEAR(r.fused, 0.5 * (r.sight + *r.sound), 1e-12);
  opt.no_audio = true;
  const Evaluation visual = evaluate(ds.dataset, Split::val, m, opt);
  for (const auto& r : visual.rows) {
    EXPECT_FALSE(r.sound.has_value());
    EXPECT_EQ(r.gamma, 0.0);
    EXPECT_EQ(r.fused, r.sight);
  }
}

TEST(Inference, MissingModelsAreDependencyErrors) {
  avtest::TempDir dir("missing");
  RunConfig c = small_desk(dir.path(), 0, 2);
  const auto ds = synth_dataset(c.synthetic);
  std::mt19937_64 rng(2);
  Models m = build_models(c, rng);
  m.gate.reset();
  InferenceOptions opt;
  opt.fixed_stride = 1;
  EXPECT_THROW(evaluate(ds.dataset, Split::val, m, opt), DependencyError);
  m.stride.reset();
  opt = InferenceOptions{};
  EXPECT_THROW(evaluate(ds.dataset, Split::val, m, opt), DependencyError);
}

TEST(Evaluate, ConstantPredictorMatchesClosedForm) {
  avtest::TempDir dir("constant");
  RunConfig c = small_desk(dir.path(), 0, 12);
  const auto ds = synth_dataset(c.synthetic);
  std::vector<CountLabel> labels;
  for (const auto* r : ds.dataset.manifest.split(Split::val)) labels.push_back(r->count);
  const double best = best_constant_prediction(labels);
  std::vector<CountPrediction> constant(labels.size(), CountPrediction(best, Modality::fused));
  const double oracle = mae(constant, labels);

  Models m = constant_sound_models(c, best);
  InferenceOptions opt;
  opt.fixed_stride = 1;
  opt.gamma_override = 1.0;
  const Evaluation e = evaluate(ds.dataset, Split::val, m, opt);
  EXPECT_NEAR(e.fused.mae, oracle, 1e-9);
  EXPECT_NEAR(e.sound->mae, oracle, 1e-9);
}

TEST(Evaluate, PerfectPredictionsAndReportFormat) {
  std::vector<PredictionRow> rows;
  for (int i = 0; i < static_cast<int>(kAllChallengeTags.size()) + 2; ++i) {
    PredictionRow r;
    r.video_id = "v" + std::to_string(i);
    r.label = 2.0 + i;
    r.sight = r.fused = r.label;
    r.sound = r.label;
    if (i < static_cast<int>(kAllChallengeTags.size())) r.tags = {kAllChallengeTags[static_cast<std::size_t>(i)]};
    rows.push_back(r);
  }
  const Evaluation e = evaluate_rows(rows);
  EXPECT_EQ(e.fused.mae, 0.0);
  EXPECT_EQ(e.fused.obo, 1.0);
  EXPECT_EQ(e.fused.per_tag_mae.size(), 7u);
  const std::string text = format_report(e);
  for (ChallengeTag t : kAllChallengeTags) EXPECT_NE(text.find(std::string(to_string(t))), std::string::npos);
}

TEST(Predictions, SaveLoadFidelity) {
  std::vector<PredictionRow> rows(2);
  rows[0] = {"a", 4.0, 3.25, 4.5, 3.9, 0.37, 2, {ChallengeTag::fast_motion}};
  rows[1] = {"b", 7.0, 1.0 / 3.0, std::nullopt, 1.0 / 3.0, 0.0, 1, {}};
  avtest::TempDir dir("preds");
  save_predictions(dir.path() / "p.jsonl", rows);
  const auto back = load_predictions(dir.path() / "p.jsonl");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].video_id, rows[i].video_id);
    EXPECT_EQ(back[i].label, rows[i].label);
    EXPECT_EQ(back[i].sight, rows[i].sight);
    EXPECT_EQ(back[i].sound, rows[i].sound);
    EXPECT_EQ(back[i].fused, rows[i].fused);
    EXPECT_EQ(back[i].gamma, rows[i].gamma);
    EXPECT_EQ(back[i].stride, rows[i].stride);
    EXPECT_EQ(back[i].tags, rows[i].tags);
  }
  write_report(dir.path() / "report", evaluate_rows(rows));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "report" / "report.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "report" / "metrics.jsonl"));
}
