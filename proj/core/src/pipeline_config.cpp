#include <fstream>
#include <functional>

#include "avcount/errors.hpp"
#include "avcount/pipeline.hpp"

namespace avcount {

using json = nlohmann::json;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::train_sight: return "train_sight";
    case Stage::train_sound: return "train_sound";
    case Stage::train_stride: return "train_stride";
    case Stage::train_reliability: return "train_reliability";
    case Stage::infer: return "infer";
    case Stage::evaluate: return "evaluate";
    case Stage::synth: return "synth";
  }
  return "unknown";
}

std::optional<Stage> parse_stage(std::string_view text) {
  for (Stage s : {Stage::train_sight, Stage::train_sound, Stage::train_stride, Stage::train_reliability, Stage::infer,
                  Stage::evaluate, Stage::synth})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

RunConfig paper_config() {
  RunConfig c;
  c.preset = "paper";
  c.sight.clip = {64, 112};
  c.sight.backbone.variant = BackboneVariant::full;
  c.sight.backbone.feature_dim = 512;
  c.sight.head = HeadConfig{512, 41};
  c.sound.backbone.variant = BackboneVariant::full;
  c.sound.backbone.feature_dim = 512;
  c.sound.head = HeadConfig{512, 43};
  return c;
}

RunConfig desk_config() {
  RunConfig c = paper_config();
  c.preset = "desk";
  c.sight.clip = {64, 16};
  c.sight.backbone.variant = BackboneVariant::tiny;
  c.sight.backbone.tiny_widths = {8, 16, 16};
  c.sight.backbone.feature_dim = 64;
  c.sight.head = HeadConfig{64, 4, 10.0, 1.0};
  c.sound.backbone.variant = BackboneVariant::tiny;
  c.sound.backbone.tiny_widths = {8, 16, 32, 64};
  c.sound.backbone.feature_dim = 64;
  c.sound.head = HeadConfig{64, 4, 10.0, 1.0};
  const nn::SgdConfig fast{1e-3, 0.9, 0.0, 5.0};
  c.sight_schedule = {30, 8, fast, 8, 0.2};
  c.sound_schedule = {30, 8, fast, 8, 0.2};
  c.stride_schedule = {15, 8, fast};
  c.reliability_schedule = {30, 8, fast};
  c.reliability.epochs = 30;
  c.reliability.learning_rate = fast.learning_rate;
  return c;
}

namespace {

std::string_view to_string(Supervision s) { return s == Supervision::diversity ? "diversity" : "action_class_ce"; }
std::string_view to_string(BackboneVariant v) { return v == BackboneVariant::tiny ? "tiny" : "full"; }
std::string_view to_string(ClipAggregation a) {
  return a == ClipAggregation::sum ? "sum" : "single_clip_extrapolation";
}

json head_json(const HeadConfig& h) {
  return {{"num_classes", h.num_classes}, {"lambda1", h.lambda1},       {"lambda2", h.lambda2},
          {"supervision", to_string(h.supervision)}, {"init_scale", h.init_scale}};
}

json schedule_json(const StageSchedule& s) {
  return {{"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.sgd.learning_rate},
          {"momentum", s.sgd.momentum},
          {"weight_decay", s.sgd.weight_decay},
          {"clip_grad_norm", s.sgd.clip_grad_norm},
          {"frozen_norm_epochs", s.frozen_norm_epochs},
          {"frozen_norm_lr_scale", s.frozen_norm_lr_scale}};
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid or missing config value " + where + "." + key);
  }
}

void read_head(const json& j, HeadConfig& h, const std::string& where) {
  h.num_classes = get<int>(j, "num_classes", where);
  h.lambda1 = get<double>(j, "lambda1", where);
  h.lambda2 = get<double>(j, "lambda2", where);
  const auto sup = get<std::string>(j, "supervision", where);
  if (sup == "diversity") h.supervision = Supervision::diversity;
  else if (sup == "action_class_ce") h.supervision = Supervision::action_class_ce;
  else throw ConfigError("unknown supervision '" + sup + "'");
  h.init_scale = get<double>(j, "init_scale", where);
}

BackboneVariant read_variant(const json& j, const std::string& where) {
  const auto v = get<std::string>(j, "variant", where);
  if (v == "tiny") return BackboneVariant::tiny;
  if (v == "full") return BackboneVariant::full;
  throw ConfigError("unknown backbone variant '" + v + "'");
}

StageSchedule read_schedule(const json& j, const std::string& where) {
  StageSchedule s;
  s.epochs = get<int>(j, "epochs", where);
  s.batch_size = get<int>(j, "batch_size", where);
  s.sgd.learning_rate = get<double>(j, "learning_rate", where);
  s.sgd.momentum = get<double>(j, "momentum", where);
  s.sgd.weight_decay = get<double>(j, "weight_decay", where);
  s.sgd.clip_grad_norm = get<double>(j, "clip_grad_norm", where);
  s.frozen_norm_epochs = get<int>(j, "frozen_norm_epochs", where);
  s.frozen_norm_lr_scale = get<double>(j, "frozen_norm_lr_scale", where);
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["dataset"] = c.dataset.string();
  j["weights_dir"] = c.weights_dir.string();
  j["run_dir"] = c.run_dir.string();
  j["work_dir"] = c.work_dir.string();

  json sight = head_json(c.sight.head);
  sight["variant"] = to_string(c.sight.backbone.variant);
  sight["clip_len"] = c.sight.clip.clip_len;
  sight["resolution"] = c.sight.clip.resolution;
  sight["widths"] = c.sight.backbone.tiny_widths;
  sight["feature_dim"] = c.sight.backbone.feature_dim;
  j["sight"] = sight;

  json sound = head_json(c.sound.head);
  sound["variant"] = to_string(c.sound.backbone.variant);
  sound["widths"] = c.sound.backbone.tiny_widths;
  sound["feature_dim"] = c.sound.backbone.feature_dim;
  sound["sample_rate"] = c.sound.spectrogram.sample_rate;
  sound["fft_size"] = c.sound.spectrogram.fft_size;
  sound["hop"] = c.sound.spectrogram.hop;
  sound["log_compression"] = c.sound.spectrogram.log_compression;
  sound["segment_frames"] = c.sound.spectrogram.segment_frames;
  sound["n_segments"] = c.sound.n_segments;
  j["sound"] = sound;

  j["stride"] = {{"margin", c.stride.margin},
                 {"theta_s", c.stride.theta_s},
                 {"s_k_train", c.stride.s_k_train},
                 {"s_k_infer", c.stride.s_k_infer},
                 {"audio_enabled", c.stride.audio_enabled}};
  j["reliability"] = {{"theta_r_v", c.reliability.theta_r_v}, {"theta_r_a", c.reliability.theta_r_a}};
  j["schedule"] = {{"sight", schedule_json(c.sight_schedule)},
                   {"sound", schedule_json(c.sound_schedule)},
                   {"stride", schedule_json(c.stride_schedule)},
                   {"reliability", schedule_json(c.reliability_schedule)}};
  j["aggregation"] = to_string(c.aggregation);
  const auto& s = c.synthetic;
  j["synthetic"] = {{"n_train", s.n_train},
                    {"n_val", s.n_val},
                    {"n_test", s.n_test},
                    {"min_count", s.min_count},
                    {"max_count", s.max_count},
                    {"min_period_frames", s.min_period_frames},
                    {"max_period_frames", s.max_period_frames},
                    {"period_jitter", s.period_jitter},
                    {"degraded_fraction", s.degraded_fraction},
                    {"noisy_audio_fraction", s.noisy_audio_fraction},
                    {"audio_noise", s.audio_noise},
                    {"noisy_audio_noise", s.noisy_audio_noise},
                    {"visual_noise", s.visual_noise},
                    {"resolution", s.resolution},
                    {"fps", s.fps},
                    {"sample_rate", s.sample_rate},
                    {"seed", s.seed}};
  j["fixed_stride"] = c.fixed_stride ? json(*c.fixed_stride) : json(nullptr);
  j["no_audio"] = c.no_audio;
  j["gamma_override"] = c.gamma_override ? json(*c.gamma_override) : json(nullptr);
  j["eval_split"] = to_string(c.eval_split);
  return j;
}

RunConfig run_config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const std::string preset_name = user.value("preset", std::string("paper"));
  RunConfig preset;
  if (preset_name == "paper") preset = paper_config();
  else if (preset_name == "desk") preset = desk_config();
  else throw ConfigError("unknown preset '" + preset_name + "'");

  const json base = to_json(preset);
  std::map<std::string, json> base_flat, user_flat;
  flatten(base, "", base_flat);
  flatten(user, "", user_flat);
  for (const auto& [k, v] : user_flat)
    if (!base_flat.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  json j = base;
  j.merge_patch(user);
  // merge_patch drops keys set to null; restore the optional ones.
  for (const char* key : {"fixed_stride", "gamma_override"})
    if (!j.contains(key)) j[key] = nullptr;

  RunConfig c;
  c.preset = preset_name;
  c.seed = get<std::uint64_t>(j, "seed", "");
  c.dataset = get<std::string>(j, "dataset", "");
  c.weights_dir = get<std::string>(j, "weights_dir", "");
  c.run_dir = get<std::string>(j, "run_dir", "");
  c.work_dir = get<std::string>(j, "work_dir", "");

  const json& sj = j.at("sight");
  read_head(sj, c.sight.head, "sight");
  c.sight.backbone.variant = read_variant(sj, "sight");
  c.sight.clip.clip_len = get<int>(sj, "clip_len", "sight");
  c.sight.clip.resolution = get<int>(sj, "resolution", "sight");
  c.sight.backbone.tiny_widths = get<std::array<int, 3>>(sj, "widths", "sight");
  c.sight.backbone.feature_dim = get<int>(sj, "feature_dim", "sight");
  c.sight.head.feature_dim = c.sight.backbone.feature_dim;

  const json& aj = j.at("sound");
  read_head(aj, c.sound.head, "sound");
  c.sound.backbone.variant = read_variant(aj, "sound");
  c.sound.backbone.tiny_widths = get<std::array<int, 4>>(aj, "widths", "sound");
  c.sound.backbone.feature_dim = get<int>(aj, "feature_dim", "sound");
  c.sound.head.feature_dim = c.sound.backbone.feature_dim;
  c.sound.spectrogram.sample_rate = get<int>(aj, "sample_rate", "sound");
  c.sound.spectrogram.fft_size = get<int>(aj, "fft_size", "sound");
  c.sound.spectrogram.hop = get<int>(aj, "hop", "sound");
  c.sound.spectrogram.log_compression = get<bool>(aj, "log_compression", "sound");
  c.sound.spectrogram.segment_frames = get<int>(aj, "segment_frames", "sound");
  c.sound.n_segments = get<int>(aj, "n_segments", "sound");

  const json& tj = j.at("stride");
  c.stride.margin = get<double>(tj, "margin", "stride");
  c.stride.theta_s = get<double>(tj, "theta_s", "stride");
  c.stride.s_k_train = get<int>(tj, "s_k_train", "stride");
  c.stride.s_k_infer = get<int>(tj, "s_k_infer", "stride");
  c.stride.audio_enabled = get<bool>(tj, "audio_enabled", "stride");

  c.reliability.theta_r_v = get<double>(j.at("reliability"), "theta_r_v", "reliability");
  c.reliability.theta_r_a = get<double>(j.at("reliability"), "theta_r_a", "reliability");

  const json& sched = j.at("schedule");
  c.sight_schedule = read_schedule(sched.at("sight"), "schedule.sight");
  c.sound_schedule = read_schedule(sched.at("sound"), "schedule.sound");
  c.stride_schedule = read_schedule(sched.at("stride"), "schedule.stride");
  c.reliability_schedule = read_schedule(sched.at("reliability"), "schedule.reliability");
  c.reliability.epochs = c.reliability_schedule.epochs;
  c.reliability.learning_rate = c.reliability_schedule.sgd.learning_rate;
  c.reliability.batch_size = c.reliability_schedule.batch_size;

  const auto agg = get<std::string>(j, "aggregation", "");
  if (agg == "sum") c.aggregation = ClipAggregation::sum;
  else if (agg == "single_clip_extrapolation") c.aggregation = ClipAggregation::single_clip_extrapolation;
  else throw ConfigError("unknown aggregation '" + agg + "'");

  const json& yj = j.at("synthetic");
  auto& y = c.synthetic;
  y.n_train = get<int>(yj, "n_train", "synthetic");
  y.n_val = get<int>(yj, "n_val", "synthetic");
  y.n_test = get<int>(yj, "n_test", "synthetic");
  y.min_count = get<int>(yj, "min_count", "synthetic");
  y.max_count = get<int>(yj, "max_count", "synthetic");
  y.min_period_frames = get<double>(yj, "min_period_frames", "synthetic");
  y.max_period_frames = get<double>(yj, "max_period_frames", "synthetic");
  y.period_jitter = get<double>(yj, "period_jitter", "synthetic");
  y.degraded_fraction = get<double>(yj, "degraded_fraction", "synthetic");
  y.noisy_audio_fraction = get<double>(yj, "noisy_audio_fraction", "synthetic");
  y.audio_noise = get<double>(yj, "audio_noise", "synthetic");
  y.noisy_audio_noise = get<double>(yj, "noisy_audio_noise", "synthetic");
  y.visual_noise = get<double>(yj, "visual_noise", "synthetic");
  y.resolution = get<int>(yj, "resolution", "synthetic");
  y.fps = get<double>(yj, "fps", "synthetic");
  y.sample_rate = get<int>(yj, "sample_rate", "synthetic");
  y.seed = get<std::uint64_t>(yj, "seed", "synthetic");

  if (!j.at("fixed_stride").is_null()) c.fixed_stride = get<int>(j, "fixed_stride", "");
  c.no_audio = get<bool>(j, "no_audio", "");
  if (!j.at("gamma_override").is_null()) c.gamma_override = get<double>(j, "gamma_override", "");
  const auto split = parse_split(get<std::string>(j, "eval_split", ""));
  if (!split) throw ConfigError("unknown eval_split");
  c.eval_split = *split;

  std::map<std::string, json> resolved;
  flatten(to_json(c), "", resolved);
  for (const auto& [k, v] : resolved)
    if (k != "preset" && (!base_flat.contains(k) || base_flat.at(k) != v)) c.overrides.push_back(k);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return run_config_from_json(json::parse(in, nullptr, true, true));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void validate(const RunConfig& c) {
  auto check_schedule = [](const StageSchedule& s, const std::string& name) {
    if (s.epochs < 0) throw ConfigError(name + ".epochs must be >= 0");
    if (s.batch_size < 1) throw ConfigError(name + ".batch_size must be >= 1");
    if (!(s.sgd.learning_rate > 0.0)) throw ConfigError(name + ".learning_rate must be positive");
    if (s.sgd.momentum < 0.0 || s.sgd.momentum >= 1.0) throw ConfigError(name + ".momentum must lie in [0, 1)");
    if (s.sgd.clip_grad_norm < 0.0) throw ConfigError(name + ".clip_grad_norm must be >= 0");
    if (s.frozen_norm_epochs < 0) throw ConfigError(name + ".frozen_norm_epochs must be >= 0");
    if (!(s.frozen_norm_lr_scale > 0.0)) throw ConfigError(name + ".frozen_norm_lr_scale must be positive");
  };
  check_schedule(c.sight_schedule, "schedule.sight");
  check_schedule(c.sound_schedule, "schedule.sound");
  check_schedule(c.stride_schedule, "schedule.stride");
  check_schedule(c.reliability_schedule, "schedule.reliability");
  validate(c.sight.head);
  validate(c.sound.head);
  validate(c.stride);
  validate(c.reliability);
  validate(c.sound.spectrogram);
  if (c.sound.n_segments < 1) throw ConfigError("sound.n_segments must be >= 1");
  if (c.sight.clip.clip_len < 2 || c.sight.clip.resolution < 4) throw ConfigError("sight clip geometry too small");
  if (c.fixed_stride && *c.fixed_stride < 1) throw ConfigError("fixed_stride must be >= 1");
  if (c.gamma_override && !(*c.gamma_override >= 0.0 && *c.gamma_override <= 1.0))
    throw ConfigError("gamma_override must lie in [0, 1]");
  validate(c.synthetic);
}

}  // namespace avcount
