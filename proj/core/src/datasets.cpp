#include "avcount/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "avcount/errors.hpp"

namespace avcount {

using json = nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val" || text == "validation") return Split::val;
  if (text == "test") return Split::test;
  return std::nullopt;
}

double VideoRecord::mean_period_frames() const {
  if (!repetition_bounds.empty()) {
    double total = 0.0;
    for (const auto& [a, b] : repetition_bounds) total += b - a;
    return total / static_cast<double>(repetition_bounds.size()) * fps;
  }
  return (end_s - start_s) * fps / count.value();
}

void validate(const VideoRecord& r) {
  if (r.video_id.empty()) throw DomainError("video_id must not be empty");
  if (!(r.end_s > r.start_s)) throw DomainError("segment end must be after its start for " + r.video_id);
  if (r.start_s < 0.0) throw DomainError("segment start must be non-negative for " + r.video_id);
  if (!(r.fps > 0.0)) throw DomainError("fps must be positive for " + r.video_id);
  for (const auto& [a, b] : r.repetition_bounds)
    if (!(b > a)) throw DomainError("repetition bound end must be after its start for " + r.video_id);
}

std::vector<const VideoRecord*> DatasetManifest::split(Split which) const {
  std::vector<const VideoRecord*> out;
  for (const auto& r : records)
    if (r.split == which) out.push_back(&r);
  return out;
}

std::map<Split, std::size_t> DatasetManifest::split_counts() const {
  std::map<Split, std::size_t> counts{{Split::train, 0}, {Split::val, 0}, {Split::test, 0}};
  for (const auto& r : records) ++counts[r.split];
  return counts;
}

const VideoRecord* DatasetManifest::find(const std::string& video_id) const {
  for (const auto& r : records)
    if (r.video_id == video_id) return &r;
  return nullptr;
}

namespace {

VideoRecord record_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("record must be a JSON object");
  VideoRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.media_path = j.at("media_path").get<std::string>();
  if (j.contains("audio_path") && !j.at("audio_path").is_null()) r.audio_path = j.at("audio_path").get<std::string>();
  const auto split_text = j.at("split").get<std::string>();
  const auto split = parse_split(split_text);
  if (!split) throw DomainError("unknown split '" + split_text + "'");
  r.split = *split;
  r.count = CountLabel(j.at("count").get<double>());
  const auto& seg = j.at("segment");
  if (!seg.is_array() || seg.size() != 2) throw DomainError("segment must be [start_s, end_s]");
  r.start_s = seg[0].get<double>();
  r.end_s = seg[1].get<double>();
  if (j.contains("action_class") && !j.at("action_class").is_null())
    r.action_class = j.at("action_class").get<std::string>();
  if (j.contains("challenge_tags")) {
    for (const auto& t : j.at("challenge_tags")) {
      const auto text = t.get<std::string>();
      const auto tag = parse_challenge_tag(text);
      if (!tag) throw DomainError("unknown challenge tag '" + text + "'");
      r.challenge_tags.insert(*tag);
    }
  }
  r.fps = j.value("fps", 25.0);
  if (j.contains("repetition_bounds")) {
    for (const auto& b : j.at("repetition_bounds")) {
      if (!b.is_array() || b.size() != 2) throw DomainError("repetition bound must be [start_s, end_s]");
      r.repetition_bounds.emplace_back(b[0].get<double>(), b[1].get<double>());
    }
  }
  validate(r);
  return r;
}

json record_to_json(const VideoRecord& r) {
  json j{{"video_id", r.video_id},
         {"media_path", r.media_path.string()},
         {"split", std::string(to_string(r.split))},
         {"count", r.count.value()},
         {"segment", {r.start_s, r.end_s}},
         {"fps", r.fps}};
  j["audio_path"] = r.audio_path ? json(r.audio_path->string()) : json(nullptr);
  j["action_class"] = r.action_class ? json(*r.action_class) : json(nullptr);
  json tags = json::array();
  for (auto t : r.challenge_tags) tags.push_back(std::string(to_string(t)));
  j["challenge_tags"] = tags;
  if (!r.repetition_bounds.empty()) {
    json b = json::array();
    for (const auto& [s, e] : r.repetition_bounds) b.push_back({s, e});
    j["repetition_bounds"] = b;
  }
  return j;
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::string& source_name) {
  DatasetManifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    VideoRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(source_name + ": " + e.what(), line_no);
    } catch (const DomainError& e) {
      throw ParseError(source_name + ": " + e.what(), line_no);
    }
    if (!seen.insert(r.video_id).second) throw ParseError(source_name + ": duplicate video_id " + r.video_id, line_no);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) spdlog::warn("manifest {} contains no records", source_name);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("cannot open manifest " + path.string());
  DatasetManifest m = parse_manifest(in, path.string());
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto counts = m.split_counts();
  spdlog::info("manifest {}: {} train / {} val / {} test", path.string(), counts.at(Split::train),
               counts.at(Split::val), counts.at(Split::test));
  return m;
}

std::string serialize_record(const VideoRecord& record) { return record_to_json(record).dump(); }

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write manifest " + path.string());
  for (const auto& r : manifest.records) out << serialize_record(r) << '\n';
}

FileMediaProvider::FileMediaProvider(std::filesystem::path base_dir, std::filesystem::path work_dir, int sample_rate)
    : base_dir_(std::move(base_dir)), work_dir_(std::move(work_dir)), sample_rate_(sample_rate) {}

std::filesystem::path FileMediaProvider::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir_ / p;
}

std::shared_ptr<const VideoSource> FileMediaProvider::video(const VideoRecord& record) const {
  const auto path = resolve(record.media_path);
  if (std::filesystem::is_directory(path)) return std::make_shared<FrameDirectorySource>(path, record.fps);
  if (!std::filesystem::exists(path)) throw MediaError("missing media " + path.string());
  const auto decoded = decode_with_external_tool(path, work_dir_ / record.video_id, record.fps, sample_rate_);
  return std::make_shared<FrameDirectorySource>(decoded.frame_dir, decoded.fps);
}

std::shared_ptr<const AudioSource> FileMediaProvider::audio(const VideoRecord& record) const {
  if (record.audio_path) {
    const auto path = resolve(*record.audio_path);
    if (!std::filesystem::exists(path)) throw MediaError("missing audio " + path.string());
    return std::make_shared<WavFileSource>(path);
  }
  const auto media = resolve(record.media_path);
  if (std::filesystem::is_directory(media)) return nullptr;
  const auto decoded = decode_with_external_tool(media, work_dir_ / record.video_id, record.fps, sample_rate_);
  if (decoded.wav_path.empty() || !std::filesystem::exists(decoded.wav_path)) return nullptr;
  return std::make_shared<WavFileSource>(decoded.wav_path);
}

SegmentFrames record_segment(const VideoRecord& record, const VideoSource& video) {
  return segment_frames(record.start_s, record.end_s, video.fps(), video.num_frames());
}

double scaled_clip_label(const VideoRecord& record, const SegmentFrames& segment, long start, int stride,
                         int clip_len, double floor) {
  const long span = static_cast<long>(clip_len) * stride;
  const long lo = std::max(start, segment.begin);
  const long hi = std::min(start + span, segment.end);
  const double overlap = static_cast<double>(std::max(0L, hi - lo));
  return std::max(floor, record.count.value() * overlap / static_cast<double>(segment.length()));
}

SampledClip clip_sampler(const VideoRecord& record, const VideoSource& video, int stride, const ClipConfig& config,
                         std::mt19937_64& offset_rng) {
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  const SegmentFrames seg = record_segment(record, video);
  const long span = static_cast<long>(config.clip_len) * stride;
  const long last_start = std::max(seg.begin, seg.end - span);
  std::uniform_int_distribution<long> pick(seg.begin, last_start);
  const long start = pick(offset_rng);
  SampledClip s{make_clip(video, seg, start, stride, config),
                CountLabel(scaled_clip_label(record, seg, start, stride, config.clip_len))};
  return s;
}

}  // namespace avcount
