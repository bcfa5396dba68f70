#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avcount/media.hpp"
#include "avcount/sight_stream.hpp"
#include "avcount/types.hpp"

namespace avcount {

enum class Split { train, val, test };
std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

struct VideoRecord {
  std::string video_id;
  std::filesystem::path media_path;
  std::optional<std::filesystem::path> audio_path;
  Split split = Split::train;
  CountLabel count{1.0};
  double start_s = 0.0;
  double end_s = 0.0;
  std::optional<std::string> action_class;
  TagSet challenge_tags;
  double fps = 25.0;
  /// Optional per-repetition [start_s, end_s] boundaries.
  std::vector<std::pair<double, double>> repetition_bounds;

  /// Mean repetition length in frames: from the boundaries when present,
  /// otherwise segment length / count.
  double mean_period_frames() const;
};

/// Throws DomainError when the record violates its invariants.
void validate(const VideoRecord& record);

struct DatasetManifest {
  std::vector<VideoRecord> records;
  /// Directory that relative media paths are resolved against.
  std::filesystem::path base_dir;

  std::vector<const VideoRecord*> split(Split which) const;
  std::map<Split, std::size_t> split_counts() const;
  const VideoRecord* find(const std::string& video_id) const;
};

/// One JSON object per line; blank lines and lines starting with '#' are
/// skipped. Schema problems raise ParseError carrying the line number.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in, const std::string& source_name = "<manifest>");
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
std::string serialize_record(const VideoRecord& record);

/// Opens the media behind a record. Errors surface on access, not on load.
class MediaProvider {
 public:
  virtual ~MediaProvider() = default;
  virtual std::shared_ptr<const VideoSource> video(const VideoRecord& record) const = 0;
  /// Null when the record has no audio track.
  virtual std::shared_ptr<const AudioSource> audio(const VideoRecord& record) const = 0;
};

/// Frame directories and WAV files on disk; other containers go through the
/// external decoder into `work_dir`.
class FileMediaProvider final : public MediaProvider {
 public:
  FileMediaProvider(std::filesystem::path base_dir, std::filesystem::path work_dir, int sample_rate = 16000);
  std::shared_ptr<const VideoSource> video(const VideoRecord& record) const override;
  std::shared_ptr<const AudioSource> audio(const VideoRecord& record) const override;

 private:
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path base_dir_;
  std::filesystem::path work_dir_;
  int sample_rate_;
};

struct Dataset {
  DatasetManifest manifest;
  std::shared_ptr<const MediaProvider> media;
};

SegmentFrames record_segment(const VideoRecord& record, const VideoSource& video);

/// Count scaled to the part of the segment covered by a clip span of
/// clip_len * stride frames starting at `start`, floored at `floor`.
double scaled_clip_label(const VideoRecord& record, const SegmentFrames& segment, long start, int stride,
                         int clip_len, double floor = 0.1);

struct SampledClip {
  VideoClip clip;
  CountLabel label{1.0};
};

/// Clip at `stride` with a start drawn uniformly from the positions that keep
/// the span inside the segment (the segment start when it is shorter).
SampledClip clip_sampler(const VideoRecord& record, const VideoSource& video, int stride, const ClipConfig& config,
                         std::mt19937_64& offset_rng);

}  // namespace avcount
