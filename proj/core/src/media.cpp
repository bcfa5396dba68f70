#include "avcount/media.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "avcount/errors.hpp"

namespace fs = std::filesystem;

namespace avcount {

Frame resize_frame(const Frame& in, int height, int width) {
  if (height < 1 || width < 1) throw ArgumentError("resize target must be positive");
  if (in.height == height && in.width == width) return in;
  if (in.height < 1 || in.width < 1) throw ArgumentError("cannot resize an empty frame");
  Frame out{height, width, std::vector<float>(static_cast<std::size_t>(height) * width * 3)};
  const double sy = static_cast<double>(in.height) / height;
  const double sx = static_cast<double>(in.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * in.at(y0, x0, c) + wx * in.at(y0, x1, c);
        const double bottom = (1.0 - wx) * in.at(y1, x0, c) + wx * in.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

FrameArraySource::FrameArraySource(std::vector<Frame> frames, double fps) : frames_(std::move(frames)), fps_(fps) {
  if (!(fps > 0.0)) throw ArgumentError("fps must be positive");
}

Frame FrameArraySource::frame(long index) const {
  if (index < 0 || index >= num_frames()) throw ArgumentError("frame index out of range");
  return frames_[static_cast<std::size_t>(index)];
}

FrameDirectorySource::FrameDirectorySource(const fs::path& dir, double fps) : fps_(fps) {
  if (!(fps > 0.0)) throw ArgumentError("fps must be positive");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw MediaError("frame directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pnm")) files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end());
  if (files_.empty()) throw MediaError("no .ppm frames in " + dir.string());
}

Frame FrameDirectorySource::frame(long index) const {
  if (index < 0 || index >= num_frames()) throw ArgumentError("frame index out of range");
  return read_ppm(files_[static_cast<std::size_t>(index)]);
}

WaveformSource::WaveformSource(AudioWaveform waveform) : waveform_(std::move(waveform)) {
  if (waveform_.sample_rate <= 0) throw ArgumentError("sample rate must be positive");
}

namespace {

AudioWaveform slice_waveform(const AudioWaveform& w, double start_s, double end_s) {
  const auto n = static_cast<long>(w.samples.size());
  const long a = std::clamp(static_cast<long>(std::llround(start_s * w.sample_rate)), 0L, n);
  const long b = std::clamp(static_cast<long>(std::llround(end_s * w.sample_rate)), a, n);
  return {std::vector<double>(w.samples.begin() + a, w.samples.begin() + b), w.sample_rate};
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioWaveform WaveformSource::slice(double start_s, double end_s) const {
  return slice_waveform(waveform_, start_s, end_s);
}

AudioWaveform read_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MediaError("cannot open audio file " + path.string());
  char riff[4], wave[4];
  in.read(riff, 4);
  read_le<std::uint32_t>(in);
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw MediaError("not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> data;
  while (in) {
    char id[4];
    in.read(id, 4);
    const auto size = read_le<std::uint32_t>(in);
    if (!in) break;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::vector<char> chunk(size);
      in.read(chunk.data(), size);
      if (size < 16) throw MediaError("short fmt chunk in " + path.string());
      std::memcpy(&format, chunk.data(), 2);
      std::memcpy(&channels, chunk.data() + 2, 2);
      std::memcpy(&rate, chunk.data() + 4, 4);
      std::memcpy(&bits, chunk.data() + 14, 2);
      if (format == 0xFFFE && size >= 26) std::memcpy(&format, chunk.data() + 24, 2);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      data.resize(static_cast<std::size_t>(in.gcount()));
    } else {
      in.seekg(size, std::ios::cur);
    }
    if (size % 2 == 1) in.seekg(1, std::ios::cur);
  }
  if (!have_fmt || channels == 0 || rate == 0) throw MediaError("missing or invalid fmt chunk in " + path.string());
  const bool is_float = format == 3;
  if (!(format == 1 || is_float)) throw MediaError("unsupported WAV encoding (not linear PCM) in " + path.string());
  if (is_float && bits != 32) throw MediaError("unsupported float WAV width");
  if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32) throw MediaError("unsupported PCM width");

  const std::size_t bytes = bits / 8;
  const std::size_t frames = data.size() / (bytes * channels);
  AudioWaveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = p + (i * channels + c) * bytes;
      double v = 0.0;
      if (is_float) {
        float f;
        std::memcpy(&f, s, 4);
        v = f;
      } else if (bits == 8) {
        v = (static_cast<int>(s[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(s[0] | (s[1] << 8)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        std::int32_t x;
        std::memcpy(&x, s, 4);
        v = x / 2147483648.0;
      }
      acc += v;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const fs::path& path, const AudioWaveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MediaError("cannot write audio file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (double v : w.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
  }
  if (!out) throw MediaError("failed writing " + path.string());
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

Frame read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MediaError("cannot open frame " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P6" && magic != "P3") throw MediaError("unsupported image format in " + path.string());
  Frame f;
  int maxval = 0;
  try {
    f.width = std::stoi(next_token(in));
    f.height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw MediaError("malformed PPM header in " + path.string());
  }
  if (f.width < 1 || f.height < 1 || maxval < 1 || maxval > 65535) throw MediaError("bad PPM header in " + path.string());
  const std::size_t count = static_cast<std::size_t>(f.width) * f.height * 3;
  f.rgb.resize(count);
  if (magic == "P3") {
    for (std::size_t i = 0; i < count; ++i) {
      int v;
      if (!(in >> v)) throw MediaError("truncated PPM " + path.string());
      f.rgb[i] = static_cast<float>(v) / maxval;
    }
    return f;
  }
  in.get();  // single whitespace after maxval
  const std::size_t bps = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(count * bps);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw MediaError("truncated PPM " + path.string());
  for (std::size_t i = 0; i < count; ++i) {
    const int v = bps == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
    f.rgb[i] = static_cast<float>(v) / maxval;
  }
  return f;
}

void write_ppm(const fs::path& path, const Frame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MediaError("cannot write frame " + path.string());
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  std::vector<unsigned char> raw(frame.rgb.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(frame.rgb[i], 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

WavFileSource::WavFileSource(fs::path path) : path_(std::move(path)) {}

const AudioWaveform& WavFileSource::load() const {
  static std::mutex mu;
  std::lock_guard lock(mu);
  if (!cache_) cache_ = std::make_shared<AudioWaveform>(read_wav(path_));
  return *cache_;
}

int WavFileSource::sample_rate() const { return load().sample_rate; }
double WavFileSource::duration_s() const { return load().duration_s(); }
AudioWaveform WavFileSource::slice(double start_s, double end_s) const {
  return slice_waveform(load(), start_s, end_s);
}

namespace {

std::optional<fs::path> find_on_path(const std::string& program) {
  const char* path_env = std::getenv("PATH");
  if (!path_env) return std::nullopt;
  std::stringstream ss(path_env);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    fs::path candidate = fs::path(dir) / program;
    std::error_code ec;
    if (fs::is_regular_file(candidate, ec)) return candidate;
  }
  return std::nullopt;
}

std::string quoted(const fs::path& p) {
  std::string s = "'";
  for (char c : p.string()) s += (c == '\'') ? std::string("'\\''") : std::string(1, c);
  return s + "'";
}

}  // namespace

DecodedMedia decode_with_external_tool(const fs::path& media, const fs::path& work_dir, double fps, int sample_rate) {
  const auto ffmpeg = find_on_path("ffmpeg");
  if (!ffmpeg) throw MediaError("no external decoder (ffmpeg) on PATH to decode " + media.string());
  DecodedMedia out;
  out.fps = fps;
  out.frame_dir = work_dir / (media.stem().string() + "_frames");
  out.wav_path = work_dir / (media.stem().string() + ".wav");
  fs::create_directories(out.frame_dir);
  const std::string video_cmd = quoted(*ffmpeg) + " -loglevel error -y -i " + quoted(media) + " -vf fps=" +
                                std::to_string(fps) + " " + quoted(out.frame_dir / "%06d.ppm");
  const std::string audio_cmd = quoted(*ffmpeg) + " -loglevel error -y -i " + quoted(media) + " -ac 1 -ar " +
                                std::to_string(sample_rate) + " -acodec pcm_s16le " + quoted(out.wav_path);
  if (std::system(video_cmd.c_str()) != 0) throw MediaError("external decoder failed on " + media.string());
  if (std::system(audio_cmd.c_str()) != 0) out.wav_path.clear();
  return out;
}

}  // namespace avcount
