#include <fstream>
#include <iomanip>
#include <sstream>

#include "avcount/errors.hpp"
#include "avcount/pipeline.hpp"

namespace avcount {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json row_to_json(const PredictionRow& r) {
  json tags = json::array();
  for (auto t : r.tags) tags.push_back(std::string(to_string(t)));
  return {{"video_id", r.video_id},
          {"label", r.label},
          {"sight", r.sight},
          {"sound", r.sound ? json(*r.sound) : json(nullptr)},
          {"fused", r.fused},
          {"gamma", r.gamma},
          {"stride", r.stride},
          {"challenge_tags", tags}};
}

}  // namespace

void save_predictions(const fs::path& path, const std::vector<PredictionRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DependencyError("cannot write predictions " + path.string());
  for (const auto& r : rows) out << row_to_json(r).dump() << '\n';
}

std::vector<PredictionRow> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing predictions file " + path.string());
  std::vector<PredictionRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PredictionRow r;
      r.video_id = j.at("video_id").get<std::string>();
      r.label = j.at("label").get<double>();
      r.sight = j.at("sight").get<double>();
      if (!j.at("sound").is_null()) r.sound = j.at("sound").get<double>();
      r.fused = j.at("fused").get<double>();
      r.gamma = j.at("gamma").get<double>();
      r.stride = j.at("stride").get<int>();
      for (const auto& t : j.at("challenge_tags")) {
        const auto tag = parse_challenge_tag(t.get<std::string>());
        if (!tag) throw DomainError("unknown challenge tag " + t.get<std::string>());
        r.tags.insert(*tag);
      }
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    } catch (const DomainError& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  return rows;
}

std::string format_report(const Evaluation& e) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(10) << "modality" << std::right << std::setw(6) << "n" << std::setw(10) << "MAE"
      << std::setw(10) << "OBO" << '\n';
  auto line = [&](const char* name, const EvalReport& r) {
    out << std::left << std::setw(10) << name << std::right << std::setw(6) << r.n << std::setw(10) << r.mae
        << std::setw(10) << r.obo << '\n';
  };
  line("sight", e.sight);
  if (e.sound) line("sound", *e.sound);
  line("fused", e.fused);

  if (!e.fused.per_tag_count.empty()) {
    out << '\n'
        << std::left << std::setw(26) << "challenge" << std::right << std::setw(6) << "n" << std::setw(12)
        << "MAE sight" << std::setw(12) << "MAE fused" << '\n';
    for (auto tag : kAllChallengeTags) {
      const auto it = e.fused.per_tag_count.find(tag);
      if (it == e.fused.per_tag_count.end() || it->second == 0) continue;
      out << std::left << std::setw(26) << to_string(tag) << std::right << std::setw(6) << it->second
          << std::setw(12) << e.sight.per_tag_mae.at(tag) << std::setw(12) << e.fused.per_tag_mae.at(tag) << '\n';
    }
  }
  return out.str();
}

void write_report(const fs::path& dir, const Evaluation& e) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "report.txt");
    if (!out) throw DependencyError("cannot write report in " + dir.string());
    out << format_report(e);
  }
  save_predictions(dir / "predictions.jsonl", e.rows);
  std::ofstream out(dir / "metrics.jsonl");
  auto emit = [&](const std::string& modality, const EvalReport& r) {
    out << json{{"modality", modality}, {"n", r.n}, {"mae", r.mae}, {"obo", r.obo}}.dump() << '\n';
    for (const auto& [tag, mae] : r.per_tag_mae)
      out << json{{"modality", modality},
                  {"challenge", std::string(to_string(tag))},
                  {"n", r.per_tag_count.at(tag)},
                  {"mae", mae}}
                 .dump()
          << '\n';
  };
  emit("sight", e.sight);
  if (e.sound) emit("sound", *e.sound);
  emit("fused", e.fused);
}

}  // namespace avcount
