#include "stepalign/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stepalign/util.hpp"

namespace stepalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string loc(const fs::path& path, int line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

json parse_line(const fs::path& path, int line_no, const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw LoadError(loc(path, line_no) + "malformed JSON object");
  return j;
}

// Little-endian scalar IO, independent of host byte order.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_all(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("short write to " + path.string());
}

constexpr char kFseqMagic[5] = {'F', 'S', 'E', 'Q', '1'};

}  // namespace

const char* to_string(TrackMode mode) {
  return mode == TrackMode::narration ? "narration" : "step";
}

const char* to_string(Provenance p) { return p == Provenance::stage1 ? "stage1" : "stage2"; }

TrackMode track_mode_from_string(const std::string& s) {
  if (s == "narration") return TrackMode::narration;
  if (s == "step") return TrackMode::step;
  throw ValidationError("unknown track mode '" + s + "'");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "stage1") return Provenance::stage1;
  if (s == "stage2") return Provenance::stage2;
  throw ValidationError("unknown provenance '" + s + "'");
}

void TextTrack::validate() const {
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const auto& s = sentences[k];
    if (s.source_window) {
      if (s.source_window->start < 0 || s.source_window->start > s.source_window->end)
        throw ValidationError("track " + video_id + " sentence " + std::to_string(k) +
                              ": bad window");
    }
    if (mode == TrackMode::narration) {
      if (!s.source_window)
        throw ValidationError("narration track " + video_id + " sentence " + std::to_string(k) +
                              ": missing source window");
      if (k > 0 && sentences[k - 1].source_window->start > s.source_window->start)
        throw ValidationError("narration track " + video_id + ": windows not sorted at sentence " +
                              std::to_string(k));
    }
  }
}

const TrackData* VideoEntry::track_by_mode(TrackMode mode) const {
  for (const auto& t : tracks)
    if (t.track.mode == mode) return &t;
  return nullptr;
}

const VideoEntry* Dataset::find(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

AlignmentMatrix gt_matrix_from_windows(const TextTrack& track, int T) {
  if (T <= 0) throw ValidationError("gt_matrix_from_windows: T must be positive");
  int K = static_cast<int>(track.sentences.size());
  if (K == 0) throw ValidationError("gt_matrix_from_windows: empty track " + track.video_id);
  AlignmentMatrix m;
  m.kind = MatrixKind::ground_truth_binary;
  m.values = Tensor::zeros(K, T);
  for (int k = 0; k < K; ++k) {
    const auto& s = track.sentences[static_cast<std::size_t>(k)];
    if (!s.is_alignable()) continue;
    const TimeWindow& w = *s.source_window;
    if (w.start < 0 || w.end >= T)
      throw ValidationError("track " + track.video_id + " sentence " + std::to_string(k) +
                            ": window [" + std::to_string(w.start) + "," + std::to_string(w.end) +
                            "] outside [0," + std::to_string(T - 1) + "]");
    for (int t = w.start; t <= w.end; ++t) m.values.at(k, t) = 1.0;
  }
  return m;
}

// --- FSEQ1 ---------------------------------------------------------------------

std::string encode_fseq(const FeatureSequence& fs_data, bool as_f64) {
  if (fs_data.rows.numel() == 0) throw ValidationError("encode_fseq: empty sequence");
  std::string out;
  out.reserve(15 + fs_data.rows.numel() * (as_f64 ? 8 : 4));
  out.append(kFseqMagic, sizeof(kFseqMagic));
  out.push_back(static_cast<char>(fs_data.kind));
  put_u32(out, static_cast<uint32_t>(fs_data.length()));
  put_u32(out, static_cast<uint32_t>(fs_data.dim()));
  out.push_back(as_f64 ? 1 : 0);
  for (double v : fs_data.rows.data()) {
    if (as_f64) {
      put_u64(out, std::bit_cast<uint64_t>(v));
    } else {
      put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

FeatureSequence decode_fseq(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 15 || std::memcmp(bytes.data(), kFseqMagic, sizeof(kFseqMagic)) != 0)
    throw LoadError(origin + ": not an FSEQ1 block");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  uint8_t kind = p[5];
  uint32_t length = get_u32(p + 6);
  uint32_t dim = get_u32(p + 10);
  uint8_t dtype = p[14];
  if (kind > 2) throw LoadError(origin + ": bad kind byte");
  if (dtype > 1) throw LoadError(origin + ": bad dtype byte");
  if (length == 0 || dim == 0) throw LoadError(origin + ": zero dims");
  std::size_t want = static_cast<std::size_t>(length) * dim * (dtype == 1 ? 8 : 4);
  if (bytes.size() != 15 + want)
    throw LoadError(origin + ": payload size mismatch (" + std::to_string(bytes.size()) +
                    " bytes for " + std::to_string(length) + "x" + std::to_string(dim) + ")");
  FeatureSequence fs_data;
  fs_data.kind = static_cast<FeatureKind>(kind);
  fs_data.rows = Tensor::zeros(static_cast<int>(length), static_cast<int>(dim));
  auto& data = fs_data.rows.data();
  const unsigned char* q = p + 15;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (dtype == 1) {
      data[i] = std::bit_cast<double>(get_u64(q));
      q += 8;
    } else {
      data[i] = static_cast<double>(std::bit_cast<float>(get_u32(q)));
      q += 4;
    }
  }
  return fs_data;
}

void write_feature_file(const fs::path& path, const FeatureSequence& fs_data, bool as_f64) {
  write_all(path, encode_fseq(fs_data, as_f64));
}

FeatureSequence read_feature_file(const fs::path& path) {
  FeatureSequence fs_data = decode_fseq(read_all(path), path.string());
  fs_data.id = path.stem().string();
  return fs_data;
}

// --- track.jsonl -----------------------------------------------------------------

void write_track_file(const fs::path& path, const TextTrack& track) {
  track.validate();
  std::string out;
  for (std::size_t k = 0; k < track.sentences.size(); ++k) {
    const auto& s = track.sentences[k];
    json j;
    j["video_id"] = track.video_id;
    j["mode"] = to_string(track.mode);
    j["idx"] = k;
    j["text"] = s.text;
    if (s.source_window) {
      j["start"] = s.source_window->start;
      j["end"] = s.source_window->end;
    }
    if (s.alignable) j["alignable"] = *s.alignable;
    out += j.dump();
    out += '\n';
  }
  write_all(path, out);
}

TextTrack read_track_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  TextTrack track;
  std::vector<std::pair<int, Sentence>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(path, line_no, line);
    try {
      if (line_no == 1 || rows.empty()) {
        track.video_id = j.at("video_id").get<std::string>();
        track.mode = track_mode_from_string(j.at("mode").get<std::string>());
      } else {
        if (j.at("video_id").get<std::string>() != track.video_id)
          throw ValidationError("video_id mismatch");
        if (track_mode_from_string(j.at("mode").get<std::string>()) != track.mode)
          throw ValidationError("mode mismatch");
      }
      Sentence s;
      s.text = j.at("text").get<std::string>();
      if (j.contains("start") != j.contains("end"))
        throw ValidationError("start/end must come together");
      if (j.contains("start"))
        s.source_window = TimeWindow{j["start"].get<int>(), j["end"].get<int>()};
      if (j.contains("alignable")) s.alignable = j["alignable"].get<bool>();
      rows.emplace_back(j.at("idx").get<int>(), std::move(s));
    } catch (const json::exception& e) {
      throw LoadError(loc(path, line_no) + e.what());
    } catch (const ValidationError& e) {
      throw LoadError(loc(path, line_no) + e.what());
    }
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].first != static_cast<int>(k))
      throw LoadError(path.string() + ": sentence indices not contiguous from 0");
    track.sentences.push_back(std::move(rows[k].second));
  }
  track.validate();
  return track;
}

// --- alignment.csv ----------------------------------------------------------------

void write_alignment_csv(const fs::path& path, const AlignmentMatrix& m) {
  std::string out;
  for (int k = 0; k < m.K(); ++k) {
    for (int t = 0; t < m.T(); ++t) {
      if (t) out += ',';
      out += format_double(m.values.at(k, t));
    }
    out += '\n';
  }
  write_all(path, out);
}

AlignmentMatrix read_alignment_csv(const fs::path& path, MatrixKind kind) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw LoadError(loc(path, line_no) + "bad number '" + cell + "'");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw LoadError(loc(path, line_no) + "ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError(path.string() + ": empty matrix");
  AlignmentMatrix m;
  m.kind = kind;
  m.values = Tensor::zeros(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m.values.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  return m;
}

// --- howtostep.jsonl ---------------------------------------------------------------

void write_step_records(const fs::path& path, const std::vector<StepRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j;
    j["video_id"] = r.video_id;
    j["step_text"] = r.step_text;
    j["start"] = r.window.start;
    j["end"] = r.window.end;
    j["score"] = r.score;
    j["provenance"] = to_string(r.provenance);
    j["discarded"] = r.discarded;
    out += j.dump();
    out += '\n';
  }
  write_all(path, out);
}

std::vector<StepRecord> read_step_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<StepRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(path, line_no, line);
    try {
      StepRecord r;
      r.video_id = j.at("video_id").get<std::string>();
      r.step_text = j.at("step_text").get<std::string>();
      r.window = TimeWindow{j.at("start").get<int>(), j.at("end").get<int>()};
      r.score = j.at("score").get<double>();
      r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
      r.discarded = j.at("discarded").get<bool>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw LoadError(loc(path, line_no) + e.what());
    }
  }
  return records;
}

// --- dataset dir -------------------------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& dataset, bool as_f64) {
  fs::create_directories(dir);
  std::string manifest;
  for (const auto& v : dataset.videos) {
    if (v.id.empty()) throw ValidationError("save_dataset: video with empty id");
    if (v.features.length() != v.duration_s)
      throw ValidationError("save_dataset: video " + v.id + " has " +
                            std::to_string(v.features.length()) + " feature rows but duration " +
                            std::to_string(v.duration_s));
    fs::path vdir = dir / "videos" / v.id;
    std::string video_rel = "videos/" + v.id + "/video.fseq";
    write_feature_file(dir / video_rel, v.features, as_f64);
    json entry;
    entry["id"] = v.id;
    if (v.task_id) entry["task_id"] = *v.task_id;
    entry["duration_s"] = v.duration_s;
    entry["video_features"] = video_rel;
    json tracks = json::array();
    for (const auto& t : v.tracks) {
      std::string stem = to_string(t.track.mode);
      std::string track_rel = "videos/" + v.id + "/" + stem + ".jsonl";
      write_track_file(dir / track_rel, t.track);
      write_feature_file(dir / ("videos/" + v.id + "/" + stem + ".fseq"), t.features, as_f64);
      tracks.push_back(track_rel);
    }
    entry["tracks"] = tracks;
    manifest += entry.dump();
    manifest += '\n';
  }
  write_all(dir / "manifest.jsonl", manifest);
}

Dataset load_dataset(const fs::path& dir) {
  fs::path manifest_path = dir / "manifest.jsonl";
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open " + manifest_path.string());
  Dataset dataset;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(manifest_path, line_no, line);
    VideoEntry v;
    try {
      v.id = j.at("id").get<std::string>();
      if (j.contains("task_id")) v.task_id = j["task_id"].get<std::string>();
      v.duration_s = j.at("duration_s").get<int>();
      std::string feat_rel = j.at("video_features").get<std::string>();
      fs::path feat_path = dir / feat_rel;
      if (!fs::exists(feat_path))
        throw LoadError("video '" + v.id + "': missing feature file " + feat_rel);
      v.features = read_feature_file(feat_path);
      v.features.id = v.id;
      if (v.features.kind != FeatureKind::video)
        throw LoadError("video '" + v.id + "': " + feat_rel + " is not a video sequence");
      if (v.features.length() != v.duration_s)
        throw LoadError("video '" + v.id + "': duration " + std::to_string(v.duration_s) +
                        " but " + std::to_string(v.features.length()) + " feature rows");
      for (const auto& track_rel_j : j.at("tracks")) {
        std::string track_rel = track_rel_j.get<std::string>();
        fs::path track_path = dir / track_rel;
        if (!fs::exists(track_path))
          throw LoadError("video '" + v.id + "': missing track file " + track_rel);
        TrackData td;
        td.track = read_track_file(track_path);
        if (td.track.video_id != v.id)
          throw LoadError("track " + track_rel + " belongs to '" + td.track.video_id +
                          "', not '" + v.id + "'");
        fs::path tf_path = track_path;
        tf_path.replace_extension(".fseq");
        if (!fs::exists(tf_path))
          throw LoadError("video '" + v.id + "': missing text features " + tf_path.string());
        td.features = read_feature_file(tf_path);
        td.features.kind = FeatureKind::text;
        td.features.id = v.id + "/" + to_string(td.track.mode);
        if (td.features.length() != static_cast<int>(td.track.sentences.size()))
          throw LoadError("video '" + v.id + "': track " + track_rel + " has " +
                          std::to_string(td.track.sentences.size()) + " sentences but " +
                          std::to_string(td.features.length()) + " feature rows");
        for (const auto& s : td.track.sentences) {
          if (s.source_window && s.source_window->end >= v.duration_s)
            throw LoadError("video '" + v.id + "': window beyond duration in " + track_rel);
        }
        v.tracks.push_back(std::move(td));
      }
    } catch (const json::exception& e) {
      throw LoadError(loc(manifest_path, line_no) + e.what());
    } catch (const LoadError& e) {
      throw LoadError(loc(manifest_path, line_no) + e.what());
    }
    dataset.videos.push_back(std::move(v));
  }
  return dataset;
}

}  // namespace stepalign
