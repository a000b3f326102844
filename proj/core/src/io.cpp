#include "nsda/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace nsda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::pair<fs::path, fs::path> sidecar_paths(const fs::path& path) {
  fs::path stem = path;
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".f32") stem.replace_extension();
  fs::path header = stem;
  header += ".json";
  fs::path payload = stem;
  payload += ".f32";
  return {header, payload};
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

Recording load_recording(const fs::path& path) {
  const auto [header_path, payload_path] = sidecar_paths(path);

  json header;
  {
    std::ifstream in(header_path);
    if (!in) throw DataError("cannot open header " + header_path.string());
    try {
      in >> header;
    } catch (const json::exception& e) {
      throw DataError("malformed header " + header_path.string() + ": " + e.what());
    }
  }

  Recording rec;
  try {
    rec.patient_id = header.at("patient_id").get<std::string>();
    rec.sample_rate_hz = header.at("sample_rate_hz").get<double>();
    rec.channels = header.at("channels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("malformed header " + header_path.string() + ": " + e.what());
  }
  if (!(rec.sample_rate_hz > 0.0)) throw DataError("invalid sample rate");
  const auto n = header.at("samples_per_channel").get<std::int64_t>();
  if (n < 0) throw DataError("malformed header: negative sample count");

  std::ifstream in(payload_path, std::ios::binary);
  if (!in) throw DataError("cannot open payload " + payload_path.string());
  in.seekg(0, std::ios::end);
  const std::uint64_t bytes = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  const std::uint64_t expected =
      static_cast<std::uint64_t>(n) * rec.channels.size() * sizeof(float);
  if (bytes != expected)
    throw DataError("payload length mismatch: " + payload_path.string() + " has " +
                    std::to_string(bytes) + " bytes, expected " + std::to_string(expected));

  rec.samples.assign(rec.channels.size(), std::vector<double>(static_cast<std::size_t>(n)));
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(n));
  for (auto& channel : rec.samples) {
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (!in) throw DataError("payload read failed: " + payload_path.string());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const float f = std::bit_cast<float>(to_le(raw[i]));
      if (!std::isfinite(f)) throw DataError("non-finite sample in " + payload_path.string());
      channel[i] = static_cast<double>(f);
    }
  }
  rec.validate();
  return rec;
}

void write_recording(const fs::path& path, const Recording& rec) {
  rec.validate();
  const auto [header_path, payload_path] = sidecar_paths(path);

  json header = {
      {"patient_id", rec.patient_id},
      {"sample_rate_hz", rec.sample_rate_hz},
      {"channels", rec.channels},
      {"samples_per_channel", rec.samples_per_channel()},
  };
  {
    std::ofstream out(header_path);
    if (!out) throw DataError("cannot write header " + header_path.string());
    out << header.dump(2) << "\n";
  }

  std::ofstream out(payload_path, std::ios::binary);
  if (!out) throw DataError("cannot write payload " + payload_path.string());
  std::vector<std::uint32_t> raw;
  for (const auto& channel : rec.samples) {
    raw.resize(channel.size());
    for (std::size_t i = 0; i < channel.size(); ++i)
      raw[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(channel[i])));
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * 4));
  }
  if (!out) throw DataError("payload write failed: " + payload_path.string());
}

std::vector<AnnotationTrack> load_annotations_csv(const fs::path& path, int duration_s) {
  auto in = open_text(path);
  std::map<std::pair<std::string, std::string>, std::vector<std::uint8_t>> tracks;

  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first && !fields.empty() && fields[0] == "patient_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() != 4)
      throw DataError("bad annotation row in " + path.string() + ": " + line);
    const int second = std::stoi(fields[2]);
    const int label = std::stoi(fields[3]);
    if (second < 0 || (label != 0 && label != 1))
      throw DataError("bad annotation row in " + path.string() + ": " + line);
    auto& labels = tracks[{fields[0], fields[1]}];
    if (labels.size() <= static_cast<std::size_t>(second)) labels.resize(second + 1, 0);
    labels[second] = static_cast<std::uint8_t>(label);
  }

  std::vector<AnnotationTrack> out;
  for (auto& [key, labels] : tracks) {
    if (duration_s > 0 && labels.size() < static_cast<std::size_t>(duration_s))
      labels.resize(duration_s, 0);
    out.push_back({key.first, key.second, std::move(labels)});
  }
  return out;
}

void write_annotations_csv(const fs::path& path, const std::vector<AnnotationTrack>& tracks) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "patient_id,expert_id,second_index,label\n";
  for (const auto& t : tracks)
    for (std::size_t s = 0; s < t.labels.size(); ++s)
      out << t.patient_id << ',' << t.expert_id << ',' << s << ',' << int(t.labels[s]) << '\n';
}

PredictionMatrix load_predictions_csv(const fs::path& path) {
  auto in = open_text(path);

  struct Cell {
    std::size_t row, col;
    double p;
  };
  std::vector<Cell> cells;
  std::vector<std::string> segment_ids, detector_ids;
  std::map<std::string, std::size_t> seg_index, det_index;

  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first && !fields.empty() && fields[0] == "segment_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() != 3)
      throw DataError("bad prediction row in " + path.string() + ": " + line);
    auto [sit, snew] = seg_index.try_emplace(fields[0], segment_ids.size());
    if (snew) segment_ids.push_back(fields[0]);
    auto [dit, dnew] = det_index.try_emplace(fields[1], detector_ids.size());
    if (dnew) detector_ids.push_back(fields[1]);
    cells.push_back({sit->second, dit->second, std::stod(fields[2])});
  }

  PredictionMatrix m;
  m.segment_ids = std::move(segment_ids);
  m.detector_ids = std::move(detector_ids);
  m.probs.assign(m.rows() * m.cols(), -1.0);
  for (const auto& c : cells) m.at(c.row, c.col) = c.p;
  for (double p : m.probs)
    if (p < 0.0) throw DataError("prediction matrix has missing cells in " + path.string());
  m.validate();
  return m;
}

void write_predictions_csv(const fs::path& path, const PredictionMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "segment_id,detector_id,probability\n";
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      out << m.segment_ids[i] << ',' << m.detector_ids[j] << ',' << format_double(m.at(i, j))
          << '\n';
}

std::vector<ConsensusRow> load_consensus_csv(const fs::path& path) {
  auto in = open_text(path);
  std::vector<ConsensusRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first && !fields.empty() && fields[0] == "segment_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() != 3) throw DataError("bad consensus row in " + path.string() + ": " + line);
    rows.push_back({fields[0], std::stod(fields[1]), std::stoi(fields[2])});
  }
  return rows;
}

void write_consensus_csv(const fs::path& path, const std::vector<ConsensusRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "segment_id,score,label\n";
  for (const auto& r : rows)
    out << r.segment_id << ',' << format_double(r.score) << ',' << r.label << '\n';
}

}  // namespace nsda
