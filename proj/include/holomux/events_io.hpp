#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "holomux/memory_sim.hpp"
#include "holomux/text.hpp"

namespace holomux {

inline const char* region_tag(Region r) { return r == Region::Stokes ? "S" : "AS"; }

inline Region parse_region(std::string_view s) {
  if (s == "S") return Region::Stokes;
  if (s == "AS") return Region::AntiStokes;
  throw FormatError("unknown region '" + std::string(s) + "'");
}

/// Streams the event-list CSV; within a shot, Stokes rows precede anti-Stokes rows.
class EventCsvWriter {
public:
  EventCsvWriter(std::ostream& out, bool time_bins) : out_(out), time_bins_(time_bins) {
    out_ << "shot_id,region,theta_x_mrad,theta_y_mrad";
    if (time_bins_) out_ << ",time_bin_ns";
    out_ << '\n';
  }

  void write(const PhotonEvent& e) {
    out_ << e.shot_id << ',' << region_tag(e.region) << ',' << text::sig6(e.angle.theta_x) << ','
         << text::sig6(e.angle.theta_y);
    if (time_bins_) out_ << ',' << (e.time_bin_ns ? text::sig6(*e.time_bin_ns) : std::string());
    out_ << '\n';
  }

  void write(const ShotRecord& shot) {
    for (const auto& e : shot.stokes_events) write(e);
    for (const auto& e : shot.antistokes_events) write(e);
  }

private:
  std::ostream& out_;
  bool time_bins_;
};

class TruthCsvWriter {
public:
  explicit TruthCsvWriter(std::ostream& out) : out_(out) { out_ << "shot_id,stokes_idx,antistokes_idx\n"; }
  void write(const ShotRecord& shot) {
    for (const auto& t : shot.truth) {
      out_ << shot.shot_id << ',' << t.stokes_index << ',' << t.antistokes_index << '\n';
    }
  }

private:
  std::ostream& out_;
};

inline std::vector<PhotonEvent> read_events_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("event CSV: missing header");
  const auto header = text::split(text::trim(line), ',');
  const bool with_time = header.size() == 5 && header[4] == "time_bin_ns";
  if (header.size() < 4 || header[0] != "shot_id" || header[1] != "region" || header[2] != "theta_x_mrad" ||
      header[3] != "theta_y_mrad" || (header.size() == 5 && !with_time) || header.size() > 5) {
    throw FormatError("event CSV: unexpected header '" + line + "'");
  }
  std::vector<PhotonEvent> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty()) continue;
    const auto f = text::split(row, ',');
    if (f.size() != header.size()) {
      throw FormatError("event CSV line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    }
    try {
      PhotonEvent e;
      e.shot_id = text::parse_int(f[0]);
      e.region = parse_region(text::trim(f[1]));
      e.angle = {text::parse_double(f[2]), text::parse_double(f[3])};
      if (!e.angle.finite()) throw FormatError("non-finite angle");
      if (with_time && !text::trim(f[4]).empty()) e.time_bin_ns = text::parse_double(f[4]);
      out.push_back(e);
    } catch (const FormatError& err) {
      throw FormatError("event CSV line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return out;
}

inline std::vector<PhotonEvent> load_events_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open event file '" + path + "'");
  return read_events_csv(in);
}

/// Splits a flat event stream into shots. Rows of one shot must be contiguous.
inline std::vector<ShotRecord> group_shots(const std::vector<PhotonEvent>& events) {
  std::vector<ShotRecord> out;
  std::set<std::int64_t> seen;
  for (const auto& e : events) {
    if (out.empty() || out.back().shot_id != e.shot_id) {
      if (!seen.insert(e.shot_id).second) {
        throw FormatError("event stream not grouped by shot: shot " + std::to_string(e.shot_id) + " reappears");
      }
      out.emplace_back();
      out.back().shot_id = e.shot_id;
    }
    (e.region == Region::Stokes ? out.back().stokes_events : out.back().antistokes_events).push_back(e);
  }
  return out;
}

struct TruthRow {
  std::int64_t shot_id = 0;
  TruthLink link;
};

inline std::vector<TruthRow> read_truth_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "shot_id,stokes_idx,antistokes_idx") {
    throw FormatError("truth CSV: unexpected header");
  }
  std::vector<TruthRow> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty()) continue;
    const auto f = text::split(row, ',');
    if (f.size() != 3) throw FormatError("truth CSV line " + std::to_string(line_no) + ": expected 3 fields");
    const auto s = text::parse_int(f[1]);
    const auto a = text::parse_int(f[2]);
    if (s < 0 || a < 0) throw FormatError("truth CSV line " + std::to_string(line_no) + ": negative index");
    out.push_back({text::parse_int(f[0]), {static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(a)}});
  }
  return out;
}

}  // namespace holomux
