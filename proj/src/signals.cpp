#include "trainspeed/signals.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "trainspeed/errors.hpp"

namespace trainspeed::signals {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_number(std::string_view field, std::string_view column, std::size_t line) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || field.empty()) {
    throw ParseError("invalid number '" + std::string(field) + "' in column " + std::string(column),
                     line);
  }
  return value;
}

void check_speed(double v, std::string_view column, std::size_t line) {
  if (!std::isfinite(v)) {
    throw ValidationError("line " + std::to_string(line) + ": non-finite " + std::string(column));
  }
  if (v < 0.0) {
    throw ValidationError("line " + std::to_string(line) + ": negative " + std::string(column));
  }
}

}  // namespace

std::string_view to_string(RunRole role) {
  switch (role) {
    case RunRole::train: return "train";
    case RunRole::validation: return "validation";
    case RunRole::test: return "test";
  }
  return "train";
}

RunRole role_from_string(std::string_view name) {
  if (name == "train") return RunRole::train;
  if (name == "validation") return RunRole::validation;
  if (name == "test") return RunRole::test;
  throw ParseError("unknown run role '" + std::string(name) + "'");
}

bool TrainRun::has_ground_truth() const {
  return std::all_of(samples.begin(), samples.end(),
                     [](const SensorSample& s) { return s.train_speed.has_value(); });
}

void validate_run(const TrainRun& run) {
  if (run.samples.empty()) throw ValidationError("run '" + run.run_id + "' has no samples");
  for (std::size_t i = 0; i < run.samples.size(); ++i) {
    const auto& s = run.samples[i];
    const auto where = "run '" + run.run_id + "' sample " + std::to_string(i);
    if (!std::isfinite(s.t) || s.t < 0.0) throw ValidationError(where + ": invalid time");
    if (i > 0 && !(s.t > run.samples[i - 1].t)) {
      throw ValidationError(where + ": time not strictly increasing");
    }
    auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
    if (bad(s.wheel_speed) || bad(s.gps_speed) || (s.train_speed && bad(*s.train_speed))) {
      throw ValidationError(where + ": speeds must be finite and non-negative");
    }
  }
}

std::vector<std::string> spacing_warnings(const TrainRun& run, double nominal_dt) {
  std::vector<std::string> warnings;
  for (std::size_t i = 1; i < run.samples.size(); ++i) {
    const double dt = run.samples[i].t - run.samples[i - 1].t;
    if (std::abs(dt - nominal_dt) > 0.1 * nominal_dt) {
      warnings.push_back("run '" + run.run_id + "': irregular spacing " + format_double(dt) +
                         " s before t=" + format_double(run.samples[i].t));
    }
  }
  return warnings;
}

std::vector<TrainRun> read_runs(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw ParseError("missing header row", 1);
  if (line != kCsvHeader) {
    throw ParseError("unexpected header '" + line + "', expected '" + std::string(kCsvHeader) + "'",
                     line_no);
  }

  std::vector<TrainRun> runs;
  std::unordered_map<std::string, std::size_t> index;
  while (next_line()) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 5) {
      throw ParseError("expected 5 fields, found " + std::to_string(fields.size()), line_no);
    }
    if (fields[0].empty()) throw ParseError("empty run_id", line_no);

    SensorSample s;
    s.t = parse_number(fields[1], "t", line_no);
    s.wheel_speed = parse_number(fields[2], "wheel_speed", line_no);
    s.gps_speed = parse_number(fields[3], "gps_speed", line_no);
    if (!fields[4].empty()) s.train_speed = parse_number(fields[4], "train_speed", line_no);

    if (!std::isfinite(s.t) || s.t < 0.0) {
      throw ValidationError("line " + std::to_string(line_no) + ": invalid time");
    }
    check_speed(s.wheel_speed, "wheel_speed", line_no);
    check_speed(s.gps_speed, "gps_speed", line_no);
    if (s.train_speed) check_speed(*s.train_speed, "train_speed", line_no);

    const std::string id(fields[0]);
    auto [it, inserted] = index.try_emplace(id, runs.size());
    if (inserted) {
      runs.push_back(TrainRun{id, {}, false, RunRole::train});
    }
    auto& samples = runs[it->second].samples;
    if (!samples.empty() && !(s.t > samples.back().t)) {
      throw ValidationError("line " + std::to_string(line_no) + ": time " + std::string(fields[1]) +
                            " not increasing within run '" + id + "'");
    }
    samples.push_back(s);
  }
  return runs;
}

std::vector<TrainRun> load_runs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_runs(in);
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_runs(std::ostream& out, const std::vector<TrainRun>& runs) {
  out << kCsvHeader << '\n';
  for (const auto& run : runs) {
    for (const auto& s : run.samples) {
      out << run.run_id << ',' << format_double(s.t) << ',' << format_double(s.wheel_speed) << ','
          << format_double(s.gps_speed) << ',';
      if (s.train_speed) out << format_double(*s.train_speed);
      out << '\n';
    }
  }
}

void save_runs(const std::vector<TrainRun>& runs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_runs(out, runs);
  if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path manifest_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".manifest.json");
  return p;
}

void save_manifest(const std::vector<TrainRun>& runs, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& run : runs) {
    doc.push_back({{"run_id", run.run_id},
                   {"role", std::string(to_string(run.role))},
                   {"has_wsp", run.has_wsp},
                   {"samples", run.samples.size()}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void apply_manifest(std::vector<TrainRun>& runs, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  std::map<std::string, const nlohmann::json*> by_id;
  for (const auto& entry : doc) by_id[entry.at("run_id").get<std::string>()] = &entry;
  for (auto& run : runs) {
    const auto it = by_id.find(run.run_id);
    if (it == by_id.end()) continue;
    run.role = role_from_string(it->second->value("role", "train"));
    run.has_wsp = it->second->value("has_wsp", false);
  }
}

}  // namespace trainspeed::signals
