#pragma once

// Plot-ready dumps of a TrajectoryLog: one CSV with every column and two
// JSON series files (rewards, losses) keyed by step.

#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfpo/error.hpp"
#include "mfpo/trainer.hpp"

namespace mfpo::report {

namespace fs = std::filesystem;

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "phase", "epoch", "step", "L_text", "L_image", "L_margin", "L_total", "chosen_text_reward",
      "rejected_text_reward", "chosen_image_reward", "rejected_image_reward"};
  return cols;
}

inline void write_trajectory_csv(const train::TrajectoryLog& log, std::ostream& out) {
  for (std::size_t i = 0; i < csv_columns().size(); ++i) out << (i ? "," : "") << csv_columns()[i];
  out << '\n';
  out.precision(17);
  for (const auto& r : log.rows) {
    out << train::phase_name(r.phase) << ',' << r.epoch << ',' << r.step << ',' << r.text << ',' << r.image << ','
        << r.margin << ',' << r.total << ',' << r.rewards.chosen_text << ',' << r.rewards.rejected_text << ','
        << r.rewards.chosen_image << ',' << r.rewards.rejected_image << '\n';
  }
}

inline nlohmann::json reward_series(const train::TrajectoryLog& log) {
  nlohmann::json j{{"x", "step"}, {"rows", nlohmann::json::array()}};
  for (const auto& r : log.rows) {
    j["rows"].push_back({{"step", r.step},
                         {"phase", train::phase_name(r.phase)},
                         {"epoch", r.epoch},
                         {"chosen_text", r.rewards.chosen_text},
                         {"rejected_text", r.rewards.rejected_text},
                         {"chosen_image", r.rewards.chosen_image},
                         {"rejected_image", r.rewards.rejected_image}});
  }
  return j;
}

inline nlohmann::json loss_series(const train::TrajectoryLog& log) {
  nlohmann::json j{{"x", "step"}, {"rows", nlohmann::json::array()}};
  for (const auto& r : log.rows) {
    j["rows"].push_back({{"step", r.step},
                         {"phase", train::phase_name(r.phase)},
                         {"epoch", r.epoch},
                         {"L_text", r.text},
                         {"L_image", r.image},
                         {"L_margin", r.margin},
                         {"L_total", r.total}});
  }
  return j;
}

struct ReportFiles {
  fs::path csv, rewards, losses;
};

/// Writes trajectory.csv, rewards.json and losses.json into `dir`.
inline ReportFiles write_report(const train::TrajectoryLog& log, const fs::path& dir) {
  if (log.empty()) throw ValidationError("cannot report an empty trajectory log");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  ReportFiles files{dir / "trajectory.csv", dir / "rewards.json", dir / "losses.json"};
  auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    return out;
  };
  {
    auto out = open(files.csv);
    write_trajectory_csv(log, out);
  }
  open(files.rewards) << reward_series(log).dump(1) << '\n';
  open(files.losses) << loss_series(log).dump(1) << '\n';
  return files;
}

// ---------------------------------------------------------------------------
// Reading logs back (for the `report` verb)

inline int phase_from_name(const std::string& s) {
  for (int p = 0; p < 4; ++p)
    if (train::phase_name(p) == s) return p;
  throw ValidationError("unknown phase '" + s + "'");
}

inline train::TrajectoryLog read_trajectory_csv(std::istream& in) {
  train::TrajectoryLog log;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "", "empty trajectory file");
  ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != csv_columns().size()) throw ParseError(lineno, "", "expected " + std::to_string(csv_columns().size()) + " columns");
    try {
      train::TrajectoryRow r;
      r.phase = phase_from_name(f[0]);
      r.epoch = std::stoi(f[1]);
      r.step = std::stoi(f[2]);
      r.text = std::stod(f[3]);
      r.image = std::stod(f[4]);
      r.margin = std::stod(f[5]);
      r.total = std::stod(f[6]);
      r.rewards = {std::stod(f[7]), std::stod(f[8]), std::stod(f[9]), std::stod(f[10])};
      log.rows.push_back(r);
    } catch (const std::logic_error& e) {
      throw ParseError(lineno, "", std::string("bad number: ") + e.what());
    }
  }
  return log;
}

}  // namespace mfpo::report
