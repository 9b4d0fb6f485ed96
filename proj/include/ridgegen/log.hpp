#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ridgegen/generator.hpp"
#include "ridgegen/recognition.hpp"

namespace ridgegen {

// Flat CSV training logs plus a step heartbeat for long runs. Rows are
// flushed as written so an interrupted run keeps its history.

// Columns: step,adv_loss,id_part,app_part,total.
class TrainingCsvLog {
 public:
  explicit TrainingCsvLog(const std::filesystem::path& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    check_integrity(out_.good(), "training log: cannot open " + path.string());
    if (!append || std::filesystem::file_size(path) == 0)
      out_ << "step,adv_loss,id_part,app_part,total\n" << std::flush;
  }

  void log(int64_t step, const StepReport& r) {
    out_ << step << "," << format(r.adv_loss) << "," << format(r.id_part) << ","
         << format(r.app_part) << "," << format(r.total) << "\n"
         << std::flush;
    check_integrity(out_.good(), "training log: write failed");
  }

 private:
  static std::string format(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  }

  std::ofstream out_;
};

struct TrainingCsvRow {
  int64_t step = 0;
  double adv_loss = 0, id_part = 0, app_part = 0, total = 0;
};

inline std::vector<TrainingCsvRow> read_training_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  check_integrity(in.good(), "training log: cannot open " + path.string());
  std::string line;
  check_integrity(static_cast<bool>(std::getline(in, line)) &&
                      line == "step,adv_loss,id_part,app_part,total",
                  "training log: bad header in " + path.string());
  std::vector<TrainingCsvRow> rows;
  int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TrainingCsvRow r;
    char c1, c2, c3, c4;
    std::istringstream fields(line);
    fields >> r.step >> c1 >> r.adv_loss >> c2 >> r.id_part >> c3 >> r.app_part >> c4 >> r.total;
    check_integrity(!fields.fail() && c1 == ',' && c2 == ',' && c3 == ',' && c4 == ',',
                    "training log: bad row at " + path.string() + ":" + std::to_string(lineno));
    rows.push_back(r);
  }
  return rows;
}

// Columns: epoch,loss,accuracy (epochs numbered from 1).
inline void write_epoch_csv(const std::vector<EpochStats>& stats,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  check_integrity(out.good(), "epoch log: cannot open " + path.string());
  out << "epoch,loss,accuracy\n";
  for (size_t i = 0; i < stats.size(); ++i) {
    std::ostringstream os;
    os << std::setprecision(17) << stats[i].loss << "," << stats[i].accuracy;
    out << (i + 1) << "," << os.str() << "\n";
  }
  check_integrity(out.good(), "epoch log: write failed for " + path.string());
}

// One line every `interval` steps (and on the first and last step).
inline void heartbeat(std::ostream& os, int64_t step, int64_t total_steps, const StepReport& r,
                      int64_t interval) {
  if (step % interval != 0 && step != 1 && step != total_steps) return;
  os << "step " << step << "/" << total_steps << " adv=" << std::setprecision(4) << r.adv_loss
     << " d=" << r.d_loss << " id=" << r.id_part << " app=" << r.app_part << " total=" << r.total
     << "\n"
     << std::flush;
}

}  // namespace ridgegen
