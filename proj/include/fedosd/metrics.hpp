#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedosd/data.hpp"
#include "fedosd/error.hpp"
#include "fedosd/nn.hpp"
#include "json.hpp"

namespace fedosd {

enum class Stage { Pretrain, Unlearn, PostTrain, Done };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Unlearn: return "unlearn";
    case Stage::PostTrain: return "posttrain";
    case Stage::Done: return "done";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "unlearn") return Stage::Unlearn;
  if (s == "posttrain") return Stage::PostTrain;
  if (s == "done") return Stage::Done;
  throw IoError("unknown stage '" + s + "'");
}

struct RoundRecord {
  std::size_t round = 0;
  Stage stage = Stage::Pretrain;
  double asr = 0.0;
  double r_acc_mean = 0.0;
  double r_acc_std = 0.0;
  double r_acc_worst = 0.0;
  double r_acc_best = 0.0;
  double dist_origin = 0.0;
  std::size_t nc = 0;
  double target_uce_loss = 0.0;
  double mean_remaining_ce_loss = 0.0;
  double lr = 0.0;
  std::string flags;  // '|'-separated tokens, empty when nothing happened

  void add_flag(const std::string& f) {
    if (has_flag(f)) return;
    if (!flags.empty()) flags += '|';
    flags += f;
  }

  bool has_flag(const std::string& f) const {
    std::size_t start = 0;
    while (start <= flags.size()) {
      const std::size_t end = std::min(flags.find('|', start), flags.size());
      if (flags.compare(start, end - start, f) == 0 && end - start == f.size()) return true;
      start = end + 1;
    }
    return false;
  }

  bool operator==(const RoundRecord&) const = default;
};

/// Fraction of trigger samples classified as their shifted label.
inline double asr(const ModelParams& model, const Batch& trigger_test) {
  if (trigger_test.size() == 0) throw PreconditionError("ASR needs a non-empty trigger set");
  return accuracy(model, trigger_test);
}

struct AccuracyStats {
  double mean = 0.0;
  double std = 0.0;
  double worst = 0.0;
  double best = 0.0;
};

/// Per-client test accuracy, summarized with equal weight per client.
inline AccuracyStats summarize_accuracies(const std::vector<double>& acc) {
  AccuracyStats s;
  if (acc.empty()) return s;
  double sum = 0.0;
  for (double a : acc) sum += a;
  s.mean = sum / static_cast<double>(acc.size());
  double var = 0.0;
  for (double a : acc) var += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(var / static_cast<double>(acc.size()));
  s.worst = *std::min_element(acc.begin(), acc.end());
  s.best = *std::max_element(acc.begin(), acc.end());
  return s;
}

inline AccuracyStats r_acc(const ModelParams& model, const std::vector<const Batch*>& testsets) {
  std::vector<double> acc;
  acc.reserve(testsets.size());
  for (const Batch* b : testsets) acc.push_back(accuracy(model, *b));
  return summarize_accuracies(acc);
}

inline double dist_origin(const ModelParams& model, const ModelParams& origin) {
  if (model.size() != origin.size()) throw PreconditionError("model/origin size mismatch");
  return distance(model.flat, origin.flat);
}

// --- persistence ----------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "round,stage,asr,r_acc_mean,r_acc_std,r_acc_worst,r_acc_best,dist_origin,nc,"
    "target_uce_loss,mean_remaining_ce_loss,lr,flags";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv_line(const RoundRecord& r) {
  std::string s;
  s += std::to_string(r.round);
  s += ',';
  s += to_string(r.stage);
  for (double v : {r.asr, r.r_acc_mean, r.r_acc_std, r.r_acc_worst, r.r_acc_best, r.dist_origin}) {
    s += ',';
    s += format_double(v);
  }
  s += ',';
  s += std::to_string(r.nc);
  for (double v : {r.target_uce_loss, r.mean_remaining_ce_loss, r.lr}) {
    s += ',';
    s += format_double(v);
  }
  s += ',';
  s += r.flags;
  return s;
}

inline std::string records_to_csv(const std::vector<RoundRecord>& records) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += to_csv_line(r);
    out += '\n';
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Overwrites `path` with the CSV form of `records`.
inline void write_records(const std::vector<RoundRecord>& records, const std::string& path) {
  write_text_file(path, records_to_csv(records));
}

inline std::vector<RoundRecord> parse_records(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError("records CSV has an unexpected header");
  std::vector<RoundRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int k = 0; k < 12; ++k) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) throw IoError("records CSV line " + std::to_string(line_no) + " is short");
      f.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    f.push_back(line.substr(start));
    try {
      RoundRecord r;
      r.round = std::stoull(f[0]);
      r.stage = stage_from_string(f[1]);
      r.asr = std::stod(f[2]);
      r.r_acc_mean = std::stod(f[3]);
      r.r_acc_std = std::stod(f[4]);
      r.r_acc_worst = std::stod(f[5]);
      r.r_acc_best = std::stod(f[6]);
      r.dist_origin = std::stod(f[7]);
      r.nc = std::stoull(f[8]);
      r.target_uce_loss = std::stod(f[9]);
      r.mean_remaining_ce_loss = std::stod(f[10]);
      r.lr = std::stod(f[11]);
      r.flags = f[12];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError("records CSV line " + std::to_string(line_no) + " does not parse");
    }
  }
  return out;
}

inline std::vector<RoundRecord> read_records(const std::string& path) {
  return parse_records(read_text_file(path));
}

inline nlohmann::ordered_json record_to_json(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["asr"] = r.asr;
  j["r_acc_mean"] = r.r_acc_mean;
  j["r_acc_std"] = r.r_acc_std;
  j["r_acc_worst"] = r.r_acc_worst;
  j["r_acc_best"] = r.r_acc_best;
  j["dist_origin"] = r.dist_origin;
  j["nc"] = r.nc;
  return j;
}

/// Last record of each stage, keyed by stage name.
inline nlohmann::ordered_json stage_summary(const std::vector<RoundRecord>& records) {
  nlohmann::ordered_json stages = nlohmann::ordered_json::object();
  for (const auto& r : records) stages[to_string(r.stage)] = record_to_json(r);
  return stages;
}

inline void write_summary(const std::vector<RoundRecord>& records, const std::string& algorithm,
                          std::uint64_t seed, const std::string& path) {
  nlohmann::ordered_json j;
  j["algorithm"] = algorithm;
  j["seed"] = seed;
  j["stages"] = stage_summary(records);
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace fedosd
