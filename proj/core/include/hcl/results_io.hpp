#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hcl/metrics.hpp"

namespace hcl {

// Everything a finished (config, seed) run contributes to reports.
struct RunRecord {
  std::string name;
  std::string method;
  bool buffer = false;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::map<EvalMode, AccuracyMatrix> matrices;
  std::vector<double> task_seconds;
  std::vector<std::size_t> synthesis_steps;
  // Per-epoch mean of each objective component, keyed "t<task>.<component>".
  std::map<std::string, std::vector<double>> loss_traces;

  bool operator==(const RunRecord&) const = default;
};

// CSV with header "row,col,value", one line per defined entry.
void write_accuracy_csv(const AccuracyMatrix& m, const std::filesystem::path& path);
AccuracyMatrix read_accuracy_csv(const std::filesystem::path& path, EvalMode mode);

// Structured-text report: identity, matrices, A_T and F_T per mode, timings
// and loss traces. Numbers use six significant digits unless `exact`, which
// writes round-trip text (used for resume state).
void write_run_record(const RunRecord& record, const std::filesystem::path& path,
                      bool exact = false);
RunRecord read_run_record(const std::filesystem::path& path);

// Run directories under `root` holding a report file, in sorted path order.
std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root);
inline constexpr const char* kReportFile = "report.txt";

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one run
};

struct ResultRow {
  std::string method;
  bool buffer = false;
  EvalMode mode = EvalMode::task_il;
  std::size_t runs = 0;
  MetricSummary accuracy;
  std::optional<MetricSummary> forgetting;  // absent for single-task streams
};

MetricSummary summarize(const std::vector<double>& values);

// Groups records by name and mode. Rows are sorted by (name, mode), so the
// result does not depend on record order. A group whose records disagree on
// the config hash raises AggregationError.
std::vector<ResultRow> aggregate(const std::vector<RunRecord>& records);

std::string results_csv(const std::vector<ResultRow>& rows);
std::string results_table(const std::vector<ResultRow>& rows);

// Mean accuracy over seen tasks after each task, one line per group; one SVG
// per evaluation mode. Returns the files written.
std::vector<std::filesystem::path> write_accuracy_plots(const std::vector<RunRecord>& records,
                                                        const std::filesystem::path& out_dir);

}  // namespace hcl
