#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hcl/config.hpp"
#include "hcl/errors.hpp"
#include "hcl/kv_file.hpp"
#include "hcl/results_io.hpp"
#include "hcl/trainer.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 1;

void print_summary(const hcl::RunRecord& r) {
  for (const auto& [mode, m] : r.matrices) {
    std::printf("  %-8s A_T = %s", hcl::to_string(mode).c_str(),
                hcl::format_sig6(hcl::average_accuracy(m)).c_str());
    if (m.num_tasks() >= 2) std::printf("  F_T = %s", hcl::format_sig6(hcl::average_forgetting(m)).c_str());
    std::printf("\n");
  }
}

int run(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
        const std::string& data_dir, const std::string& dump_synth, const std::string& out,
        bool resume, bool quiet) {
  const hcl::ExperimentConfig cfg = hcl::parse_config(config_path);
  hcl::RunOptions opts;
  opts.out_dir = out;
  opts.data_dir = data_dir;
  opts.dump_synth = dump_synth;
  opts.resume = resume;
  if (!quiet) opts.log = [](const std::string& msg) { std::fprintf(stderr, "[hcl] %s\n", msg.c_str()); };

  const hcl::Dataset data = hcl::load_dataset(cfg.stream.dataset, hcl::data_options(cfg, data_dir));
  opts.dataset = &data;
  for (std::uint64_t seed : seeds.empty() ? cfg.seeds : seeds) {
    const hcl::RunResult result = hcl::continual_run(cfg, seed, opts);
    std::printf("%s seed %llu -> %s\n", cfg.name.c_str(), static_cast<unsigned long long>(seed),
                result.run_dir.string().c_str());
    print_summary(result.record);
  }
  return 0;
}

std::vector<hcl::RunRecord> load_records(const std::string& out) {
  std::vector<hcl::RunRecord> records;
  for (const auto& dir : hcl::find_run_dirs(out)) records.push_back(hcl::read_run_record(dir / hcl::kReportFile));
  if (records.empty()) throw hcl::IoError("no finished runs under " + out);
  return records;
}

int report(const std::string& out) {
  const auto rows = hcl::aggregate(load_records(out));
  const std::filesystem::path root(out);
  const std::string table = hcl::results_table(rows);
  std::ofstream(root / "results.csv") << hcl::results_csv(rows);
  std::ofstream(root / "results.txt") << table;
  std::cout << table;
  return 0;
}

int plot(const std::string& out) {
  for (const auto& path : hcl::write_accuracy_plots(load_records(out), out)) {
    std::cout << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous continual learning runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string data_dir;
  std::string dump_synth;
  std::string out = "runs";
  bool resume = false;
  bool quiet = false;

  auto* run_cmd = app.add_subcommand("run", "Train a continual-learning stream from a config");
  run_cmd->add_option("--config", config_path, "Experiment config file")->required();
  run_cmd->add_option("--seed", seeds, "Seed(s) to run; defaults to the config's seeds");
  run_cmd->add_option("--data-dir", data_dir, "Dataset directory (default: $HCL_DATA_DIR or ./data)");
  run_cmd->add_option("--dump-synth", dump_synth, "Write synthetic batches as PPM grids here");
  run_cmd->add_option("--out", out, "Output root for run directories")->capture_default_str();
  run_cmd->add_flag("--resume", resume, "Continue an interrupted run directory");
  run_cmd->add_flag("--quiet", quiet, "Suppress progress messages");

  auto* report_cmd = app.add_subcommand("report", "Aggregate finished runs into a results table");
  report_cmd->add_option("--out", out, "Output root to scan")->capture_default_str();

  auto* plot_cmd = app.add_subcommand("plot", "Plot accuracy over tasks as SVG");
  plot_cmd->add_option("--out", out, "Output root to scan")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run_cmd) return run(config_path, seeds, data_dir, dump_synth, out, resume, quiet);
    if (*report_cmd) return report(out);
    if (*plot_cmd) return plot(out);
  } catch (const hcl::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfigExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeExit;
  }
  return kRuntimeExit;
}
