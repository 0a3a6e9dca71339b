#include "hcl/results_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hcl/errors.hpp"
#include "hcl/kv_file.hpp"

namespace hcl {

namespace {

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": bad number '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": bad integer '" + s + "'");
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename T, typename F>
std::string join_numbers(const std::vector<T>& values, F fmt) {
  std::vector<std::string> parts;
  parts.reserve(values.size());
  for (const auto& v : values) parts.push_back(fmt(v));
  return join_list(parts);
}

std::vector<double> parse_reals(const std::string& text, const std::string& where) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& s : split_list(text)) out.push_back(parse_double(trim(s), where));
  return out;
}

}  // namespace

void write_accuracy_csv(const AccuracyMatrix& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "row,col,value\n";
  for (std::size_t i = 1; i <= m.rows_written(); ++i) {
    for (std::size_t j = 1; j <= i; ++j) os << i << ',' << j << ',' << format_real(m.at(i, j)) << '\n';
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f << os.str();
  }
  std::filesystem::rename(tmp, path);
}

AccuracyMatrix read_accuracy_csv(const std::filesystem::path& path, EvalMode mode) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  if (trim(line) != "row,col,value") throw IoError(path.string() + ": missing header");
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    const auto parts = split_list(line);
    if (parts.size() != 3) throw IoError(path.string() + ": malformed line '" + line + "'");
    const auto i = parse_u64(trim(parts[0]), path.string());
    const auto j = parse_u64(trim(parts[1]), path.string());
    if (i == 0 || j == 0 || j > i) throw IoError(path.string() + ": entry outside the lower triangle");
    if (rows.size() < i) rows.resize(i);
    auto& row = rows[i - 1];
    if (row.size() != j - 1) throw IoError(path.string() + ": entries out of order");
    row.push_back(parse_double(trim(parts[2]), path.string()));
  }
  if (rows.empty()) throw IoError(path.string() + ": empty matrix");
  AccuracyMatrix m(rows.size(), mode);
  for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i + 1, rows[i]);
  return m;
}

void write_run_record(const RunRecord& r, const std::filesystem::path& path, bool exact) {
  const auto num = [exact](double v) { return exact ? format_real(v) : format_sig6(v); };
  KeyValueDoc doc;
  doc.set("name", r.name);
  doc.set("method", r.method);
  doc.set("buffer", r.buffer ? "yes" : "no");
  doc.set("config_hash", hex64(r.config_hash));
  doc.set("seed", std::to_string(r.seed));
  std::vector<std::string> modes;
  for (const auto& [mode, m] : r.matrices) modes.push_back(to_string(mode));
  doc.set("modes", join_list(modes));
  for (const auto& [mode, m] : r.matrices) {
    const std::string p = to_string(mode);
    doc.set(p + ".tasks", std::to_string(m.num_tasks()));
    for (std::size_t i = 1; i <= m.rows_written(); ++i) {
      doc.set(p + ".row" + std::to_string(i), join_numbers(m.row(i), num));
    }
    if (m.complete()) {
      doc.set(p + ".A_T", num(average_accuracy(m)));
      if (m.num_tasks() >= 2) doc.set(p + ".F_T", num(average_forgetting(m)));
    }
  }
  doc.set("task_seconds", join_numbers(r.task_seconds, num));
  doc.set("synthesis_steps",
          join_numbers(r.synthesis_steps, [](std::size_t v) { return std::to_string(v); }));
  for (const auto& [key, trace] : r.loss_traces) doc.set("loss." + key, join_numbers(trace, num));
  doc.write_file(path);
}

RunRecord read_run_record(const std::filesystem::path& path) {
  const KeyValueDoc doc = KeyValueDoc::read_file(path);
  const std::string where = path.string();
  RunRecord r;
  r.name = doc.at("name");
  r.method = doc.at("method");
  r.buffer = doc.at("buffer") == "yes";
  r.config_hash = std::stoull(doc.at("config_hash"), nullptr, 16);
  r.seed = parse_u64(doc.at("seed"), where);
  for (const auto& name : split_list(doc.at("modes"))) {
    const EvalMode mode = parse_eval_mode(trim(name));
    const std::string p = to_string(mode);
    AccuracyMatrix m(parse_u64(doc.at(p + ".tasks"), where), mode);
    for (std::size_t i = 1; doc.contains(p + ".row" + std::to_string(i)); ++i) {
      m.set_row(i, parse_reals(doc.at(p + ".row" + std::to_string(i)), where));
    }
    r.matrices.emplace(mode, std::move(m));
  }
  r.task_seconds = parse_reals(doc.at("task_seconds"), where);
  for (double v : parse_reals(doc.at("synthesis_steps"), where)) {
    r.synthesis_steps.push_back(static_cast<std::size_t>(v));
  }
  for (const auto& key : doc.keys_with_prefix("loss.")) {
    r.loss_traces[key.substr(5)] = parse_reals(doc.at(key), where);
  }
  return r;
}

std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::exists(root)) throw IoError("no such directory " + root.string());
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == kReportFile) out.push_back(e.path().parent_path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<ResultRow> aggregate(const std::vector<RunRecord>& records) {
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[r.name].push_back(&r);
  std::vector<ResultRow> rows;
  for (const auto& [name, group] : groups) {
    for (const RunRecord* r : group) {
      if (r->config_hash != group.front()->config_hash) {
        throw AggregationError("runs of '" + name + "' come from different configs (" +
                               hex64(group.front()->config_hash) + " vs " + hex64(r->config_hash) + ")");
      }
    }
    std::set<EvalMode> modes;
    for (const RunRecord* r : group) {
      for (const auto& [mode, m] : r->matrices) modes.insert(mode);
    }
    for (EvalMode mode : modes) {
      std::vector<double> acc;
      std::vector<double> fgt;
      bool forgetting_defined = true;
      for (const RunRecord* r : group) {
        const auto it = r->matrices.find(mode);
        if (it == r->matrices.end()) {
          throw AggregationError("run seed " + std::to_string(r->seed) + " of '" + name + "' lacks " +
                                 to_string(mode) + " results");
        }
        acc.push_back(average_accuracy(it->second));
        if (it->second.num_tasks() >= 2) {
          fgt.push_back(average_forgetting(it->second));
        } else {
          forgetting_defined = false;
        }
      }
      ResultRow row;
      row.method = name;
      row.buffer = group.front()->buffer;
      row.mode = mode;
      row.runs = group.size();
      row.accuracy = summarize(acc);
      if (forgetting_defined) row.forgetting = summarize(fgt);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "method,buffer,mode,runs,A_T_mean,A_T_std,F_T_mean,F_T_std\n";
  for (const auto& r : rows) {
    os << r.method << ',' << (r.buffer ? "yes" : "no") << ',' << to_string(r.mode) << ',' << r.runs
       << ',' << format_sig6(r.accuracy.mean) << ',' << format_sig6(r.accuracy.stddev) << ',';
    if (r.forgetting) {
      os << format_sig6(r.forgetting->mean) << ',' << format_sig6(r.forgetting->stddev);
    } else {
      os << ',';
    }
    os << '\n';
  }
  return os.str();
}

namespace {

std::string pm(const MetricSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", s.mean, s.stddev);
  return buf;
}

// Display width, counting each UTF-8 sequence as one column.
std::size_t columns(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

}  // namespace

std::string results_table(const std::vector<ResultRow>& rows) {
  std::vector<std::vector<std::string>> cells{{"Method", "Buffer", "Mode", "Runs", "A_T", "F_T"}};
  for (const auto& r : rows) {
    cells.push_back({r.method, r.buffer ? "yes" : "no", to_string(r.mode), std::to_string(r.runs),
                     pm(r.accuracy), r.forgetting ? pm(*r.forgetting) : "n/a"});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], columns(row[c]));
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& cell = cells[r][c];
      os << cell;
      if (c + 1 < cells[r].size()) os << std::string(width[c] - columns(cell) + 2, ' ');
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::vector<std::filesystem::path> write_accuracy_plots(const std::vector<RunRecord>& records,
                                                        const std::filesystem::path& out_dir) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::filesystem::create_directories(out_dir);
  std::set<EvalMode> modes;
  for (const auto& r : records) {
    for (const auto& [mode, m] : r.matrices) modes.insert(mode);
  }
  std::vector<std::filesystem::path> written;
  for (EvalMode mode : modes) {
    // name -> per-task list of seen-task mean accuracies across seeds
    std::map<std::string, std::vector<std::vector<double>>> curves;
    std::size_t max_tasks = 1;
    for (const auto& r : records) {
      const auto it = r.matrices.find(mode);
      if (it == r.matrices.end()) continue;
      auto& curve = curves[r.name];
      const auto& m = it->second;
      if (curve.size() < m.rows_written()) curve.resize(m.rows_written());
      for (std::size_t i = 1; i <= m.rows_written(); ++i) {
        const auto& row = m.row(i);
        double sum = 0.0;
        for (double v : row) sum += v;
        curve[i - 1].push_back(sum / static_cast<double>(row.size()));
      }
      max_tasks = std::max(max_tasks, m.rows_written());
    }
    const double W = 560, H = 360, L = 60, R = 160, Tm = 30, B = 50;
    const double pw = W - L - R, ph = H - Tm - B;
    auto x_of = [&](std::size_t i) {
      return max_tasks == 1 ? L + pw / 2 : L + pw * static_cast<double>(i - 1) / static_cast<double>(max_tasks - 1);
    };
    auto y_of = [&](double acc) { return Tm + ph * (1.0 - acc / 100.0); };
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << L << "\" y=\"18\">Mean accuracy on seen tasks (" << to_string(mode) << ")</text>\n";
    for (int tick = 0; tick <= 100; tick += 20) {
      const double y = y_of(tick);
      svg << "<line x1=\"" << L << "\" y1=\"" << y << "\" x2=\"" << L + pw << "\" y2=\"" << y
          << "\" stroke=\"#ddd\"/>\n";
      svg << "<text x=\"" << L - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << tick << "</text>\n";
    }
    for (std::size_t i = 1; i <= max_tasks; ++i) {
      svg << "<text x=\"" << x_of(i) << "\" y=\"" << Tm + ph + 18 << "\" text-anchor=\"middle\">" << i
          << "</text>\n";
    }
    svg << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">task</text>\n";
    svg << "<rect x=\"" << L << "\" y=\"" << Tm << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    std::size_t k = 0;
    for (const auto& [name, curve] : curves) {
      const char* color = kColors[k % std::size(kColors)];
      std::ostringstream pts;
      for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].empty()) continue;
        const double y = y_of(summarize(curve[i]).mean);
        pts << x_of(i + 1) << ',' << y << ' ';
        svg << "<circle cx=\"" << x_of(i + 1) << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str()
          << "\"/>\n";
      const double ly = Tm + 14 + 18 * static_cast<double>(k);
      svg << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 32 << "\" y2=\""
          << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      svg << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly << "\">" << name << "</text>\n";
      ++k;
    }
    svg << "</svg>\n";
    const auto path = out_dir / ("accuracy_" + to_string(mode) + ".svg");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << svg.str();
    written.push_back(path);
  }
  return written;
}

}  // namespace hcl
