#pragma once

// Post-hoc summaries of metrics CSVs: mean/std per cell and one SVG line plot
// per metric. Reads only the CSVs, so it cannot change any number.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "irvs/harness.hpp"

namespace irvs {

struct MetricsRecord {
  std::string algorithm, eta_inv, D, epsilon, delta, seed, metric_name;
  double value = 0.0;
};

inline std::vector<MetricsRecord> read_metrics_csv(std::istream& is, const std::string& source = "metrics") {
  static const std::vector<std::string> needed = detail::split(kMetricsHeader, ',');
  std::string line;
  if (!std::getline(is, line)) return {};
  auto header = detail::split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& n : needed) {
    if (!col.count(n)) throw FormatError(source + ": missing column '" + n + "'");
  }
  std::vector<MetricsRecord> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != header.size()) {
      throw FormatError(source + " line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    MetricsRecord r{f[col["algorithm"]], f[col["eta_inv"]], f[col["D"]],           f[col["epsilon"]],
                    f[col["delta"]],     f[col["seed"]],    f[col["metric_name"]], 0.0};
    const auto& v = f[col["metric_value"]];
    if (v == "nan") {
      r.value = std::numeric_limits<double>::quiet_NaN();
    } else {
      try {
        r.value = detail::parse_double("metric_value", v);
      } catch (const ArgumentError& e) {
        throw FormatError(source + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_metrics_csv(in, path);
}

struct SummaryCell {
  std::string algorithm, eta_inv, D, epsilon, delta, metric_name;
  int n = 0;       // finite values
  int errors = 0;  // nan values (failed cells)
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample std, 0 for one seed

  std::string key() const { return algorithm + "," + eta_inv + "," + D + "," + epsilon + "," + delta; }
};

// Cells keep first-appearance order.
inline std::vector<SummaryCell> summarize(const std::vector<MetricsRecord>& rows) {
  std::vector<SummaryCell> cells;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    if (r.metric_name == "error") continue;
    const std::string k = r.algorithm + "," + r.eta_inv + "," + r.D + "," + r.epsilon + "," + r.delta + "," + r.metric_name;
    auto [it, fresh] = index.emplace(k, cells.size());
    if (fresh) {
      cells.push_back({r.algorithm, r.eta_inv, r.D, r.epsilon, r.delta, r.metric_name});
      values.emplace_back();
    }
    if (std::isnan(r.value)) ++cells[it->second].errors;
    else values[it->second].push_back(r.value);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& v = values[i];
    auto& c = cells[i];
    c.n = static_cast<int>(v.size());
    if (v.empty()) continue;
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    c.mean = m;
    c.std = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  }
  return cells;
}

inline std::string fixed(double x, int digits = 4) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << x;
  return os.str();
}

inline void write_summary_table(std::ostream& os, const std::vector<SummaryCell>& cells) {
  const std::vector<std::string> head{"algorithm", "eta_inv", "D", "epsilon", "delta", "metric", "n", "mean", "std"};
  std::vector<std::vector<std::string>> body;
  for (const auto& c : cells) {
    std::string eta = c.eta_inv;
    if (c.algorithm == "irvs" && eta == "1") eta += " *";
    body.push_back({c.algorithm, eta, c.D, c.epsilon, c.delta, c.metric_name, std::to_string(c.n),
                    fixed(c.mean), fixed(c.std)});
  }
  std::vector<std::size_t> w(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) w[i] = head[i].size();
  for (const auto& r : body)
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      os << r[i] << (i + 1 < r.size() ? std::string(w[i] - r[i].size() + 2, ' ') : "\n");
    }
  };
  emit(head);
  for (const auto& r : body) emit(r);
  os << cells.size() << " rows; values are mean and sample std across seeds\n";
  os << "* eta_inv = 1 is the recommended default\n";
}

// The x axis of a plot: the first of eta_inv, D, epsilon, delta that takes
// more than one value, else eta_inv.
inline std::string plot_axis(const std::vector<SummaryCell>& cells) {
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& c : cells) {
    seen["eta_inv"].insert(c.eta_inv);
    seen["D"].insert(c.D);
    seen["epsilon"].insert(c.epsilon);
    seen["delta"].insert(c.delta);
  }
  for (const char* a : {"eta_inv", "D", "epsilon", "delta"})
    if (seen[a].size() > 1) return a;
  return "eta_inv";
}

inline const std::string& axis_value(const SummaryCell& c, const std::string& axis) {
  if (axis == "D") return c.D;
  if (axis == "epsilon") return c.epsilon;
  if (axis == "delta") return c.delta;
  return c.eta_inv;
}

// Line per algorithm (plus any non-axis column that varies), band of +-std.
inline void write_svg_plot(std::ostream& os, const std::vector<SummaryCell>& cells, const std::string& metric) {
  std::vector<SummaryCell> mine;
  for (const auto& c : cells)
    if (c.metric_name == metric) mine.push_back(c);
  const std::string axis = plot_axis(mine);

  // x positions: numeric when every value parses, else ordinal.
  std::vector<std::string> xs;
  for (const auto& c : mine)
    if (std::find(xs.begin(), xs.end(), axis_value(c, axis)) == xs.end()) xs.push_back(axis_value(c, axis));
  bool numeric = true;
  std::map<std::string, double> xpos;
  for (const auto& x : xs) {
    try {
      xpos[x] = detail::parse_double(axis, x);
    } catch (const std::exception&) {
      numeric = false;
    }
  }
  if (!numeric) {
    for (std::size_t i = 0; i < xs.size(); ++i) xpos[xs[i]] = static_cast<double>(i);
  }
  const bool log_x = numeric && axis == "delta" && std::all_of(xs.begin(), xs.end(), [&](const std::string& x) {
                       return xpos[x] > 0.0;
                     });
  auto xv = [&](const std::string& x) { return log_x ? std::log10(xpos[x]) : xpos[x]; };

  std::map<std::string, std::set<std::string>> other;
  for (const auto& c : mine)
    for (const char* a : {"eta_inv", "D", "epsilon", "delta"})
      if (a != axis) other[a].insert(axis_value(c, a));
  auto series_name = [&](const SummaryCell& c) {
    std::string s = c.algorithm;
    for (const char* a : {"eta_inv", "D", "epsilon", "delta"})
      if (a != axis && other[a].size() > 1) s += " " + std::string(a) + "=" + axis_value(c, a);
    return s;
  };
  std::vector<std::string> names;
  std::map<std::string, std::vector<const SummaryCell*>> series;
  for (const auto& c : mine) {
    if (c.n == 0) continue;
    auto n = series_name(c);
    if (!series.count(n)) names.push_back(n);
    series[n].push_back(&c);
  }
  for (auto& [n, pts] : series) {
    std::stable_sort(pts.begin(), pts.end(), [&](const SummaryCell* a, const SummaryCell* b) {
      return xv(axis_value(*a, axis)) < xv(axis_value(*b, axis));
    });
  }

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& [n, pts] : series) {
    for (const auto* p : pts) {
      const double x = xv(axis_value(*p, axis));
      const double lo = p->mean - p->std, hi = p->mean + p->std;
      if (first) {
        x0 = x1 = x;
        y0 = lo;
        y1 = hi;
        first = false;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, lo);
      y1 = std::max(y1, hi);
    }
  }
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << metric << " vs " << axis
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fixed(y, 3) << "</text>\n";
  }
  for (const auto& x : xs) {
    os << "<text x=\"" << px(xv(x)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << axis
     << (log_x ? " (log scale)" : "") << "</text>\n";
  for (std::size_t s = 0; s < names.size(); ++s) {
    const auto& pts = series[names[s]];
    const char* col = colors[s % 8];
    std::ostringstream band, line;
    for (const auto* p : pts) band << px(xv(axis_value(*p, axis))) << ',' << py(p->mean + p->std) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it)
      band << px(xv(axis_value(**it, axis))) << ',' << py((*it)->mean - (*it)->std) << ' ';
    for (const auto* p : pts) line << px(xv(axis_value(*p, axis))) << ',' << py(p->mean) << ' ';
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    for (const auto* p : pts) {
      os << "<circle cx=\"" << px(xv(axis_value(*p, axis))) << "\" cy=\"" << py(p->mean) << "\" r=\"3\" fill=\"" << col
         << "\"/>\n";
    }
    const double ly = T + 10 + 18 * s;
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << names[s] << "</text>\n";
  }
  os << "</svg>\n";
}

inline std::string safe_filename(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ? c : '_';
  return out.empty() ? "metric" : out;
}

struct ReportFiles {
  fs::path summary;
  std::vector<fs::path> plots;
};

// Reads every CSV, writes summary.txt, summary.csv and one plot per metric.
inline ReportFiles report(const std::vector<std::string>& csv_paths, const fs::path& out_dir) {
  return in_stage("report", [&] {
    std::vector<MetricsRecord> rows;
    for (const auto& p : csv_paths) {
      auto r = read_metrics_csv(p);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    auto cells = summarize(rows);
    fs::create_directories(out_dir);
    ReportFiles files;
    files.summary = out_dir / "summary.txt";
    detail::write_file(files.summary, [&](std::ostream& os) { write_summary_table(os, cells); });
    detail::write_file(out_dir / "summary.csv", [&](std::ostream& os) {
      os << "algorithm,eta_inv,D,epsilon,delta,metric_name,n,errors,mean,std\n";
      for (const auto& c : cells) {
        os << c.key() << ',' << c.metric_name << ',' << c.n << ',' << c.errors << ',' << fmt_num(c.mean) << ','
           << fmt_num(c.std) << '\n';
      }
    });
    std::vector<std::string> metrics;
    for (const auto& c : cells)
      if (std::find(metrics.begin(), metrics.end(), c.metric_name) == metrics.end()) metrics.push_back(c.metric_name);
    for (const auto& m : metrics) {
      auto p = out_dir / (safe_filename(m) + ".svg");
      detail::write_file(p, [&](std::ostream& os) { write_svg_plot(os, cells, m); });
      files.plots.push_back(p);
    }
    return files;
  });
}

}  // namespace irvs
