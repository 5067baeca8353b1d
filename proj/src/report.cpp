#include "bsb/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace bsb {
namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_up(v, decimals));
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream s(line);
  std::string f;
  while (std::getline(s, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("results csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The nudge absorbs binary representation error so that e.g. 72.005
  // (stored as 72.00499999...) still rounds up.
  return std::floor(value * scale + 0.5 + 1e-7) / scale;
}

std::vector<MiAggregate> aggregate_mi_by_variant(std::span<const ResultRow> rows) {
  std::vector<std::string> order;
  std::map<std::pair<std::string, bool>, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.dataset) == order.end()) order.push_back(r.dataset);
    auto& [sum, n] = acc[{r.dataset, r.bayesian}];
    sum += r.mi_accuracy;
    ++n;
  }
  std::vector<MiAggregate> out;
  for (const auto& d : order) {
    for (bool b : {true, false}) {
      if (auto it = acc.find({d, b}); it != acc.end())
        out.push_back({d, b, it->second.first / it->second.second});
    }
  }
  return out;
}

std::vector<AdvAggregate> aggregate_adv_by_dataset(std::span<const ResultRow> rows) {
  std::vector<AdvAggregate> out;
  std::vector<int> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const AdvAggregate& a) { return a.dataset == r.dataset; });
    if (it == out.end()) {
      out.push_back({r.dataset, 0.0, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    it->mean_hsj += r.hsj_efficacy;
    it->mean_boundary += r.boundary_efficacy;
    ++counts[static_cast<std::size_t>(it - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mean_hsj /= counts[i];
    out[i].mean_boundary /= counts[i];
  }
  return out;
}

std::string format_results_csv(std::vector<ResultRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.dataset, a.model, a.bayesian) < std::tie(b.dataset, b.model, b.bayesian);
  });
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.dataset + ',' + r.model + ',' + (r.bayesian ? "true" : "false") + ',' +
           fixed(r.test_accuracy, 2) + ',' + fixed(r.hsj_efficacy, 2) + ',' +
           fixed(r.boundary_efficacy, 2) + ',' + fixed(r.mi_accuracy, 2) + ',' +
           fixed(r.mi_auc, 4) + ',' + fixed(r.queries_mean_hsj, 2) + ',' +
           fixed(r.queries_mean_boundary, 2) + '\n';
  }
  return out;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::stringstream s(text);
  std::string line;
  if (!std::getline(s, line) || line != kResultsHeader)
    throw FormatError("results csv: missing or unexpected header");
  std::vector<ResultRow> rows;
  std::size_t n = 1;
  while (std::getline(s, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 10)
      throw FormatError("results csv line " + std::to_string(n) + ": expected 10 fields");
    if (f[2] != "true" && f[2] != "false")
      throw FormatError("results csv line " + std::to_string(n) + ": bad bayesian flag");
    rows.push_back({f[0], f[1], f[2] == "true", parse_number(f[3], n), parse_number(f[4], n),
                    parse_number(f[5], n), parse_number(f[6], n), parse_number(f[7], n),
                    parse_number(f[8], n), parse_number(f[9], n)});
  }
  return rows;
}

void emit_csv(std::span<const ResultRow> rows, const std::filesystem::path& path) {
  write_text(path, format_results_csv({rows.begin(), rows.end()}));
}

std::vector<ResultRow> load_results_csv(const std::filesystem::path& path) {
  return parse_results_csv(read_text(path));
}

std::string render_roc_svg(std::span<const NamedRoc> curves, const std::string& title) {
  for (const auto& c : curves) c.roc.validate();

  constexpr double kSize = 400, kLeft = 60, kTop = 40;
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  auto px = [&](double fpr) { return kLeft + fpr * kSize; };
  auto py = [&](double tpr) { return kTop + (1.0 - tpr) * kSize; };
  auto polyline = [&](const std::vector<std::pair<double, double>>& pts, const std::string& style) {
    std::ostringstream s;
    s.precision(6);
    s << "<polyline fill=\"none\" " << style << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      s << (i ? " " : "") << px(pts[i].first) << ',' << py(pts[i].second);
    s << "\"/>\n";
    return s.str();
  };

  const double height = kTop + kSize + 60 + 18.0 * static_cast<double>(curves.size());
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kSize + 40
      << "\" height=\"" << height << "\">\n";
  if (!title.empty())
    svg << "<text x=\"" << kLeft << "\" y=\"24\" font-size=\"14\">" << xml_escape(title)
        << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kSize << "\" height=\""
      << kSize << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    svg << "<text x=\"" << px(v) - 8 << "\" y=\"" << kTop + kSize + 16
        << "\" font-size=\"10\">" << v << "</text>\n";
    svg << "<text x=\"" << kLeft - 30 << "\" y=\"" << py(v) + 4 << "\" font-size=\"10\">" << v
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + kSize / 2 - 12 << "\" y=\"" << kTop + kSize + 34
      << "\" font-size=\"12\">FPR</text>\n";
  svg << "<text x=\"14\" y=\"" << kTop + kSize / 2 << "\" font-size=\"12\">TPR</text>\n";
  svg << polyline({{0.0, 0.0}, {1.0, 1.0}},
                  "class=\"chance\" stroke=\"gray\" stroke-dasharray=\"4,4\"");

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const std::string colour = kColours[i % std::size(kColours)];
    svg << polyline(curves[i].roc.points, "class=\"roc\" stroke=\"" + colour + "\" stroke-width=\"2\"");
    const double ly = kTop + kSize + 52 + 18.0 * static_cast<double>(i);
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + 20
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kLeft + 26 << "\" y=\"" << ly << "\" font-size=\"12\">"
        << xml_escape(curves[i].name) << " (AUC " << fixed(curves[i].roc.auc, 4)
        << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_roc_svg(std::span<const NamedRoc> curves, const std::filesystem::path& path,
                  const std::string& title) {
  write_text(path, render_roc_svg(curves, title));
}

RocCurve load_roc_csv(const std::filesystem::path& path) {
  std::stringstream s(read_text(path));
  std::string line;
  if (!std::getline(s, line) || line != "fpr,tpr")
    throw FormatError(path.string() + ": missing fpr,tpr header");
  RocCurve roc;
  std::size_t n = 1;
  while (std::getline(s, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 2) throw FormatError(path.string() + ": expected two columns");
    roc.points.emplace_back(parse_number(f[0], n), parse_number(f[1], n));
  }
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto [f0, t0] = roc.points[i - 1];
    const auto [f1, t1] = roc.points[i];
    roc.auc += (f1 - f0) * (t0 + t1) / 2.0;
  }
  roc.validate();
  return roc;
}

}  // namespace bsb
