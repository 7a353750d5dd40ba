#include "gibbs_lens/figure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gibbs_lens/text_format.hpp"

namespace gibbs_lens {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 150.0;  // legend column
constexpr double kTop = 36.0;
constexpr double kBottom = 48.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string f2(double v) { return format_fixed(v, 2); }

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n"
     << "<text x=\"" << f2((kWidth - kRight + kLeft) / 2) << "\" y=\"22\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"15\">" << escape(title) << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& fr, const std::string& x_label, const std::string& y_label) {
  const double left = kLeft, right = kWidth - kRight, top = kTop, bottom = kHeight - kBottom;
  os << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(bottom) << "\" x2=\"" << f2(right) << "\" y2=\"" << f2(bottom)
     << "\"/>\n"
     << "<line x1=\"" << f2(left) << "\" y1=\"" << f2(top) << "\" x2=\"" << f2(left) << "\" y2=\"" << f2(bottom)
     << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = fr.x0 + (fr.x1 - fr.x0) * i / 4.0;
    const double yv = fr.y0 + (fr.y1 - fr.y0) * i / 4.0;
    os << "<text x=\"" << f2(fr.px(xv)) << "\" y=\"" << f2(bottom + 16) << "\" text-anchor=\"middle\">"
       << format_fixed(xv, std::abs(fr.x1 - fr.x0) >= 20 ? 0 : 2) << "</text>\n";
    os << "<text x=\"" << f2(left - 6) << "\" y=\"" << f2(fr.py(yv) + 4) << "\" text-anchor=\"end\">"
       << format_fixed(yv, fr.y1 - fr.y0 >= 20 ? 0 : (fr.y1 - fr.y0 >= 0.2 ? 2 : 4)) << "</text>\n";
  }
  os << "<text x=\"" << f2((left + right) / 2) << "\" y=\"" << f2(kHeight - 10) << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << f2((top + bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << f2((top + bottom) / 2) << ")\">" << escape(y_label) << "</text>\n</g>\n";
}

void legend_entry(std::ostringstream& os, std::size_t row, const std::string& color, const std::string& label,
                  bool dashed, bool box) {
  const double x = kWidth - kRight + 12;
  const double y = kTop + 8 + 16.0 * static_cast<double>(row);
  if (box) {
    os << "<rect x=\"" << f2(x) << "\" y=\"" << f2(y - 5) << "\" width=\"18\" height=\"10\" fill=\"" << color
       << "\" fill-opacity=\"0.45\"/>\n";
  } else {
    os << "<line x1=\"" << f2(x) << "\" y1=\"" << f2(y) << "\" x2=\"" << f2(x + 18) << "\" y2=\"" << f2(y)
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"4 3\"" : "")
       << "/>\n";
  }
  os << "<text x=\"" << f2(x + 24) << "\" y=\"" << f2(y + 4) << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << escape(label) << "</text>\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open " + path.string());
  return nlohmann::json::parse(f);
}

}  // namespace

std::vector<Series> read_curve_series(const std::filesystem::path& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw std::invalid_argument("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(f, line) || line.empty()) throw std::invalid_argument(csv_path.string() + ": empty CSV");
  const auto header_cells = split_csv_line(line);
  auto column = [&](const std::string& name) -> int {
    const auto it = std::find(header_cells.begin(), header_cells.end(), name);
    return it == header_cells.end() ? -1 : static_cast<int>(it - header_cells.begin());
  };
  const int c_epoch = column("epoch"), c_train = column("train_err"), c_test = column("test_err");
  const int c_arch = column("arch"), c_seed = column("seed");
  if (c_epoch < 0 || c_train < 0 || c_test < 0) {
    throw std::invalid_argument(csv_path.string() + ": missing epoch/train_err/test_err columns");
  }

  // Series keyed by "arch seed", in first-appearance order.
  std::vector<std::string> keys;
  std::map<std::string, std::pair<Series, Series>> by_key;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header_cells.size()) {
      throw std::invalid_argument(csv_path.string() + ": row " + std::to_string(rows + 1) + " has " +
                                  std::to_string(cells.size()) + " cells");
    }
    std::string key;
    if (c_arch >= 0) key += cells[static_cast<std::size_t>(c_arch)];
    if (c_seed >= 0) key += (key.empty() ? "seed " : " seed ") + cells[static_cast<std::size_t>(c_seed)];
    auto [it, inserted] = by_key.try_emplace(key);
    if (inserted) {
      keys.push_back(key);
      it->second.first.label = key.empty() ? "test error" : key + " test";
      it->second.second.label = key.empty() ? "train error" : key + " train";
      it->second.second.dashed = true;
    }
    const double epoch = std::stod(cells[static_cast<std::size_t>(c_epoch)]);
    it->second.first.x.push_back(epoch);
    it->second.first.y.push_back(std::stod(cells[static_cast<std::size_t>(c_test)]));
    it->second.second.x.push_back(epoch);
    it->second.second.y.push_back(std::stod(cells[static_cast<std::size_t>(c_train)]));
    ++rows;
  }
  if (rows == 0) throw std::invalid_argument(csv_path.string() + ": no data rows");
  std::vector<Series> out;
  for (const auto& k : keys) {
    out.push_back(by_key[k].first);
    out.push_back(by_key[k].second);
  }
  return out;
}

std::string curves_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
  double x0 = INFINITY, x1 = -INFINITY, y1 = 0.0;
  std::size_t points = 0;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("curves_svg: series x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      if (std::isfinite(s.y[i])) y1 = std::max(y1, s.y[i]);
    }
    points += s.x.size();
  }
  if (points == 0) throw std::invalid_argument("curves_svg: empty series");
  if (x1 <= x0) x1 = x0 + 1.0;
  y1 = y1 <= 1.0 ? 1.0 : y1 * 1.05;
  const Frame fr{x0, x1, 0.0, y1};

  std::ostringstream os;
  header(os, title);
  axes(os, fr, x_label, y_label);
  std::size_t row = 0;
  std::size_t color_index = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    // A dashed series shares the colour of the solid series before it.
    if (i > 0 && !s.dashed) ++color_index;
    const std::string color = kPalette[color_index % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
       << (s.dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k) os << ' ';
      os << f2(fr.px(s.x[k])) << ',' << f2(fr.py(std::isfinite(s.y[k]) ? s.y[k] : 0.0));
    }
    os << "\"/>\n";
    if (row < 20) legend_entry(os, row++, color, s.label, s.dashed, false);
  }
  os << "</svg>\n";
  return os.str();
}

std::string overlay_svg(const std::vector<double>& edges, const std::vector<OverlayHistogram>& histograms,
                        double reference_mean, double reference_variance, const std::string& title) {
  if (edges.size() < 3) throw std::invalid_argument("overlay_svg: need at least two bins");
  if (histograms.empty()) throw std::invalid_argument("overlay_svg: empty series");
  const std::size_t bins = edges.size() - 1;
  const auto pdf = [&](double x) {
    return std::exp(-(x - reference_mean) * (x - reference_mean) / (2 * reference_variance)) /
           std::sqrt(2 * std::numbers::pi * reference_variance);
  };
  double ymax = pdf(reference_mean);
  for (const auto& h : histograms) {
    if (h.mass.size() != bins) throw std::invalid_argument("overlay_svg: histogram does not match the bin edges");
    for (std::size_t i = 0; i < bins; ++i) ymax = std::max(ymax, h.mass[i] / (edges[i + 1] - edges[i]));
  }
  const Frame fr{edges.front(), edges.back(), 0.0, ymax * 1.08};

  std::ostringstream os;
  header(os, title);
  axes(os, fr, "value", "density");
  std::size_t row = 0;
  for (std::size_t k = 0; k < histograms.size(); ++k) {
    const std::string color = kPalette[k % std::size(kPalette)];
    os << "<g class=\"histogram\" fill=\"" << color << "\" fill-opacity=\"0.45\">\n";
    for (std::size_t i = 0; i < bins; ++i) {
      const double d = histograms[k].mass[i] / (edges[i + 1] - edges[i]);
      if (d <= 0.0) continue;
      const double x = fr.px(edges[i]);
      const double y = fr.py(d);
      os << "<rect x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" width=\"" << f2(fr.px(edges[i + 1]) - x)
         << "\" height=\"" << f2(fr.py(0.0) - y) << "\"/>\n";
    }
    os << "</g>\n";
    legend_entry(os, row++, color, histograms[k].label, false, true);
  }
  constexpr int kCurvePoints = 241;
  os << "<polyline class=\"reference\" fill=\"none\" stroke=\"#e41a1c\" stroke-width=\"2\" points=\"";
  for (int i = 0; i < kCurvePoints; ++i) {
    const double x = edges.front() + (edges.back() - edges.front()) * i / (kCurvePoints - 1);
    if (i) os << ' ';
    os << f2(fr.px(x)) << ',' << f2(fr.py(pdf(x)));
  }
  os << "\"/>\n";
  legend_entry(os, row, "#e41a1c", "N(" + format_double(reference_mean) + ", " + format_double(reference_variance) + ")",
               false, false);
  os << "</svg>\n";
  return os.str();
}

void render_figure(FigureKind kind, std::span<const std::filesystem::path> data, const std::filesystem::path& out,
                   const FigureOptions& options) {
  if (data.empty()) throw std::invalid_argument("render_figure: no data files");
  std::string svg;
  if (kind == FigureKind::kCurves) {
    std::vector<Series> all;
    for (const auto& p : data) {
      auto s = read_curve_series(p);
      all.insert(all.end(), s.begin(), s.end());
    }
    svg = curves_svg(all, options.title.empty() ? "error rate" : options.title, "epoch", "error rate");
  } else {
    std::vector<double> edges;
    double mean = 0.0, variance = 1024.0;
    std::vector<OverlayHistogram> hists;
    for (const auto& p : data) {
      const auto j = read_json(p);
      if (!j.contains(options.panel)) {
        throw std::invalid_argument(p.string() + ": no \"" + options.panel + "\" histogram");
      }
      auto e = j.at("edges").get<std::vector<double>>();
      if (!edges.empty() && e != edges) throw std::invalid_argument("render_figure: probe reports use different binnings");
      edges = std::move(e);
      mean = j.value("reference_mean", 0.0);
      variance = j.value("reference_variance", 1024.0);
      std::string label = j.value("arch", p.stem().string()) + " " + options.panel;
      hists.push_back({label, j.at(options.panel).at("mass").get<std::vector<double>>()});
    }
    svg = overlay_svg(edges, hists, mean, variance,
                      options.title.empty() ? "histogram of " + options.panel : options.title);
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << svg;
}

}  // namespace gibbs_lens
