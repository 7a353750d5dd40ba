#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gibbs_lens {

enum class FigureKind { kCurves, kHistogramOverlay };

struct FigureOptions {
  std::string title;
  /// Histogram panel of a probe report to overlay: "input", "f1" or "f2".
  std::string panel = "f1";
};

/// A named polyline.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

/// Error-rate curves from metrics CSVs (either `epoch,train_loss,...` or the experiment
/// schema with arch/seed columns). One test-error and one dashed train-error polyline per
/// (arch, seed) series; each polyline has one point per data row of that series.
std::vector<Series> read_curve_series(const std::filesystem::path& csv_path);

/// Standalone SVG line chart. Throws std::invalid_argument when every series is empty.
std::string curves_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label);

struct OverlayHistogram {
  std::string label;
  std::vector<double> mass;  // per interior bin
};

/// Histogram bars (as densities) over a Gaussian reference density curve.
std::string overlay_svg(const std::vector<double>& edges, const std::vector<OverlayHistogram>& histograms,
                        double reference_mean, double reference_variance, const std::string& title);

/// Reads the data files, renders, and writes `out`. Curves take CSV paths; overlays take
/// probe-report JSON paths (one histogram per file, from options.panel).
void render_figure(FigureKind kind, std::span<const std::filesystem::path> data, const std::filesystem::path& out,
                   const FigureOptions& options = {});

}  // namespace gibbs_lens
