#pragma once

// Static SVG figures from the training CSV logs: return curves (mean and a
// +/- std band across several runs), per-domain weight trajectories and loss
// curves.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vid2act {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // non-numeric cells read as NaN

  int column(const std::string& name) const;  // -1 when absent
  std::vector<double> values(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

enum class PlotKind { Returns, Weights, Losses };
PlotKind parse_plot_kind(const std::string& s);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band;  // optional half-width of a shaded band around y
};

/// Writes a line chart with one polyline per series.
void write_svg_chart(const std::filesystem::path& out, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series);

/// Series drawn for `kind` from the given CSVs (several only for returns).
std::vector<Series> plot_series(const std::vector<std::filesystem::path>& csvs, PlotKind kind);

std::filesystem::path plot_metrics(const std::vector<std::filesystem::path>& csvs, PlotKind kind,
                                   const std::filesystem::path& out);

}  // namespace vid2act
