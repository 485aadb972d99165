#include "vid2act/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= window) sum -= v[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

void require_columns(const CsvTable& t, const std::vector<std::string>& names, const std::filesystem::path& p) {
  std::string missing;
  for (const auto& n : names) {
    if (t.column(n) < 0) missing += (missing.empty() ? "" : ", ") + n;
  }
  if (!missing.empty()) throw ValidationError(p.string() + " lacks required column(s): " + missing);
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::values(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw ValidationError("CSV has no column " + name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(c)]);
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ValidationError(path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) throw ValidationError(path.string() + ": ragged row '" + line + "'");
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      row.push_back(end != c.c_str() && *end == '\0' ? v : std::numeric_limits<double>::quiet_NaN());
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw ValidationError(path.string() + " has a header but no rows");
  return t;
}

PlotKind parse_plot_kind(const std::string& s) {
  if (s == "returns") return PlotKind::Returns;
  if (s == "weights") return PlotKind::Weights;
  if (s == "losses") return PlotKind::Losses;
  throw ConfigError("unknown plot kind '" + s + "' (expected returns, weights or losses)");
}

void write_svg_chart(const std::filesystem::path& out, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
  if (series.empty()) throw ValidationError("nothing to plot");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double b = s.band.empty() ? 0.0 : s.band[i];
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - b);
      y1 = std::max(y1, s.y[i] + b);
    }
  }
  if (!std::isfinite(x0) || !std::isfinite(y0)) throw ValidationError("no finite points to plot");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double W = 720, H = 440, L = 80, R = 170, T = 40, B = 60;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  f << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    f << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << std::setprecision(4) << xv << "</text>\n";
    f << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << std::setprecision(4) << yv << "</text>\n";
    f << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv) << "\" stroke=\"#ddd\"/>\n";
  }
  f << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  f << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kColors[k % (sizeof(kColors) / sizeof(kColors[0]))];
    if (!s.band.empty()) {
      f << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) f << px(s.x[i]) << ',' << py(s.y[i] + s.band[i]) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) f << px(s.x[i]) << ',' << py(s.y[i] - s.band[i]) << ' ';
      f << "\"/>\n";
    }
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) f << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    f << "\"/>\n";
    const double ly = T + 16 + 18 * static_cast<double>(k);
    f << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw IoError("cannot write " + out.string());
}

std::vector<Series> plot_series(const std::vector<std::filesystem::path>& csvs, PlotKind kind) {
  if (csvs.empty()) throw ConfigError("plot: at least one CSV is required");
  std::vector<CsvTable> tables;
  for (const auto& p : csvs) tables.push_back(read_csv(p));
  std::vector<Series> out;
  switch (kind) {
    case PlotKind::Returns: {
      for (std::size_t i = 0; i < tables.size(); ++i) require_columns(tables[i], {"step", "return"}, csvs[i]);
      std::size_t n = tables[0].rows.size();
      for (const auto& t : tables) n = std::min(n, t.rows.size());
      Series s;
      s.label = tables.size() > 1 ? "mean of " + std::to_string(tables.size()) + " runs" : "return";
      const auto steps = tables[0].values("step");
      for (std::size_t r = 0; r < n; ++r) {
        double mean = 0.0, sq = 0.0;
        for (const auto& t : tables) mean += t.rows[r][static_cast<std::size_t>(t.column("return"))];
        mean /= static_cast<double>(tables.size());
        for (const auto& t : tables) {
          const double d = t.rows[r][static_cast<std::size_t>(t.column("return"))] - mean;
          sq += d * d;
        }
        s.x.push_back(steps[r]);
        s.y.push_back(mean);
        if (tables.size() > 1) s.band.push_back(std::sqrt(sq / static_cast<double>(tables.size())));
      }
      out.push_back(std::move(s));
      break;
    }
    case PlotKind::Weights: {
      if (tables.size() != 1) throw ConfigError("plot weights: exactly one weights.csv");
      const CsvTable& t = tables[0];
      require_columns(t, {"step", "w_1"}, csvs[0]);
      const auto steps = t.values("step");
      const std::size_t window = std::max<std::size_t>(1, t.rows.size() / 100);
      for (int k = 1; t.column("w_" + std::to_string(k)) >= 0; ++k) {
        out.push_back({"w_" + std::to_string(k), steps, moving_average(t.values("w_" + std::to_string(k)), window), {}});
      }
      break;
    }
    case PlotKind::Losses: {
      if (tables.size() != 1) throw ConfigError("plot losses: exactly one CSV");
      const CsvTable& t = tables[0];
      std::vector<std::string> cols;
      if (t.column("L_total") >= 0) {
        cols = {"L_image", "L_reward", "L_kl", "L_distill", "L_total"};
      } else {
        cols = {"image", "reward", "kl", "distill", "total"};
      }
      require_columns(t, cols, csvs[0]);
      require_columns(t, {"step"}, csvs[0]);
      const auto steps = t.values("step");
      const std::size_t window = std::max<std::size_t>(1, t.rows.size() / 100);
      for (const auto& c : cols) out.push_back({c, steps, moving_average(t.values(c), window), {}});
      break;
    }
  }
  return out;
}

std::filesystem::path plot_metrics(const std::vector<std::filesystem::path>& csvs, PlotKind kind,
                                   const std::filesystem::path& out) {
  const auto series = plot_series(csvs, kind);
  const char* title = kind == PlotKind::Returns ? "Episode return" : kind == PlotKind::Weights ? "Domain weights" : "Losses";
  const char* y = kind == PlotKind::Returns ? "return" : kind == PlotKind::Weights ? "weight" : "loss";
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_svg_chart(out, title, "update", y, series);
  return out;
}

}  // namespace vid2act
