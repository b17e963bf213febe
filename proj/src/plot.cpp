#include "crossview/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "crossview/check.hpp"

namespace crossview {

namespace {

struct Curve {
  std::vector<double> x;  // env steps
  std::vector<double> y;  // reward mean
};

Curve read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("plot: cannot open csv: " + path);
  std::string line;
  if (!std::getline(f, line)) throw io_error("plot: empty csv: " + path);
  Curve c;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    CV_REQUIRE(cells.size() >= 4, "plot: malformed csv row in " + path);
    c.x.push_back(std::stod(cells[1]));
    c.y.push_back(std::stod(cells[3]));
  }
  CV_REQUIRE(!c.x.empty(), "plot: csv has no data rows: " + path);
  for (size_t i = 1; i < c.x.size(); ++i)
    CV_REQUIRE(c.x[i] > c.x[i - 1], "plot: steps not monotonic in " + path);
  return c;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

}  // namespace

void plot_reward_curves(const std::vector<PlotSeries>& series, const std::string& out_path) {
  CV_REQUIRE(!series.empty(), "plot: no series given");

  struct Band {
    std::string label;
    std::vector<double> x, lo, hi, mean;
  };
  std::vector<Band> bands;
  double min_x = 1e300, max_x = -1e300, min_y = 0, max_y = -1e300;

  for (const auto& s : series) {
    CV_REQUIRE(!s.csv_paths.empty(), "plot: series '" + s.label + "' has no csv files");
    std::vector<Curve> curves;
    size_t n = SIZE_MAX;
    for (const auto& p : s.csv_paths) {
      curves.push_back(read_metrics_csv(p));
      n = std::min(n, curves.back().x.size());
    }
    Band b;
    b.label = s.label;
    for (size_t i = 0; i < n; ++i) {
      double lo = 1e300, hi = -1e300, mean = 0;
      for (const auto& c : curves) {
        lo = std::min(lo, c.y[i]);
        hi = std::max(hi, c.y[i]);
        mean += c.y[i];
      }
      mean /= static_cast<double>(curves.size());
      b.x.push_back(curves[0].x[i]);
      b.lo.push_back(lo);
      b.hi.push_back(hi);
      b.mean.push_back(mean);
      min_x = std::min(min_x, curves[0].x[i]);
      max_x = std::max(max_x, curves[0].x[i]);
      min_y = std::min(min_y, lo);
      max_y = std::max(max_y, hi);
    }
    bands.push_back(std::move(b));
  }
  if (max_y <= min_y) max_y = min_y + 1;
  if (max_x <= min_x) max_x = min_x + 1;

  const double W = 840, H = 520, ml = 70, mr = 160, mt = 30, mb = 55;
  auto px = [&](double x) { return ml + (x - min_x) / (max_x - min_x) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - min_y) / (max_y - min_y) * (H - mt - mb); };

  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw io_error("plot: cannot write " + out_path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
    << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";

  // axes and ticks
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
    << H - mb << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double xv = min_x + (max_x - min_x) * i / 5;
    double yv = min_y + (max_y - min_y) * i / 5;
    f << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 20
      << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    f << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
      << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    f << "<line x1=\"" << px(xv) << "\" y1=\"" << H - mb << "\" x2=\"" << px(xv) << "\" y2=\""
      << H - mb + 5 << "\" stroke=\"black\"/>\n";
  }
  f << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\">environment steps</text>\n";
  f << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (mt + H - mb) / 2
    << ")\">episode reward</text>\n";

  for (size_t s = 0; s < bands.size(); ++s) {
    const Band& b = bands[s];
    const char* color = kPalette[s % 6];
    // seed band
    f << "<polygon fill=\"" << color << "\" opacity=\"0.15\" points=\"";
    for (size_t i = 0; i < b.x.size(); ++i) f << px(b.x[i]) << "," << py(b.hi[i]) << " ";
    for (size_t i = b.x.size(); i-- > 0;) f << px(b.x[i]) << "," << py(b.lo[i]) << " ";
    f << "\"/>\n";
    // mean line
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < b.x.size(); ++i) f << px(b.x[i]) << "," << py(b.mean[i]) << " ";
    f << "\"/>\n";
    // legend
    double ly = mt + 18 * static_cast<double>(s);
    f << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 36
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << W - mr + 42 << "\" y=\"" << ly + 4 << "\">" << b.label
      << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace crossview
