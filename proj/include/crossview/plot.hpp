#pragma once

#include <string>
#include <vector>

namespace crossview {

// One chart series: several metrics CSVs (seeds) sharing a label. The mean
// line is drawn over a min-max band across the CSVs.
struct PlotSeries {
  std::string label;
  std::vector<std::string> csv_paths;
};

// Emits an SVG of reward versus environment steps from stage metrics CSVs.
void plot_reward_curves(const std::vector<PlotSeries>& series, const std::string& out_path);

}  // namespace crossview
