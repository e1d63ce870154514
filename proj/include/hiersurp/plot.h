#ifndef HIERSURP_PLOT_H_
#define HIERSURP_PLOT_H_

#include <string>
#include <vector>

namespace hiersurp {

struct PlotPoint {
  std::string series;  // legend entry, one colour per series
  std::string label;   // text next to the marker
  double x = 0.0;
  double x_sd = 0.0;
  double y = 0.0;
  double y_sd = 0.0;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 480;
};

// Standalone SVG scatter chart with standard-deviation whiskers.
std::string scatter_svg(const std::vector<PlotPoint>& points, const PlotSpec& spec);

// Columns: series, label, x, x_sd, y, y_sd.
std::string scatter_csv(const std::vector<PlotPoint>& points);

// Writes <stem>.svg and <stem>.csv.
void write_scatter(const std::string& stem, const std::vector<PlotPoint>& points,
                   const PlotSpec& spec);

}  // namespace hiersurp

#endif  // HIERSURP_PLOT_H_
