#pragma once

// Loss curves as standalone SVG line charts.

#include <cstddef>
#include <string>

#include "svq/metrics.hpp"

namespace svq {

struct PlotOptions {
  std::size_t width = 720;
  std::size_t height = 360;
  std::size_t smoothing = 10;  // trailing moving-average window, 1 = raw
};

// One polyline per metrics column over step, shared linear y axis.
std::string render_metrics_svg(const MetricsLog& log, const std::string& title, const PlotOptions& options = {});

}  // namespace svq
