#pragma once

#include <string>
#include <vector>

#include "knormlab/metrics.hpp"

namespace knormlab {

// Fixed plot geometry; tests recompute the affine data->pixel mapping from
// these values.
struct PlotGeometry {
  double width = 800, height = 500;
  double left = 60, right = 780, top = 20, bottom = 455;
};

// One test-accuracy-vs-step curve per input CSV, drawn into a fixed
// 800x500 viewBox. Output bytes are deterministic for fixed inputs.
std::string render_plot_svg(const std::vector<std::string>& csv_paths,
                            const std::vector<std::string>& labels = {});

void emit_plots(const std::vector<std::string>& csv_paths,
                const std::string& out_path);

}  // namespace knormlab
