#pragma once

#include <string>
#include <vector>

#include "nuta/nuta_module.hpp"

namespace nuta {

// Projection-map visualisation. For one batch entry, each head is written as
//  - <prefix>_head<h>.txt : a comment line with extents and the min/max used
//    for normalisation, then target_steps rows of source_steps values with
//    shortest-round-trip formatting (the grid re-parses exactly);
//  - <prefix>_head<h>.pgm : binary PGM, width = source steps, height = target
//    steps, monotone grayscale. byte = round(255 * (v - min) / (max - min));
//    a constant map (min == max) renders flat mid-gray (128).
struct HeatmapExport {
  std::vector<std::string> text_paths;
  std::vector<std::string> image_paths;
  double min_value = 0.0;  // global over the exported entry, also in each txt
  double max_value = 0.0;
};

HeatmapExport export_heatmap(const ProjectionMap& m, int64_t batch_index,
                             const std::string& prefix);

// Re-reads a heatmap text grid (values only; the comment line is skipped).
std::vector<std::vector<double>> read_heatmap_text(const std::string& path);

}  // namespace nuta
