#pragma once

#include <string>
#include <vector>

#include "adfseg/image.hpp"

namespace adfseg {

/// Line chart of one or more equal-meaning series (x = index). Writes an RGB
/// PNG with axes, ticks, and a legend rendered in a built-in 5x7 font.
void plot_lines(const std::string& path, const std::vector<std::vector<double>>& series,
                const std::vector<std::string>& labels, const std::string& title);

/// Labeled vertical bars in [0, 1] (metric summaries).
void plot_bars(const std::string& path, const std::vector<double>& values,
               const std::vector<std::string>& labels, const std::string& title);

}  // namespace adfseg
