#pragma once

#include <string>
#include <vector>

namespace groundkit::plots {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Standalone SVG documents; fixed-precision coordinates so output is reproducible.
std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label);

// Vertical bars in [0, 1] with the value printed above each bar.
std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title, const std::string& y_label);

}  // namespace groundkit::plots
