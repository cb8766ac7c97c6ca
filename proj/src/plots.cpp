#include "groundkit/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace groundkit::plots {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 64, kRight = 20, kTop = 40, kBottom = 56;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

void frame(std::ostringstream& os, const std::string& title, const std::string& x_label, const std::string& y_label) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
    os << "<text x=\"" << num(kWidth / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << num(kHeight / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << num(kHeight / 2) << ")\">" << escape(y_label) << "</text>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
       << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"black\"/>\n";
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("series x/y lengths differ");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    y0 = std::min(y0, 0.0);
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return kHeight - kBottom - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream os;
    frame(os, title, x_label, y_label);
    for (int t = 0; t <= 4; ++t) {
        const double yv = y0 + (y1 - y0) * t / 4.0, xv = x0 + (x1 - x0) * t / 4.0;
        os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
           << "</text>\n";
        os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kHeight - kBottom + 16) << "\" text-anchor=\"middle\">"
           << tick(xv) << "</text>\n";
    }
    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kColors[k % std::size(kColors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
        bool first = true;
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            os << (first ? "" : " ") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
            first = false;
        }
        os << "\"/>\n";
        os << "<text x=\"" << num(kWidth - kRight - 4) << "\" y=\"" << num(kTop + 14 + 16 * k)
           << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title, const std::string& y_label) {
    if (labels.size() != values.size()) throw std::invalid_argument("label/value counts differ");
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::ostringstream os;
    frame(os, title, "", y_label);
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(kHeight - kBottom - v * ph + 4)
           << "\" text-anchor=\"end\">" << tick(v) << "</text>\n";
    }
    const double slot = labels.empty() ? pw : pw / static_cast<double>(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        const double v = std::clamp(values[i], 0.0, 1.0);
        const double x = kLeft + slot * i + slot * 0.15, w = slot * 0.7, h = v * ph;
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom - h) << "\" width=\"" << num(w)
           << "\" height=\"" << num(h) << "\" fill=\"" << kColors[i % std::size(kColors)] << "\"/>\n";
        os << "<text x=\"" << num(x + w / 2) << "\" y=\"" << num(kHeight - kBottom - h - 4)
           << "\" text-anchor=\"middle\">" << tick(values[i]) << "</text>\n";
        os << "<text x=\"" << num(x + w / 2) << "\" y=\"" << num(kHeight - kBottom + 16)
           << "\" text-anchor=\"middle\">" << escape(labels[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace groundkit::plots
