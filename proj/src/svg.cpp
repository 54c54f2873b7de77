#include "survrec/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace survrec::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  std::string s(buf);
  return s == "-0.000" ? "0.000" : s;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

struct Frame {
  Axes axes;
  double px(double x) const {
    const double span = axes.x_max - axes.x_min;
    const double u = span > 0 ? (x - axes.x_min) / span : 0.0;
    return kLeft + std::clamp(u, 0.0, 1.0) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = axes.y_max - axes.y_min;
    const double u = span > 0 ? (y - axes.y_min) / span : 0.0;
    return kHeight - kBottom - std::clamp(u, 0.0, 1.0) * (kHeight - kTop - kBottom);
  }
};

void open(std::ostringstream& out, const Frame& f) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(f.axes.title) << "</text>\n";
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  out << "<path class=\"axis\" d=\"M" << num(x0) << ',' << num(y1) << " L" << num(x0) << ',' << num(y0) << " L"
      << num(x1) << ',' << num(y0) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = f.axes.x_min + (f.axes.x_max - f.axes.x_min) * k / 4.0;
    const double yv = f.axes.y_min + (f.axes.y_max - f.axes.y_min) * k / 4.0;
    out << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\" font-size=\"11\">"
        << num(xv) << "</text>\n";
    out << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
        << num(yv) << "</text>\n";
  }
  out << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 18)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(f.axes.x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
      << num((y0 + y1) / 2) << ")\">" << escape(f.axes.y_label) << "</text>\n";
}

void legend(std::ostringstream& out, std::size_t k, const std::string& name, const char* colour, bool dashed) {
  const double y = kTop + 14.0 + 18.0 * static_cast<double>(k);
  const double x = kWidth - kRight + 12.0;
  out << "<line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 20) << "\" y2=\"" << num(y)
      << "\" stroke=\"" << colour << '"' << (dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
  out << "<text x=\"" << num(x + 26) << "\" y=\"" << num(y + 4) << "\" font-size=\"11\">" << escape(name)
      << "</text>\n";
}

}  // namespace

std::string line_plot(const Axes& axes, const std::vector<Series>& series,
                      const std::vector<std::string>& annotations) {
  Frame f{axes};
  std::ostringstream out;
  open(out, f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    const char* colour = kPalette[s % std::size(kPalette)];
    out << "<path class=\"" << escape(sr.css_class) << "\" d=\"";
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      out << (i ? " L" : "M") << num(f.px(sr.x[i])) << ',' << num(f.py(sr.y[i]));
    }
    out << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.6\""
        << (sr.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    legend(out, s, sr.name, colour, sr.dashed);
  }
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    out << "<text class=\"annotation\" x=\"" << num(kLeft + 10) << "\" y=\"" << num(kTop + 16 + 16.0 * static_cast<double>(a))
        << "\" font-size=\"12\">" << escape(annotations[a]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string km_plot(const StepFunction& low, const StepFunction& high, double p_value, double x_max) {
  Frame f{{"Recurrence-free survival by risk group", "Months", "Survival probability", 0.0, x_max, 0.0, 1.0}};
  std::ostringstream out;
  open(out, f);
  const std::pair<const StepFunction*, const char*> groups[] = {{&low, "Low risk"}, {&high, "High risk"}};
  for (std::size_t g = 0; g < 2; ++g) {
    const StepFunction& s = *groups[g].first;
    const char* colour = kPalette[g];
    double level = s.initial_value();
    out << "<path class=\"step-path\" d=\"M" << num(f.px(0.0)) << ',' << num(f.py(level));
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double t = s.knots()[k];
      if (t > x_max) break;
      out << " L" << num(f.px(t)) << ',' << num(f.py(level));
      level = s.values()[k];
      out << " L" << num(f.px(t)) << ',' << num(f.py(level));
    }
    out << " L" << num(f.px(x_max)) << ',' << num(f.py(level)) << "\" fill=\"none\" stroke=\"" << colour
        << "\" stroke-width=\"1.8\"/>\n";
    legend(out, g, groups[g].second, colour, false);
  }
  char p[64];
  if (p_value < 1e-4) {
    std::snprintf(p, sizeof(p), "log-rank p = %.2e", p_value);
  } else {
    std::snprintf(p, sizeof(p), "log-rank p = %.4f", p_value);
  }
  out << "<text class=\"p-value\" x=\"" << num(kLeft + 10) << "\" y=\"" << num(kHeight - kBottom - 12)
      << "\" font-size=\"12\">" << p << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace survrec::svg
