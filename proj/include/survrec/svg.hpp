#pragma once

#include <string>
#include <vector>

#include "survrec/nonparametric.hpp"

namespace survrec::svg {

struct Series {
  std::string name;
  std::string css_class;  // emitted on the <path>
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
};

// Fixed 640x440 canvas, three-decimal coordinates.
std::string line_plot(const Axes& axes, const std::vector<Series>& series,
                      const std::vector<std::string>& annotations = {});

// Two survival curves drawn as right-continuous steps (class "step-path")
// with the log-rank p-value printed in the corner.
std::string km_plot(const StepFunction& low, const StepFunction& high, double p_value, double x_max);

}  // namespace survrec::svg
