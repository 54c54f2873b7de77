#pragma once

#include <functional>
#include <optional>
#include <span>
#include <utility>

#include "survrec/error.hpp"
#include "survrec/nonparametric.hpp"

namespace survrec {

// Unified prediction surface shared by every fitted learner: a scalar risk
// score (higher = earlier event) and, where the learner supports it, a
// subject-specific survival curve.
class RiskModel {
 public:
  virtual ~RiskModel() = default;

  virtual std::size_t n_features() const = 0;
  virtual double risk(std::span<const double> x) const = 0;
  virtual std::optional<StepFunction> survival_curve(std::span<const double>) const {
    return std::nullopt;
  }

  double survival_at(double t, std::span<const double> x) const {
    auto curve = survival_curve(x);
    if (!curve) throw Error(ErrorKind::Parameter, "model does not provide survival curves");
    return (*curve)(t);
  }

 protected:
  void check_dimension(std::span<const double> x) const {
    if (x.size() != n_features()) {
      throw Error(ErrorKind::Shape, "feature vector has " + std::to_string(x.size()) +
                                        " entries, model expects " + std::to_string(n_features()));
    }
  }
};

// Adapts any callable to a RiskModel.
class FunctionModel final : public RiskModel {
 public:
  FunctionModel(std::size_t d, std::function<double(std::span<const double>)> f)
      : d_(d), f_(std::move(f)) {}
  std::size_t n_features() const override { return d_; }
  double risk(std::span<const double> x) const override {
    check_dimension(x);
    return f_(x);
  }

 private:
  std::size_t d_;
  std::function<double(std::span<const double>)> f_;
};

}  // namespace survrec
