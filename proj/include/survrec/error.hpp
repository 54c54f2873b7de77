#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace survrec {

enum class ErrorKind {
  Schema,
  Parse,
  EmptyCohort,
  NoInformativeFeatures,
  Calibration,
  Shape,
  EmptyRegion,
  Parameter,
  NumericInput,
  NonConvergence,
  Conditioning,
  Training,
  UndefinedMetric,
  Size,
  DegenerateStratification,
  Io,
  Pipeline,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI,
// the pipeline's per-model isolation) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string column, const std::string& detail)
      : Error(ErrorKind::Parse, "row " + std::to_string(row) + ", column \"" + column +
                                    "\": " + detail),
        row_(row),
        column_(std::move(column)) {}
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> last_iterate)
      : Error(ErrorKind::NonConvergence, what), last_iterate_(std::move(last_iterate)) {}
  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  std::vector<double> last_iterate_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::vector<double> trace)
      : Error(ErrorKind::Training, what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::EmptyCohort: return "empty-cohort";
    case ErrorKind::NoInformativeFeatures: return "no-informative-features";
    case ErrorKind::Calibration: return "calibration";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::EmptyRegion: return "empty-region";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::NumericInput: return "numeric-input";
    case ErrorKind::NonConvergence: return "nonconvergence";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::Training: return "training";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Size: return "size";
    case ErrorKind::DegenerateStratification: return "degenerate-stratification";
    case ErrorKind::Io: return "io";
    case ErrorKind::Pipeline: return "pipeline";
  }
  return "unknown";
}

}  // namespace survrec
