#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace markpoint {

// Error hierarchy. Everything thrown by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Closed observation interval [lo, hi] shared by all replicates.
class Window {
 public:
  Window(double lo, double hi);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double length() const { return hi_ - lo_; }
  bool contains(double t) const { return t >= lo_ && t <= hi_; }

  friend bool operator==(const Window&, const Window&) = default;

 private:
  double lo_;
  double hi_;
};

// One realization: event times (nondecreasing) with one mark per event.
class MarkedPattern {
 public:
  MarkedPattern() = default;
  // Sorts by time (stable, so tied events keep input order).
  MarkedPattern(std::vector<double> times, std::vector<double> marks);

  std::span<const double> times() const { return times_; }
  std::span<const double> marks() const { return marks_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

  // Same event times with a new set of marks (used by permutation and
  // simulation code; the point pattern is untouched).
  MarkedPattern with_marks(std::vector<double> marks) const;

  // Number of events whose time equals the previous event's time.
  std::size_t duplicate_times() const;

 private:
  std::vector<double> times_;
  std::vector<double> marks_;
};

class ReplicatedSample {
 public:
  ReplicatedSample(Window window, std::vector<MarkedPattern> patterns);

  const Window& window() const { return window_; }
  std::span<const MarkedPattern> patterns() const { return patterns_; }
  const MarkedPattern& operator[](std::size_t i) const { return patterns_[i]; }
  std::size_t size() const { return patterns_.size(); }
  std::size_t total_events() const;

  ReplicatedSample subset(std::span<const std::size_t> indices) const;
  ReplicatedSample with_marks(const std::vector<std::vector<double>>& marks) const;

 private:
  Window window_;
  std::vector<MarkedPattern> patterns_;
};

// Strictly increasing evaluation points with trapezoid quadrature weights.
// Weights are extended to the window ends so that they always integrate the
// constant function to the window length.
class Grid {
 public:
  Grid(const Window& window, std::vector<double> points);
  static Grid uniform(const Window& window, std::size_t m = 101);

  std::span<const double> points() const { return points_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  const Window& window() const { return window_; }

  // Piecewise-linear interpolation of grid values at t (constant outside).
  double interpolate(std::span<const double> values, double t) const;

 private:
  Window window_;
  std::vector<double> points_;
  std::vector<double> weights_;
};

}  // namespace markpoint
