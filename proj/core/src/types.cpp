#include "markpoint/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace markpoint {

Window::Window(double lo, double hi) : lo_(lo), hi_(hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || !(lo < hi)) {
    throw ValidationError("window requires finite lo < hi");
  }
}

MarkedPattern::MarkedPattern(std::vector<double> times, std::vector<double> marks) {
  if (times.size() != marks.size()) {
    throw ValidationError("pattern has " + std::to_string(times.size()) + " times but " +
                          std::to_string(marks.size()) + " marks");
  }
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  times_.reserve(times.size());
  marks_.reserve(marks.size());
  for (std::size_t k : order) {
    times_.push_back(times[k]);
    marks_.push_back(marks[k]);
  }
}

MarkedPattern MarkedPattern::with_marks(std::vector<double> marks) const {
  if (marks.size() != times_.size()) {
    throw ValidationError("mark count does not match event count");
  }
  MarkedPattern out;
  out.times_ = times_;
  out.marks_ = std::move(marks);
  return out;
}

std::size_t MarkedPattern::duplicate_times() const {
  std::size_t dups = 0;
  for (std::size_t k = 1; k < times_.size(); ++k) {
    if (times_[k] == times_[k - 1]) ++dups;
  }
  return dups;
}

ReplicatedSample::ReplicatedSample(Window window, std::vector<MarkedPattern> patterns)
    : window_(window), patterns_(std::move(patterns)) {
  if (patterns_.empty()) throw ValidationError("no replicates");
  for (std::size_t i = 0; i < patterns_.size(); ++i) {
    const auto& p = patterns_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      double t = p.times()[k];
      if (!window_.contains(t)) {
        throw ValidationError("replicate " + std::to_string(i) + ": time " + std::to_string(t) +
                              " outside window");
      }
      if (!std::isfinite(p.marks()[k])) {
        throw ValidationError("replicate " + std::to_string(i) + ": non-finite mark");
      }
    }
  }
}

std::size_t ReplicatedSample::total_events() const {
  std::size_t total = 0;
  for (const auto& p : patterns_) total += p.size();
  return total;
}

ReplicatedSample ReplicatedSample::subset(std::span<const std::size_t> indices) const {
  std::vector<MarkedPattern> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(patterns_.at(i));
  return ReplicatedSample(window_, std::move(out));
}

ReplicatedSample ReplicatedSample::with_marks(const std::vector<std::vector<double>>& marks) const {
  if (marks.size() != patterns_.size()) throw ValidationError("mark set count mismatch");
  std::vector<MarkedPattern> out;
  out.reserve(patterns_.size());
  for (std::size_t i = 0; i < patterns_.size(); ++i) out.push_back(patterns_[i].with_marks(marks[i]));
  return ReplicatedSample(window_, std::move(out));
}

Grid::Grid(const Window& window, std::vector<double> points)
    : window_(window), points_(std::move(points)) {
  if (points_.empty()) throw ValidationError("grid needs at least one point");
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (!window_.contains(points_[k])) throw ValidationError("grid point outside window");
    if (k > 0 && !(points_[k] > points_[k - 1])) {
      throw ValidationError("grid points must be strictly increasing");
    }
  }
  const std::size_t m = points_.size();
  weights_.assign(m, 0.0);
  weights_.front() += points_.front() - window_.lo();
  weights_.back() += window_.hi() - points_.back();
  for (std::size_t k = 0; k + 1 < m; ++k) {
    double half = 0.5 * (points_[k + 1] - points_[k]);
    weights_[k] += half;
    weights_[k + 1] += half;
  }
}

Grid Grid::uniform(const Window& window, std::size_t m) {
  if (m < 2) throw ValidationError("uniform grid needs at least two points");
  std::vector<double> pts(m);
  const double step = window.length() / static_cast<double>(m - 1);
  for (std::size_t k = 0; k < m; ++k) pts[k] = window.lo() + step * static_cast<double>(k);
  pts.back() = window.hi();
  return Grid(window, std::move(pts));
}

double Grid::interpolate(std::span<const double> values, double t) const {
  if (values.size() != points_.size()) throw ValidationError("interpolation size mismatch");
  if (t <= points_.front()) return values.front();
  if (t >= points_.back()) return values.back();
  auto it = std::upper_bound(points_.begin(), points_.end(), t);
  std::size_t k = static_cast<std::size_t>(it - points_.begin());
  double a = points_[k - 1];
  double b = points_[k];
  double frac = (t - a) / (b - a);
  return values[k - 1] + frac * (values[k] - values[k - 1]);
}

}  // namespace markpoint
