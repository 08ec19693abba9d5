#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "markpoint/types.hpp"

namespace markpoint {

struct LoadResult {
  ReplicatedSample sample;
  std::vector<std::string> replicate_ids;  // first-appearance order
  std::vector<std::string> warnings;
};

// Reads `replicate,time,mark` rows. Without an explicit window the window is
// inferred from the time extremes and a warning is added.
LoadResult load_dataset(const std::filesystem::path& path,
                        std::optional<Window> window = std::nullopt);
LoadResult read_dataset(std::istream& in, std::optional<Window> window = std::nullopt);

struct ValidationReport {
  std::size_t n = 0;
  std::size_t total_events = 0;
  std::vector<std::size_t> counts;
  std::size_t min_events = 0;
  std::size_t max_events = 0;
  std::size_t fewer_than_two = 0;
  std::size_t duplicate_times = 0;
  bool no_events = false;
  std::vector<std::string> warnings;
};

ValidationReport validate_dataset(const ReplicatedSample& sample);

// Writers use %.17g so that a reload gives back the same doubles.
void write_dataset(const std::filesystem::path& path, const ReplicatedSample& sample,
                   const std::vector<std::string>& ids = {});
void write_dataset(std::ostream& out, const ReplicatedSample& sample,
                   const std::vector<std::string>& ids = {});
void write_curve(const std::filesystem::path& path, std::span<const double> s,
                 std::span<const double> values);
// Long format, s varies slowest. values(a, b) is at s = rows[a], t = cols[b].
void write_surface(const std::filesystem::path& path, std::span<const double> rows,
                   std::span<const double> cols, const std::vector<double>& row_major_values);
void write_text(const std::filesystem::path& path, const std::string& text);

struct CurveTable {
  std::vector<double> s;
  std::vector<double> value;
};
struct SurfaceTable {
  std::vector<double> s, t, value;
};
CurveTable read_curve(const std::filesystem::path& path);
SurfaceTable read_surface(const std::filesystem::path& path);

std::string format_double(double x);

}  // namespace markpoint
