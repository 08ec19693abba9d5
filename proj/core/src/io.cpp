#include "markpoint/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace markpoint {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r' || s[a] == '\n')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r' || s[b - 1] == '\n')) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

bool parse_real(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec == std::errc::result_out_of_range) {
    // from_chars refuses subnormals; strtod handles them.
    out = std::strtod(text.c_str(), nullptr);
    return true;
  }
  return ec == std::errc() && ptr == last;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void check_written(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::vector<double>> read_numeric_table(const std::filesystem::path& path,
                                                    const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  if (split_csv(line) != header) throw ParseError("unexpected header", line_no);
  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size()) throw ParseError("wrong field count", line_no);
    for (std::size_t k = 0; k < fields.size(); ++k) {
      double v;
      if (!parse_real(fields[k], v)) throw ParseError("bad number '" + fields[k] + "'", line_no);
      cols[k].push_back(v);
    }
  }
  return cols;
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

LoadResult read_dataset(std::istream& in, std::optional<Window> window) {
  std::string line;
  std::size_t line_no = 0;
  // Skip blank lines before the header.
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (line_no == 0 || trim(line).empty()) throw ValidationError("no replicates");
  std::string header = trim(line);
  if (!header.empty() && static_cast<unsigned char>(header[0]) == 0xEF) header = header.substr(3);
  if (split_csv(header) != std::vector<std::string>{"replicate", "time", "mark"}) {
    throw ParseError("expected header 'replicate,time,mark'", line_no);
  }

  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<double>> times;
  std::vector<std::vector<double>> marks;
  std::vector<std::vector<std::size_t>> lines;  // source line of every event

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(fields.size()), line_no);
    if (fields[0].empty()) throw ParseError("empty replicate id", line_no);
    double t;
    double z;
    if (!parse_real(fields[1], t)) throw ParseError("bad time '" + fields[1] + "'", line_no);
    if (!parse_real(fields[2], z)) throw ParseError("bad mark '" + fields[2] + "'", line_no);
    if (!std::isfinite(t)) throw ParseError("non-finite time", line_no);
    if (!std::isfinite(z)) throw ValidationError("line " + std::to_string(line_no) + ": non-finite mark");
    auto [it, inserted] = index.try_emplace(fields[0], ids.size());
    if (inserted) {
      ids.push_back(fields[0]);
      times.emplace_back();
      marks.emplace_back();
      lines.emplace_back();
    }
    times[it->second].push_back(t);
    marks[it->second].push_back(z);
    lines[it->second].push_back(line_no);
  }
  if (ids.empty()) throw ValidationError("no replicates");

  std::vector<std::string> warnings;
  if (!window) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& ts : times)
      for (double t : ts) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    if (!(lo < hi)) throw ValidationError("cannot infer a window from the data; declare one");
    window = Window(lo, hi);
    warnings.push_back("window inferred from data extremes [" + format_double(lo) + ", " +
                       format_double(hi) + "]; edge correction depends on it");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t k = 0; k < times[i].size(); ++k) {
      if (!window->contains(times[i][k])) {
        throw ValidationError("line " + std::to_string(lines[i][k]) + ": time " +
                              format_double(times[i][k]) + " outside window [" +
                              format_double(window->lo()) + ", " + format_double(window->hi()) + "]");
      }
    }
  }
  std::vector<MarkedPattern> patterns;
  patterns.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    patterns.emplace_back(std::move(times[i]), std::move(marks[i]));
  }
  return LoadResult{ReplicatedSample(*window, std::move(patterns)), std::move(ids), std::move(warnings)};
}

LoadResult load_dataset(const std::filesystem::path& path, std::optional<Window> window) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  return read_dataset(in, window);
}

ValidationReport validate_dataset(const ReplicatedSample& sample) {
  ValidationReport r;
  r.n = sample.size();
  r.min_events = std::numeric_limits<std::size_t>::max();
  for (const auto& p : sample.patterns()) {
    r.counts.push_back(p.size());
    r.total_events += p.size();
    r.min_events = std::min(r.min_events, p.size());
    r.max_events = std::max(r.max_events, p.size());
    if (p.size() < 2) ++r.fewer_than_two;
    r.duplicate_times += p.duplicate_times();
  }
  if (r.n == 0) r.min_events = 0;
  r.no_events = r.total_events == 0;
  if (r.no_events) r.warnings.push_back("no events");
  if (r.duplicate_times > 0) {
    r.warnings.push_back(std::to_string(r.duplicate_times) + " duplicate event time(s)");
  }
  if (r.fewer_than_two > 0) {
    r.warnings.push_back(std::to_string(r.fewer_than_two) +
                         " replicate(s) with fewer than 2 events contribute no pairs");
  }
  return r;
}

void write_dataset(std::ostream& out, const ReplicatedSample& sample,
                   const std::vector<std::string>& ids) {
  out << "replicate,time,mark\n";
  for (std::size_t i = 0; i < sample.size(); ++i) {
    std::string id = ids.empty() ? std::to_string(i + 1) : ids.at(i);
    const auto& p = sample[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      out << id << ',' << format_double(p.times()[k]) << ',' << format_double(p.marks()[k]) << '\n';
    }
  }
}

void write_dataset(const std::filesystem::path& path, const ReplicatedSample& sample,
                   const std::vector<std::string>& ids) {
  auto out = open_out(path);
  write_dataset(out, sample, ids);
  check_written(out, path);
}

void write_curve(const std::filesystem::path& path, std::span<const double> s,
                 std::span<const double> values) {
  if (s.size() != values.size()) throw ValidationError("curve size mismatch");
  auto out = open_out(path);
  out << "s,value\n";
  for (std::size_t k = 0; k < s.size(); ++k) {
    out << format_double(s[k]) << ',' << format_double(values[k]) << '\n';
  }
  check_written(out, path);
}

void write_surface(const std::filesystem::path& path, std::span<const double> rows,
                   std::span<const double> cols, const std::vector<double>& values) {
  if (values.size() != rows.size() * cols.size()) throw ValidationError("surface size mismatch");
  auto out = open_out(path);
  out << "s,t,value\n";
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) {
      out << format_double(rows[a]) << ',' << format_double(cols[b]) << ','
          << format_double(values[a * cols.size() + b]) << '\n';
    }
  }
  check_written(out, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  check_written(out, path);
}

CurveTable read_curve(const std::filesystem::path& path) {
  auto cols = read_numeric_table(path, {"s", "value"});
  return CurveTable{std::move(cols[0]), std::move(cols[1])};
}

SurfaceTable read_surface(const std::filesystem::path& path) {
  auto cols = read_numeric_table(path, {"s", "t", "value"});
  return SurfaceTable{std::move(cols[0]), std::move(cols[1]), std::move(cols[2])};
}

}  // namespace markpoint
