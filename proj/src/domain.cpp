#include "invdes/domain.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

namespace invdes {

GeometryBounds GeometryBounds::unit(std::size_t dims) {
  GeometryBounds b;
  b.lower.assign(dims, -1.0);
  b.upper.assign(dims, 1.0);
  return b;
}

void GeometryBounds::validate() const {
  if (lower.size() != upper.size()) {
    throw DimensionError("bounds lower/upper lengths differ: " + std::to_string(lower.size()) +
                         " vs " + std::to_string(upper.size()));
  }
  if (lower.empty()) throw ValidationError("bounds must have at least one dimension");
  for (std::size_t d = 0; d < lower.size(); ++d) {
    if (!(lower[d] < upper[d])) {
      throw ValidationError("bounds: lower[" + std::to_string(d) + "] must be < upper[" +
                            std::to_string(d) + "]");
    }
  }
}

FeasibilityReport validate_geometry(const Geometry& g, const GeometryBounds& b) {
  b.validate();
  if (g.size() != b.size()) {
    throw DimensionError("geometry has " + std::to_string(g.size()) + " values, bounds expect " +
                         std::to_string(b.size()));
  }
  FeasibilityReport report;
  report.dim_in_bounds.resize(g.size());
  report.feasible = true;
  for (std::size_t d = 0; d < g.size(); ++d) {
    bool ok = g.values[d] >= b.lower[d] && g.values[d] <= b.upper[d];
    report.dim_in_bounds[d] = ok;
    report.feasible = report.feasible && ok;
  }
  return report;
}

Geometry normalize_geometry(const Geometry& g, const GeometryBounds& b) {
  auto report = validate_geometry(g, b);
  if (!report.feasible) throw DomainError("cannot normalize an infeasible geometry");
  Geometry out;
  out.values.resize(g.size());
  for (std::size_t d = 0; d < g.size(); ++d) {
    double mid = 0.5 * (b.lower[d] + b.upper[d]);
    double half = 0.5 * (b.upper[d] - b.lower[d]);
    out.values[d] = (g.values[d] - mid) / half;
  }
  return out;
}

Geometry denormalize_geometry(const Geometry& g, const GeometryBounds& b) {
  b.validate();
  if (g.size() != b.size()) {
    throw DimensionError("geometry/bounds dimension mismatch in denormalize");
  }
  Geometry out;
  out.values.resize(g.size());
  for (std::size_t d = 0; d < g.size(); ++d) {
    double mid = 0.5 * (b.lower[d] + b.upper[d]);
    double half = 0.5 * (b.upper[d] - b.lower[d]);
    out.values[d] = g.values[d] * half + mid;
  }
  return out;
}

bool is_validation_index(std::size_t i, std::size_t k) {
  if (k == 0) return false;
  if (k < 11) return i == k - 1;
  return i % 11 == 10;
}

Dataset::Dataset(int input_dim, int output_dim) : input_dim_(input_dim), output_dim_(output_dim) {
  if (input_dim < 1 || output_dim < 1) throw ValidationError("dataset dims must be >= 1");
}

void Dataset::append(DataPair pair) {
  if (input_dim_ == 0) {
    input_dim_ = static_cast<int>(pair.geometry.size());
    output_dim_ = static_cast<int>(pair.spectrum.size());
  }
  if (static_cast<int>(pair.geometry.size()) != input_dim_ ||
      static_cast<int>(pair.spectrum.size()) != output_dim_) {
    throw DimensionError("pair dims (" + std::to_string(pair.geometry.size()) + ", " +
                         std::to_string(pair.spectrum.size()) + ") do not match dataset (" +
                         std::to_string(input_dim_) + ", " + std::to_string(output_dim_) + ")");
  }
  pairs_.push_back(std::move(pair));
}

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> out;
  out.reserve(pairs_.size());
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (!is_validation_index(i, pairs_.size())) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::validation_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (is_validation_index(i, pairs_.size())) out.push_back(i);
  }
  return out;
}

void write_dataset_csv(const std::string& path, const Dataset& data, bool with_header) {
  std::ostringstream out;
  if (with_header) {
    for (int d = 0; d < data.input_dim(); ++d) out << "g" << d << ",";
    for (int j = 0; j < data.output_dim(); ++j) {
      out << "s" << j << (j + 1 < data.output_dim() ? "," : "");
    }
    out << "\n";
  }
  for (const auto& pair : data.pairs()) {
    bool first = true;
    for (double v : pair.geometry.values) {
      if (!first) out << ",";
      out << format_double(v);
      first = false;
    }
    for (double v : pair.spectrum.values) {
      out << "," << format_double(v);
    }
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

// Yields data lines of a dataset CSV, skipping an optional header row.
std::vector<std::string> read_data_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (!lines.empty()) {
    double probe;
    auto first_fields = split_csv_line(lines.front());
    if (first_fields.empty() || !parse_double(first_fields.front(), probe)) {
      lines.erase(lines.begin());  // header row
    }
  }
  return lines;
}

}  // namespace

Dataset read_dataset_csv(const std::string& path, int input_dim, int output_dim) {
  auto lines = read_data_lines(path);
  Dataset data(input_dim, output_dim);
  const std::size_t want = static_cast<std::size_t>(input_dim) + static_cast<std::size_t>(output_dim);
  std::size_t row = 0;
  for (const auto& line : lines) {
    auto fields = split_csv_line(line);
    if (fields.size() != want) {
      throw DimensionError("dataset row " + std::to_string(row) + " has " +
                           std::to_string(fields.size()) + " columns, expected " +
                           std::to_string(want));
    }
    DataPair pair;
    pair.geometry.values.reserve(input_dim);
    pair.spectrum.values.reserve(output_dim);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v;
      if (!parse_double(fields[c], v)) {
        throw LoadError("dataset row " + std::to_string(row) + ", column " + std::to_string(c) +
                        ": not a number: '" + fields[c] + "'");
      }
      if (c < static_cast<std::size_t>(input_dim)) {
        pair.geometry.values.push_back(v);
      } else {
        pair.spectrum.values.push_back(v);
      }
    }
    data.append(std::move(pair));
    ++row;
  }
  return data;
}

std::size_t count_csv_columns(const std::string& path) {
  auto lines = read_data_lines(path);
  if (lines.empty()) return 0;
  return split_csv_line(lines.front()).size();
}

std::size_t count_csv_rows(const std::string& path) { return read_data_lines(path).size(); }

std::vector<double> read_spectrum_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open spectrum file: " + path);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    for (const auto& field : split_csv_line(line)) {
      if (field.empty()) continue;
      double v;
      if (!parse_double(field, v)) {
        throw LoadError("spectrum file " + path + ": not a number: '" + field + "'");
      }
      values.push_back(v);
    }
  }
  return values;
}

}  // namespace invdes
