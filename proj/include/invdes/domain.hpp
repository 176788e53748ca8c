#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace invdes {

// A candidate metamaterial design: one real value per geometric parameter,
// expressed in normalized (dimensionless) design units.
struct Geometry {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const Geometry&) const = default;
};

// A discretized response curve with one value per frequency-grid point.
// Simulator outputs live in [0, 1]; surrogate predictions are unclamped.
struct Spectrum {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const Spectrum&) const = default;
};

// The feasible box for designs. lower[d] < upper[d] for every dimension.
struct GeometryBounds {
  std::vector<double> lower;
  std::vector<double> upper;

  // The default box: [-1, 1] per dimension.
  static GeometryBounds unit(std::size_t dims);

  std::size_t size() const { return lower.size(); }
  void validate() const;  // throws ValidationError / DimensionError
};

struct FeasibilityReport {
  bool feasible = false;
  std::vector<bool> dim_in_bounds;  // per-dimension flag, bounds inclusive
};

FeasibilityReport validate_geometry(const Geometry& g, const GeometryBounds& b);

// Affine map of the feasible box onto [-1, 1]^D. Throws DomainError when g is
// infeasible. denormalize_geometry is the exact inverse.
Geometry normalize_geometry(const Geometry& g, const GeometryBounds& b);
Geometry denormalize_geometry(const Geometry& g, const GeometryBounds& b);

struct DataPair {
  Geometry geometry;
  Spectrum spectrum;
};

// True when index i belongs to the validation slice of a dataset of size k.
// Every 11th appended pair is validation, which keeps |train|:|validation| at
// 10:1 (validation = floor(k/11)) and stays stable as the dataset grows.
// Exception: for k < 11 the last pair alone is validation, so small datasets
// still have one; those splits are not stable across the k = 11 boundary.
bool is_validation_index(std::size_t i, std::size_t k);

// An append-only ordered collection of geometry-spectrum pairs with a derived
// train/validation split. Growing a dataset never removes or reorders pairs.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int input_dim, int output_dim);

  void append(DataPair pair);  // dims checked against (input_dim, output_dim)

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const DataPair& pair(std::size_t i) const { return pairs_[i]; }
  const std::vector<DataPair>& pairs() const { return pairs_; }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> validation_indices() const;

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<DataPair> pairs_;
};

// --- Dataset file format -------------------------------------------------------
//
// Comma-separated text, one row per pair: D geometry columns followed by L
// spectrum columns. A single header row is optional; the reader accepts both.

void write_dataset_csv(const std::string& path, const Dataset& data, bool with_header = true);
Dataset read_dataset_csv(const std::string& path, int input_dim, int output_dim);

// Number of columns in the first data row (header skipped), for input checking.
std::size_t count_csv_columns(const std::string& path);
// Number of data rows (header excluded).
std::size_t count_csv_rows(const std::string& path);

// Target-spectrum file: one value per line, or a single comma-separated row.
std::vector<double> read_spectrum_file(const std::string& path);

}  // namespace invdes
