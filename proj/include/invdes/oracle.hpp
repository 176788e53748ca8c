#pragma once

#include <cstdint>
#include <string>

#include "invdes/domain.hpp"

namespace invdes {

enum class OracleKind { synthetic, file_backed };

// Configuration of the ground-truth data source. The synthetic kind is an
// analytic resonator model over a dimensionless frequency grid
// f_j = j / (L - 1); the file-backed kind replays rows of a pre-generated
// dataset file in order.
struct OracleConfig {
  OracleKind kind = OracleKind::synthetic;
  int input_dim = 14;    // synthetic requires 14: h, p, 4x r_major, 4x r_minor, 4x theta
  int output_dim = 201;  // grid length L
  uint64_t seed = 0;
  std::string path;  // file-backed only

  void validate() const;  // throws ValidationError
};

// Index layout of the 14 synthetic design parameters.
namespace geom_param {
inline constexpr int kHeight = 0;
inline constexpr int kPeriod = 1;
inline constexpr int kMajorAxis0 = 2;   // .. 5
inline constexpr int kMinorAxis0 = 6;   // .. 9
inline constexpr int kAngle0 = 10;      // .. 13
inline constexpr int kResonators = 4;
inline constexpr int kCount = 14;
}  // namespace geom_param

// Deterministic synthetic response: four superposed resonant dips whose
// centers, widths and amplitudes are smooth functions of the design vector,
// clamped into [0, 1]. Geometry must be in normalized units with all 14
// parameters present and finite.
Spectrum simulate(const Geometry& g, const OracleConfig& cfg);

// Uniform draw inside bounds from the counter stream keyed by
// (cfg.seed, stream, index); used for dataset growth (stream 0) and for
// held-out evaluation targets (stream 1).
namespace sample_stream {
inline constexpr uint64_t kTraining = 0;
inline constexpr uint64_t kEvaluation = 1;
inline constexpr uint64_t kInverseInit = 2;
}  // namespace sample_stream

Geometry sample_geometry(const OracleConfig& cfg, uint64_t stream, uint64_t index,
                         const GeometryBounds& bounds);

// Returns a dataset of exactly k_target pairs whose first |current| pairs are
// the pairs of current, unchanged. New pairs come from the counter stream
// (synthetic) or the next rows of the backing file (file-backed).
Dataset grow_dataset(const Dataset& current, std::size_t k_target, const OracleConfig& cfg,
                     const GeometryBounds& bounds);

// MSE between simulate(g) and target.
double resimulate_error(const Geometry& g, const Spectrum& target, const OracleConfig& cfg);

}  // namespace invdes
