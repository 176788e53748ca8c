#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invdes/oracle.hpp"
#include "invdes/surrogate.hpp"

namespace invdes {

struct NaConfig {
  int n_candidates = 1024;
  int n_steps = 300;
  double step_size = 0.01;
  double boundary_weight = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct DesignResult {
  Geometry geometry;  // feasible (projected into bounds)
  double surrogate_loss = 0.0;
  std::optional<double> resim_error;
  int rank = 0;
};

// Hinge penalty on the distance outside the feasible box:
//   sum_d max(0, |g_d - mid_d| - range_d / 2)
// with subgradient sign(g_d - mid_d) where the hinge is active, else 0.
// Zero on and inside the bounds (inclusive).
std::pair<double, std::vector<double>> boundary_loss(const Geometry& g, const GeometryBounds& b);

struct InverseDesignOutcome {
  std::vector<DesignResult> results;  // sorted ascending by surrogate_loss
  double mean_loss_initial = 0.0;     // avg MSE + boundary penalty before stepping
  double mean_loss_final = 0.0;       // same after the last step, pre-projection
  int dropped = 0;                    // candidates removed for non-finite gradients
};

// Repurposes the frozen surrogate for inverse design: a population of
// candidates initialized uniformly in bounds each takes n_steps Adam steps on
//   MSE(predict(g), target) + boundary_weight * boundary_loss(g),
// then is projected into bounds, scored by surrogate MSE and sorted. The
// bundle is never modified. Throws OptimizationCollapseError when every
// candidate drops out.
InverseDesignOutcome inverse_design(const Spectrum& target, const ModelBundle& bundle,
                                    const GeometryBounds& bounds, const NaConfig& cfg);

struct DesignReport {
  std::vector<DesignResult> results;
  double best = 0.0;    // over the re-simulated candidates
  double median = 0.0;
  double p95 = 0.0;     // nearest-rank 95th percentile
  bool degraded = false;  // oracle unavailable; stats fall back to surrogate losses
  int resimulated = 0;
};

// Fills resim_error for the top_m candidates via the oracle and summarizes.
// When the oracle cannot re-simulate (file-backed or failing), the report is
// flagged degraded and carries surrogate-only statistics.
DesignReport design_report(std::vector<DesignResult> results, const Spectrum& target,
                           const OracleConfig& oracle_cfg, int top_m);

// Design output file: one row per candidate: rank, D geometry columns,
// surrogate_loss, resim_error (empty when not computed).
void write_designs_csv(const std::string& path, const std::vector<DesignResult>& results);

// Nearest-rank percentile of an unsorted sample (q in (0, 1]).
double percentile(std::vector<double> values, double q);

}  // namespace invdes
