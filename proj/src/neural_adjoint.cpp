#include "invdes/neural_adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

namespace invdes {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void NaConfig::validate() const {
  if (n_candidates < 1) throw ValidationError("na: n_candidates must be >= 1");
  if (n_steps < 0) throw ValidationError("na: n_steps must be >= 0");
  if (!(step_size > 0)) throw ValidationError("na: step_size must be > 0");
  if (boundary_weight < 0) throw ValidationError("na: boundary_weight must be >= 0");
}

std::pair<double, std::vector<double>> boundary_loss(const Geometry& g, const GeometryBounds& b) {
  b.validate();
  if (g.size() != b.size()) throw DimensionError("boundary_loss: dimension mismatch");
  double value = 0.0;
  std::vector<double> grad(g.size(), 0.0);
  for (std::size_t d = 0; d < g.size(); ++d) {
    const double mid = 0.5 * (b.lower[d] + b.upper[d]);
    const double half = 0.5 * (b.upper[d] - b.lower[d]);
    const double excess = std::abs(g.values[d] - mid) - half;
    if (excess > 0.0) {
      value += excess;
      grad[d] = g.values[d] > mid ? 1.0 : -1.0;
    }
  }
  return {value, grad};
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// avg over alive candidates of MSE(pred, target) + w * boundary penalty.
double population_loss(const ModelBundle& bundle, const MatrixXd& geoms, const VectorXd& target,
                       const GeometryBounds& bounds, double boundary_weight,
                       const std::vector<char>& alive) {
  MatrixXd preds = predict_batch(bundle, geoms);
  const double l = static_cast<double>(preds.rows());
  double acc = 0.0;
  int n = 0;
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    if (!alive[static_cast<std::size_t>(j)]) continue;
    const double mse = (preds.col(j) - target).squaredNorm() / l;
    double bnd = 0.0;
    for (Eigen::Index d = 0; d < geoms.rows(); ++d) {
      const double mid = 0.5 * (bounds.lower[d] + bounds.upper[d]);
      const double half = 0.5 * (bounds.upper[d] - bounds.lower[d]);
      bnd += std::max(0.0, std::abs(geoms(d, j) - mid) - half);
    }
    acc += mse + boundary_weight * bnd;
    ++n;
  }
  return n > 0 ? acc / n : 0.0;
}

}  // namespace

InverseDesignOutcome inverse_design(const Spectrum& target, const ModelBundle& bundle,
                                    const GeometryBounds& bounds, const NaConfig& cfg) {
  cfg.validate();
  bounds.validate();
  const int d = bundle.spec.input_dim;
  const int l = bundle.spec.output_dim;
  if (static_cast<int>(bounds.size()) != d) {
    throw DimensionError("inverse_design: bounds dimension " + std::to_string(bounds.size()) +
                         " != input_dim " + std::to_string(d));
  }
  if (static_cast<int>(target.size()) != l) {
    throw DimensionError("inverse_design: target length " + std::to_string(target.size()) +
                         " != output_dim " + std::to_string(l));
  }
  if (bundle.weights.size() != weight_count(bundle.spec)) {
    throw ValidationError("inverse_design: bundle weight count does not match its spec");
  }

  const int n = cfg.n_candidates;
  MatrixXd geoms(d, n);
  for (int j = 0; j < n; ++j) {
    for (int r = 0; r < d; ++r) {
      const double u = counter_u01(cfg.seed, sample_stream::kInverseInit,
                                   static_cast<uint64_t>(j) * d + r);
      geoms(r, j) = bounds.lower[r] + u * (bounds.upper[r] - bounds.lower[r]);
    }
  }

  const VectorXd target_v = Eigen::Map<const VectorXd>(target.values.data(), l);
  const VectorXd in_mean = Eigen::Map<const VectorXd>(bundle.scaler.input_mean.data(), d);
  const VectorXd in_std = Eigen::Map<const VectorXd>(bundle.scaler.input_std.data(), d);
  const VectorXd out_mean = Eigen::Map<const VectorXd>(bundle.scaler.output_mean.data(), l);
  const VectorXd out_std = Eigen::Map<const VectorXd>(bundle.scaler.output_std.data(), l);

  // Aligned working copy: gemm results must not depend on the heap address of
  // the caller's weight vector.
  const VectorXd weights = Eigen::Map<const VectorXd>(
      bundle.weights.data(), static_cast<Eigen::Index>(bundle.weights.size()));
  Network net(bundle.spec, weights.data());
  Network::Workspace ws;

  // Fold the output layer, output scaler and the MSE quadratic into an HxH
  // Gram map so the spectrum axis disappears from the step loop:
  //   dMSE/d(hidden) = gram * hidden - affine.
  const MatrixXd w_out_eff = out_std.asDiagonal() * net.output_weight();
  const VectorXd b_out_eff =
      (net.output_bias().array() * out_std.array()).matrix() + out_mean;
  const double two_over_l = 2.0 / static_cast<double>(l);
  const MatrixXd gram = two_over_l * (w_out_eff.transpose() * w_out_eff);
  const VectorXd affine = two_over_l * (w_out_eff.transpose() * (target_v - b_out_eff));

  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  int dropped = 0;

  InverseDesignOutcome outcome;
  outcome.mean_loss_initial =
      population_loss(bundle, geoms, target_v, bounds, cfg.boundary_weight, alive);

  MatrixXd x(d, n), d_hidden, dx, grad(d, n);
  MatrixXd adam_m = MatrixXd::Zero(d, n), adam_v = MatrixXd::Zero(d, n);
  Eigen::ArrayXd lower = Eigen::Map<const VectorXd>(bounds.lower.data(), d).array();
  Eigen::ArrayXd upper = Eigen::Map<const VectorXd>(bounds.upper.data(), d).array();

  for (int step = 0; step < cfg.n_steps; ++step) {
    for (int r = 0; r < d; ++r) {
      x.row(r) = (geoms.row(r).array() - in_mean[r]) / in_std[r];
    }
    net.forward_hidden(x, ws);
    d_hidden.noalias() = gram * ws.hidden;
    d_hidden.colwise() -= affine;
    net.backward_from_hidden(d_hidden, ws, dx);
    for (int r = 0; r < d; ++r) {
      grad.row(r).array() = dx.row(r).array() / in_std[r] +
                            cfg.boundary_weight *
                                ((geoms.row(r).array() > upper[r]).cast<double>() -
                                 (geoms.row(r).array() < lower[r]).cast<double>());
    }

    for (int j = 0; j < n; ++j) {
      if (!alive[j]) {
        grad.col(j).setZero();
      } else if (!grad.col(j).allFinite()) {
        alive[j] = 0;
        ++dropped;
        grad.col(j).setZero();
      }
    }
    if (dropped == n) {
      throw OptimizationCollapseError(
          "inverse_design: every candidate produced non-finite gradients");
    }

    const double bc1 = 1.0 - std::pow(kAdamBeta1, step + 1);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, step + 1);
    adam_m = kAdamBeta1 * adam_m + (1.0 - kAdamBeta1) * grad;
    adam_v = kAdamBeta2 * adam_v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
    geoms.array() -=
        cfg.step_size * (adam_m.array() / bc1) / ((adam_v.array() / bc2).sqrt() + kAdamEps);
  }

  outcome.mean_loss_final =
      cfg.n_steps > 0
          ? population_loss(bundle, geoms, target_v, bounds, cfg.boundary_weight, alive)
          : outcome.mean_loss_initial;
  outcome.dropped = dropped;

  // Project into bounds, score, sort.
  for (int r = 0; r < d; ++r) {
    geoms.row(r) = geoms.row(r).cwiseMax(lower[r]).cwiseMin(upper[r]);
  }
  MatrixXd preds = predict_batch(bundle, geoms);
  std::vector<std::pair<double, int>> scored;  // (loss, candidate index)
  scored.reserve(n);
  for (int j = 0; j < n; ++j) {
    if (!alive[j]) continue;
    scored.emplace_back((preds.col(j) - target_v).squaredNorm() / static_cast<double>(l), j);
  }
  if (scored.empty()) {
    throw OptimizationCollapseError("inverse_design: no candidate survived");
  }
  std::stable_sort(scored.begin(), scored.end());

  outcome.results.reserve(scored.size());
  for (std::size_t rank = 0; rank < scored.size(); ++rank) {
    DesignResult res;
    res.rank = static_cast<int>(rank);
    res.surrogate_loss = scored[rank].first;
    const int j = scored[rank].second;
    res.geometry.values.assign(geoms.col(j).data(), geoms.col(j).data() + d);
    outcome.results.push_back(std::move(res));
  }
  return outcome;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto idx = static_cast<std::size_t>(std::ceil(q * n));
  idx = std::min(std::max<std::size_t>(idx, 1), values.size()) - 1;
  return values[idx];
}

DesignReport design_report(std::vector<DesignResult> results, const Spectrum& target,
                           const OracleConfig& oracle_cfg, int top_m) {
  if (top_m < 0) throw ContractError("design_report: top_m must be >= 0");
  DesignReport report;
  const int limit = std::min<int>(top_m, static_cast<int>(results.size()));
  for (int i = 0; i < limit; ++i) {
    try {
      results[i].resim_error = resimulate_error(results[i].geometry, target, oracle_cfg);
      ++report.resimulated;
    } catch (const Error&) {
      report.degraded = true;
      break;
    }
  }

  std::vector<double> stats;
  if (!report.degraded && report.resimulated > 0) {
    for (int i = 0; i < report.resimulated; ++i) stats.push_back(*results[i].resim_error);
  } else {
    report.degraded = true;
    for (int i = 0; i < limit; ++i) stats.push_back(results[i].surrogate_loss);
  }
  if (!stats.empty()) {
    report.best = *std::min_element(stats.begin(), stats.end());
    report.median = percentile(stats, 0.5);
    report.p95 = percentile(stats, 0.95);
  }
  report.results = std::move(results);
  return report;
}

void write_designs_csv(const std::string& path, const std::vector<DesignResult>& results) {
  std::ostringstream out;
  const std::size_t dims = results.empty() ? 0 : results.front().geometry.size();
  out << "rank";
  for (std::size_t d = 0; d < dims; ++d) out << ",g" << d;
  out << ",surrogate_loss,resim_error\n";
  for (const auto& r : results) {
    out << r.rank;
    for (double v : r.geometry.values) out << "," << format_double(v);
    out << "," << format_double(r.surrogate_loss) << ",";
    if (r.resim_error) out << format_double(*r.resim_error);
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

}  // namespace invdes
