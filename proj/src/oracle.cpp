#include "invdes/oracle.hpp"

#include <cmath>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

namespace invdes {

void OracleConfig::validate() const {
  if (output_dim < 2) throw ValidationError("oracle output_dim must be >= 2");
  if (kind == OracleKind::synthetic && input_dim != geom_param::kCount) {
    throw ValidationError("synthetic oracle requires input_dim = 14, got " +
                          std::to_string(input_dim));
  }
  if (kind == OracleKind::file_backed && path.empty()) {
    throw ValidationError("file-backed oracle requires a path");
  }
  if (input_dim < 1) throw ValidationError("oracle input_dim must be >= 1");
}

Spectrum simulate(const Geometry& g, const OracleConfig& cfg) {
  cfg.validate();
  if (cfg.kind != OracleKind::synthetic) {
    throw DomainError("simulate is only available for the synthetic oracle");
  }
  if (static_cast<int>(g.size()) != cfg.input_dim) {
    throw DimensionError("simulate: geometry has " + std::to_string(g.size()) +
                         " values, expected " + std::to_string(cfg.input_dim));
  }
  for (double v : g.values) {
    if (!std::isfinite(v)) throw DomainError("simulate: non-finite geometry value");
  }

  const double h = g.values[geom_param::kHeight];
  const double p = g.values[geom_param::kPeriod];
  double center[geom_param::kResonators];
  double width[geom_param::kResonators];
  double amplitude[geom_param::kResonators];
  for (int i = 0; i < geom_param::kResonators; ++i) {
    const double r_major = g.values[geom_param::kMajorAxis0 + i];
    const double r_minor = g.values[geom_param::kMinorAxis0 + i];
    const double theta = g.values[geom_param::kAngle0 + i];
    center[i] = 0.5 + 0.35 * (0.6 * r_major + 0.25 * r_minor + 0.1 * h + 0.05 * p);
    width[i] = 0.015 + 0.025 * (r_minor + 1.0);
    amplitude[i] = 0.4 + 0.25 * (1.0 + std::sin(M_PI * theta));
  }

  const int n = cfg.output_dim;
  Spectrum s;
  s.values.resize(n);
  for (int j = 0; j < n; ++j) {
    const double f = static_cast<double>(j) / static_cast<double>(n - 1);
    double dip = 0.0;
    for (int i = 0; i < geom_param::kResonators; ++i) {
      const double w2 = width[i] * width[i];
      const double df = f - center[i];
      dip += amplitude[i] * w2 / (df * df + w2);
    }
    double v = 1.0 - dip;
    s.values[j] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return s;
}

Geometry sample_geometry(const OracleConfig& cfg, uint64_t stream, uint64_t index,
                         const GeometryBounds& bounds) {
  if (static_cast<int>(bounds.size()) != cfg.input_dim) {
    throw DimensionError("sample_geometry: bounds dimension mismatch");
  }
  Geometry g;
  g.values.resize(cfg.input_dim);
  for (int d = 0; d < cfg.input_dim; ++d) {
    const double u =
        counter_u01(cfg.seed, stream, index * static_cast<uint64_t>(cfg.input_dim) + d);
    g.values[d] = bounds.lower[d] + u * (bounds.upper[d] - bounds.lower[d]);
  }
  return g;
}

Dataset grow_dataset(const Dataset& current, std::size_t k_target, const OracleConfig& cfg,
                     const GeometryBounds& bounds) {
  cfg.validate();
  if (k_target < current.size()) {
    throw ContractError("grow_dataset: k_target " + std::to_string(k_target) +
                        " is smaller than current size " + std::to_string(current.size()));
  }
  Dataset grown(cfg.input_dim, cfg.output_dim);
  for (const auto& pair : current.pairs()) grown.append(pair);
  if (k_target == current.size()) return grown;

  if (cfg.kind == OracleKind::synthetic) {
    for (std::size_t i = current.size(); i < k_target; ++i) {
      Geometry g = sample_geometry(cfg, sample_stream::kTraining, i, bounds);
      Spectrum s = simulate(g, cfg);
      grown.append({std::move(g), std::move(s)});
    }
  } else {
    Dataset pool = read_dataset_csv(cfg.path, cfg.input_dim, cfg.output_dim);
    if (pool.size() < k_target) {
      throw CapacityError("file-backed dataset " + cfg.path + " holds " +
                          std::to_string(pool.size()) + " rows, need " + std::to_string(k_target));
    }
    for (std::size_t i = current.size(); i < k_target; ++i) {
      grown.append(pool.pair(i));
    }
  }
  return grown;
}

double resimulate_error(const Geometry& g, const Spectrum& target, const OracleConfig& cfg) {
  Spectrum sim = simulate(g, cfg);
  if (sim.size() != target.size()) {
    throw DimensionError("resimulate_error: target length " + std::to_string(target.size()) +
                         " does not match oracle output " + std::to_string(sim.size()));
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < sim.size(); ++j) {
    const double e = sim.values[j] - target.values[j];
    acc += e * e;
  }
  return acc / static_cast<double>(sim.size());
}

}  // namespace invdes
