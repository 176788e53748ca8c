#include "invdes/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "invdes/error.hpp"
#include "invdes/jsonio.hpp"
#include "invdes/util.hpp"

namespace invdes {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr int kEarlyStopPatience = 20;
constexpr double kEarlyStopMinDelta = 1e-6;
constexpr int kEvalChunk = 256;
constexpr uint64_t kInitStream = 0x1417ULL;
constexpr uint64_t kShuffleSalt = 0x51a77e0ULL;

}  // namespace

std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::plain_mlp: return "plain-mlp";
    case ModelFamily::residual_mlp: return "residual-mlp";
    case ModelFamily::se_residual_mlp: return "se-residual-mlp";
  }
  return "?";
}

std::string loss_name(LossKind k) { return k == LossKind::mse ? "mse" : "smooth-l1"; }

ModelFamily parse_family(const std::string& s) {
  if (s == "plain-mlp") return ModelFamily::plain_mlp;
  if (s == "residual-mlp") return ModelFamily::residual_mlp;
  if (s == "se-residual-mlp") return ModelFamily::se_residual_mlp;
  throw ValidationError("unknown model family: '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "smooth-l1") return LossKind::smooth_l1;
  throw ValidationError("unknown loss kind: '" + s + "'");
}

std::vector<std::string> ModelSpec::validate() const {
  std::vector<std::string> v;
  if (input_dim < 1) v.push_back("input_dim must be >= 1");
  if (output_dim < 1) v.push_back("output_dim must be >= 1");
  if (hidden_dim < 1) v.push_back("hidden_dim must be >= 1");
  if (n_blocks < 1) v.push_back("n_blocks must be >= 1");
  if (family == ModelFamily::se_residual_mlp) {
    if (se_reduction < 1) {
      v.push_back("se_reduction must be >= 1");
    } else if (hidden_dim >= 1 && hidden_dim % se_reduction != 0) {
      v.push_back("se_reduction must divide hidden_dim");
    }
  }
  if (!(learning_rate > 0)) v.push_back("learning_rate must be > 0");
  if (epochs < 0) v.push_back("epochs must be >= 0");
  if (batch_size < 1) v.push_back("batch_size must be >= 1");
  return v;
}

void ModelSpec::ensure_valid() const {
  auto violations = validate();
  if (violations.empty()) return;
  std::string msg = "invalid model spec:";
  for (const auto& s : violations) msg += " " + s + ";";
  throw ValidationError(msg);
}

std::string ModelSpec::id() const {
  std::string s = family_name(family) + "-h" + std::to_string(hidden_dim) + "-b" +
                  std::to_string(n_blocks);
  if (family == ModelFamily::se_residual_mlp) s += "-r" + std::to_string(se_reduction);
  return s + "-" + loss_name(loss);
}

std::vector<LayerInfo> layer_manifest(const ModelSpec& spec) {
  std::vector<LayerInfo> layers;
  const int d = spec.input_dim, l = spec.output_dim, h = spec.hidden_dim;
  std::size_t off = 0;
  auto add = [&](const std::string& name, int rows, int cols) {
    layers.push_back({name, off, rows, cols});
    off += static_cast<std::size_t>(rows) * cols;
  };
  add("w_in", h, d);
  add("b_in", h, 1);
  for (int b = 0; b < spec.n_blocks; ++b) {
    const std::string pfx = "block" + std::to_string(b) + ".";
    add(pfx + "w1", h, h);
    add(pfx + "b1", h, 1);
    add(pfx + "w2", h, h);
    add(pfx + "b2", h, 1);
    if (spec.family == ModelFamily::se_residual_mlp) {
      const int hr = h / spec.se_reduction;
      add(pfx + "se_w1", hr, h);
      add(pfx + "se_b1", hr, 1);
      add(pfx + "se_w2", h, hr);
      add(pfx + "se_b2", h, 1);
    }
  }
  add("w_out", l, h);
  add("b_out", l, 1);
  return layers;
}

std::size_t weight_count(const ModelSpec& spec) {
  const auto layers = layer_manifest(spec);
  return layers.back().offset + layers.back().count();
}

// --- Scaler ---------------------------------------------------------------------

ScalerParams fit_scaler(const Dataset& data) {
  const auto train = data.train_indices();
  if (train.size() < 2) {
    throw InsufficientDataError("fit_scaler needs at least 2 training pairs, got " +
                                std::to_string(train.size()));
  }
  const int d = data.input_dim(), l = data.output_dim();
  ScalerParams sc;
  sc.input_mean.assign(d, 0.0);
  sc.input_std.assign(d, 0.0);
  sc.output_mean.assign(l, 0.0);
  sc.output_std.assign(l, 0.0);
  const double n = static_cast<double>(train.size());
  for (auto i : train) {
    const auto& p = data.pair(i);
    for (int c = 0; c < d; ++c) sc.input_mean[c] += p.geometry.values[c];
    for (int c = 0; c < l; ++c) sc.output_mean[c] += p.spectrum.values[c];
  }
  for (int c = 0; c < d; ++c) sc.input_mean[c] /= n;
  for (int c = 0; c < l; ++c) sc.output_mean[c] /= n;
  for (auto i : train) {
    const auto& p = data.pair(i);
    for (int c = 0; c < d; ++c) {
      const double e = p.geometry.values[c] - sc.input_mean[c];
      sc.input_std[c] += e * e;
    }
    for (int c = 0; c < l; ++c) {
      const double e = p.spectrum.values[c] - sc.output_mean[c];
      sc.output_std[c] += e * e;
    }
  }
  for (int c = 0; c < d; ++c) {
    sc.input_std[c] = std::max(std::sqrt(sc.input_std[c] / n), kScalerStdFloor);
  }
  for (int c = 0; c < l; ++c) {
    sc.output_std[c] = std::max(std::sqrt(sc.output_std[c] / n), kScalerStdFloor);
  }
  return sc;
}

std::vector<double> apply_scaler(const std::vector<double>& x, const std::vector<double>& mean,
                                 const std::vector<double>& std) {
  if (x.size() != mean.size() || x.size() != std.size()) {
    throw DimensionError("apply_scaler: length mismatch");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
  return out;
}

std::vector<double> invert_scaler(const std::vector<double>& x, const std::vector<double>& mean,
                                  const std::vector<double>& std) {
  if (x.size() != mean.size() || x.size() != std.size()) {
    throw DimensionError("invert_scaler: length mismatch");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * std[i] + mean[i];
  return out;
}

// --- Network --------------------------------------------------------------------

Network::Network(const ModelSpec& spec, const double* weights)
    : spec_(spec), w_(weights), layers_(layer_manifest(spec)) {}

namespace {

inline Eigen::Map<const MatrixXd> mat_view(const double* base, const LayerInfo& info) {
  return {base + info.offset, info.rows, info.cols};
}

inline Eigen::Map<const VectorXd> vec_view(const double* base, const LayerInfo& info) {
  return {base + info.offset, info.rows};
}

inline Eigen::Map<MatrixXd> mat_grad(double* base, const LayerInfo& info) {
  return {base + info.offset, info.rows, info.cols};
}

inline Eigen::Map<VectorXd> vec_grad(double* base, const LayerInfo& info) {
  return {base + info.offset, info.rows};
}

}  // namespace

Eigen::Map<const MatrixXd> Network::output_weight() const {
  return mat_view(w_, layers_[layers_.size() - 2]);
}
Eigen::Map<const VectorXd> Network::output_bias() const { return vec_view(w_, layers_.back()); }
Eigen::Map<const MatrixXd> Network::input_weight() const { return mat_view(w_, layers_[0]); }
Eigen::Map<const VectorXd> Network::input_bias() const { return vec_view(w_, layers_[1]); }

void Network::run_forward(const Eigen::Ref<const MatrixXd>& x, Workspace& ws,
                          bool with_output) const {
  const int nb = spec_.n_blocks;
  const bool se = spec_.family == ModelFamily::se_residual_mlp;
  const int per_block = se ? 8 : 4;

  ws.x = x;
  ws.block_in.resize(nb);
  ws.z1_mask.resize(nb);
  ws.u.resize(nb);
  ws.out_mask.resize(nb);
  if (se) {
    ws.t.resize(nb);
    ws.se_s1.resize(nb);
    ws.se_mask.resize(nb);
    ws.se_gate.resize(nb);
  }

  ws.block_in[0].noalias() = mat_view(w_, layers_[0]) * x;
  ws.block_in[0].colwise() += vec_view(w_, layers_[1]);

  for (int b = 0; b < nb; ++b) {
    const std::size_t base = 2 + static_cast<std::size_t>(b) * per_block;
    const auto w1 = mat_view(w_, layers_[base]);
    const auto b1 = vec_view(w_, layers_[base + 1]);
    const auto w2 = mat_view(w_, layers_[base + 2]);
    const auto b2 = vec_view(w_, layers_[base + 3]);
    const MatrixXd& in = ws.block_in[b];
    MatrixXd& target = (b + 1 < nb) ? ws.block_in[b + 1] : ws.hidden;

    ws.u[b].noalias() = w1 * in;
    ws.u[b].colwise() += b1;
    ws.z1_mask[b] = (ws.u[b].array() > 0.0).cast<double>();
    ws.u[b] = ws.u[b].cwiseMax(0.0);

    if (se) {
      const auto se_w1 = mat_view(w_, layers_[base + 4]);
      const auto se_b1 = vec_view(w_, layers_[base + 5]);
      const auto se_w2 = mat_view(w_, layers_[base + 6]);
      const auto se_b2 = vec_view(w_, layers_[base + 7]);
      ws.t[b].noalias() = w2 * ws.u[b];
      ws.t[b].colwise() += b2;
      // Squeeze is the identity for vector features (each hidden unit is its
      // own channel of spatial size one); excitation gates the body output.
      ws.se_s1[b].noalias() = se_w1 * ws.t[b];
      ws.se_s1[b].colwise() += se_b1;
      ws.se_mask[b] = (ws.se_s1[b].array() > 0.0).cast<double>();
      ws.se_s1[b] = ws.se_s1[b].cwiseMax(0.0);
      ws.se_gate[b].noalias() = se_w2 * ws.se_s1[b];
      ws.se_gate[b].colwise() += se_b2;
      ws.se_gate[b] = (1.0 / (1.0 + (-ws.se_gate[b].array()).exp())).matrix();
      target = in + ws.t[b].cwiseProduct(ws.se_gate[b]);
    } else if (spec_.family == ModelFamily::residual_mlp) {
      target.noalias() = w2 * ws.u[b];
      target.colwise() += b2;
      target += in;
    } else {
      target.noalias() = w2 * ws.u[b];
      target.colwise() += b2;
    }
    ws.out_mask[b] = (target.array() > 0.0).cast<double>();
    target = target.cwiseMax(0.0);
  }

  if (with_output) {
    ws.y.noalias() = output_weight() * ws.hidden;
    ws.y.colwise() += output_bias();
  }
}

void Network::forward(const Eigen::Ref<const MatrixXd>& x, Workspace& ws) const {
  run_forward(x, ws, true);
}

void Network::forward_hidden(const Eigen::Ref<const MatrixXd>& x, Workspace& ws) const {
  run_forward(x, ws, false);
}

void Network::run_backward(Workspace& ws, double* grad, MatrixXd* dx) const {
  const int nb = spec_.n_blocks;
  const bool se = spec_.family == ModelFamily::se_residual_mlp;
  const bool skip = spec_.family != ModelFamily::plain_mlp;
  const int per_block = se ? 8 : 4;

  // ws.d_a arrives holding dLoss/d(block output) of the last block.
  for (int b = nb - 1; b >= 0; --b) {
    const std::size_t base = 2 + static_cast<std::size_t>(b) * per_block;
    const auto w1 = mat_view(w_, layers_[base]);
    const auto w2 = mat_view(w_, layers_[base + 2]);
    const MatrixXd& in = ws.block_in[b];

    ws.d_a.array() *= ws.out_mask[b].array();  // now dLoss/d(pre-relu sum)

    const MatrixXd* d_t = &ws.d_a;
    if (se) {
      const auto se_w1 = mat_view(w_, layers_[base + 4]);
      const auto se_w2 = mat_view(w_, layers_[base + 6]);
      const auto& gate = ws.se_gate[b];
      // gated = t * sigmoid(p2(t)); d_a is the gradient at gated.
      ws.d_p2 = (ws.d_a.array() * ws.t[b].array() * gate.array() * (1.0 - gate.array())).matrix();
      if (grad) {
        mat_grad(grad, layers_[base + 6]).noalias() += ws.d_p2 * ws.se_s1[b].transpose();
        vec_grad(grad, layers_[base + 7]) += ws.d_p2.rowwise().sum();
      }
      ws.d_s1.noalias() = se_w2.transpose() * ws.d_p2;
      ws.d_p1 = ws.d_s1.cwiseProduct(ws.se_mask[b]);
      if (grad) {
        mat_grad(grad, layers_[base + 4]).noalias() += ws.d_p1 * ws.t[b].transpose();
        vec_grad(grad, layers_[base + 5]) += ws.d_p1.rowwise().sum();
      }
      ws.d_t = ws.d_a.cwiseProduct(gate);
      ws.d_t.noalias() += se_w1.transpose() * ws.d_p1;
      d_t = &ws.d_t;
    }

    if (grad) {
      mat_grad(grad, layers_[base + 2]).noalias() += *d_t * ws.u[b].transpose();
      vec_grad(grad, layers_[base + 3]) += d_t->rowwise().sum();
    }
    ws.d_u.noalias() = w2.transpose() * *d_t;
    ws.d_z1 = ws.d_u.cwiseProduct(ws.z1_mask[b]);
    if (grad) {
      mat_grad(grad, layers_[base]).noalias() += ws.d_z1 * in.transpose();
      vec_grad(grad, layers_[base + 1]) += ws.d_z1.rowwise().sum();
    }
    if (skip) {
      ws.d_a.noalias() += w1.transpose() * ws.d_z1;
    } else {
      ws.d_a.noalias() = w1.transpose() * ws.d_z1;
    }
  }

  if (grad) {
    mat_grad(grad, layers_[0]).noalias() += ws.d_a * ws.x.transpose();
    vec_grad(grad, layers_[1]) += ws.d_a.rowwise().sum();
  }
  if (dx) {
    dx->noalias() = mat_view(w_, layers_[0]).transpose() * ws.d_a;
  }
}

void Network::backward_inputs(const Eigen::Ref<const MatrixXd>& d_y, Workspace& ws,
                              MatrixXd& dx) const {
  ws.d_a.noalias() = output_weight().transpose() * d_y;
  run_backward(ws, nullptr, &dx);
}

void Network::backward_from_hidden(const Eigen::Ref<const MatrixXd>& d_hidden, Workspace& ws,
                                   MatrixXd& dx) const {
  ws.d_a = d_hidden;
  run_backward(ws, nullptr, &dx);
}

void Network::backward_weights(const Eigen::Ref<const MatrixXd>& d_y, Workspace& ws, double* grad,
                               MatrixXd* dx) const {
  mat_grad(grad, layers_[layers_.size() - 2]).noalias() += d_y * ws.hidden.transpose();
  vec_grad(grad, layers_.back()) += d_y.rowwise().sum();
  ws.d_a.noalias() = output_weight().transpose() * d_y;
  run_backward(ws, grad, dx);
}

// --- Bundle construction and inference --------------------------------------------

ModelBundle build_model(const ModelSpec& spec) {
  spec.ensure_valid();
  ModelBundle bundle;
  bundle.spec = spec;
  bundle.weights.assign(weight_count(spec), 0.0);
  // He-uniform weights from the counter stream, zero biases.
  for (const auto& layer : layer_manifest(spec)) {
    if (layer.cols == 1) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.cols));
    for (std::size_t i = 0; i < layer.count(); ++i) {
      const double u = counter_u01(spec.init_seed, kInitStream, layer.offset + i);
      bundle.weights[layer.offset + i] = (2.0 * u - 1.0) * limit;
    }
  }
  bundle.scaler.input_mean.assign(spec.input_dim, 0.0);
  bundle.scaler.input_std.assign(spec.input_dim, 1.0);
  bundle.scaler.output_mean.assign(spec.output_dim, 0.0);
  bundle.scaler.output_std.assign(spec.output_dim, 1.0);
  return bundle;
}

namespace {

// Weight arrays are copied into Eigen-aligned storage before any matrix math:
// kernel peeling depends on runtime pointer alignment, so feeding gemm from
// arbitrarily aligned std::vector buffers would make results depend on heap
// addresses at the last ulp. A 64-byte-aligned base with fixed layer offsets
// keeps every reduction order fixed.
VectorXd aligned_weights(const std::vector<double>& w) {
  return Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

void check_bundle_dims(const ModelBundle& bundle) {
  if (bundle.weights.size() != weight_count(bundle.spec)) {
    throw ValidationError("bundle weight count " + std::to_string(bundle.weights.size()) +
                          " does not match spec (" + std::to_string(weight_count(bundle.spec)) +
                          ")");
  }
}

// Scales a raw geometry batch into network input space.
MatrixXd scale_inputs(const ModelBundle& bundle, const Eigen::Ref<const MatrixXd>& geoms) {
  const int d = bundle.spec.input_dim;
  MatrixXd x(d, geoms.cols());
  for (int c = 0; c < d; ++c) {
    x.row(c) = (geoms.row(c).array() - bundle.scaler.input_mean[c]) / bundle.scaler.input_std[c];
  }
  return x;
}

void unscale_outputs_inplace(const ModelBundle& bundle, MatrixXd& y) {
  const int l = bundle.spec.output_dim;
  for (int r = 0; r < l; ++r) {
    y.row(r) = y.row(r).array() * bundle.scaler.output_std[r] + bundle.scaler.output_mean[r];
  }
}

}  // namespace

Eigen::MatrixXd predict_batch(const ModelBundle& bundle, const Eigen::Ref<const MatrixXd>& geoms) {
  check_bundle_dims(bundle);
  if (geoms.rows() != bundle.spec.input_dim) {
    throw DimensionError("predict_batch: geometry rows " + std::to_string(geoms.rows()) +
                         " != input_dim " + std::to_string(bundle.spec.input_dim));
  }
  const VectorXd weights = aligned_weights(bundle.weights);
  Network net(bundle.spec, weights.data());
  Network::Workspace ws;
  MatrixXd y(bundle.spec.output_dim, geoms.cols());
  for (Eigen::Index start = 0; start < geoms.cols(); start += kEvalChunk) {
    const Eigen::Index n = std::min<Eigen::Index>(kEvalChunk, geoms.cols() - start);
    net.forward(scale_inputs(bundle, geoms.middleCols(start, n)), ws);
    y.middleCols(start, n) = ws.y;
  }
  unscale_outputs_inplace(bundle, y);
  return y;
}

Spectrum predict(const ModelBundle& bundle, const Geometry& g) {
  if (static_cast<int>(g.size()) != bundle.spec.input_dim) {
    throw DimensionError("predict: geometry size " + std::to_string(g.size()) + " != input_dim " +
                         std::to_string(bundle.spec.input_dim));
  }
  Eigen::Map<const VectorXd> gv(g.values.data(), g.values.size());
  MatrixXd y = predict_batch(bundle, gv);
  Spectrum s;
  s.values.assign(y.data(), y.data() + y.rows());
  return s;
}

double loss(const Spectrum& pred, const Spectrum& truth, LossKind kind) {
  if (pred.size() != truth.size()) {
    throw DimensionError("loss: spectra lengths differ (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()) + ")");
  }
  if (pred.size() == 0) throw DimensionError("loss: empty spectra");
  double acc = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double e = pred.values[j] - truth.values[j];
    if (kind == LossKind::mse) {
      acc += e * e;
    } else {
      const double a = std::abs(e);
      acc += a < 1.0 ? 0.5 * e * e : a - 0.5;
    }
  }
  return acc / static_cast<double>(pred.size());
}

namespace {

// Mean training loss over an L x B batch, measured on un-scaled spectra (the
// units the reported metric uses). yhat is the network output in scaled
// space; the returned d_y is the gradient with respect to that scaled output,
// i.e. the per-element loss derivative chained through the output unscale.
double loss_and_gradient(LossKind kind, const MatrixXd& yhat, const MatrixXd& ytruth_unscaled,
                         const std::vector<double>& out_std, const std::vector<double>& out_mean,
                         MatrixXd& d_y) {
  const double denom =
      static_cast<double>(yhat.rows()) * static_cast<double>(yhat.cols());
  d_y.resize(yhat.rows(), yhat.cols());
  double acc = 0.0;
  for (Eigen::Index c = 0; c < yhat.cols(); ++c) {
    for (Eigen::Index r = 0; r < yhat.rows(); ++r) {
      const double sigma = out_std[static_cast<std::size_t>(r)];
      const double pred = yhat(r, c) * sigma + out_mean[static_cast<std::size_t>(r)];
      const double e = pred - ytruth_unscaled(r, c);
      if (kind == LossKind::mse) {
        acc += e * e;
        d_y(r, c) = 2.0 * e * sigma / denom;
      } else {
        const double a = std::abs(e);
        if (a < 1.0) {
          acc += 0.5 * e * e;
          d_y(r, c) = e * sigma / denom;
        } else {
          acc += a - 0.5;
          d_y(r, c) = (e > 0 ? 1.0 : -1.0) * sigma / denom;
        }
      }
    }
  }
  return acc / denom;
}

void gather_columns(const Dataset& data, const std::vector<std::size_t>& idx, MatrixXd& geoms,
                    MatrixXd& spectra) {
  geoms.resize(data.input_dim(), static_cast<Eigen::Index>(idx.size()));
  spectra.resize(data.output_dim(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto& p = data.pair(idx[c]);
    geoms.col(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const VectorXd>(p.geometry.values.data(), data.input_dim());
    spectra.col(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const VectorXd>(p.spectrum.values.data(), data.output_dim());
  }
}

// Un-scaled validation MSE: mean over samples of the per-sample mean squared
// error. Accumulated per sample in index order so the result does not depend
// on chunking.
double matrix_val_mse(const ModelSpec& spec, const double* weights, const ScalerParams& scaler,
                      const MatrixXd& geoms, const MatrixXd& spectra) {
  Network net(spec, weights);
  Network::Workspace ws;
  const int d = spec.input_dim, l = spec.output_dim;
  double acc = 0.0;
  MatrixXd x;
  for (Eigen::Index start = 0; start < geoms.cols(); start += kEvalChunk) {
    const Eigen::Index n = std::min<Eigen::Index>(kEvalChunk, geoms.cols() - start);
    x.resize(d, n);
    for (int c = 0; c < d; ++c) {
      x.row(c) =
          (geoms.row(c).middleCols(start, n).array() - scaler.input_mean[c]) / scaler.input_std[c];
    }
    net.forward(x, ws);
    for (Eigen::Index j = 0; j < n; ++j) {
      double sample = 0.0;
      for (int r = 0; r < l; ++r) {
        const double pred = ws.y(r, j) * scaler.output_std[r] + scaler.output_mean[r];
        const double e = pred - spectra(r, start + j);
        sample += e * e;
      }
      acc += sample / static_cast<double>(l);
    }
  }
  return acc / static_cast<double>(geoms.cols());
}

}  // namespace

ModelBundle train(const ModelSpec& spec, const Dataset& data) {
  spec.ensure_valid();
  if (data.input_dim() != spec.input_dim || data.output_dim() != spec.output_dim) {
    throw DimensionError("train: dataset dims (" + std::to_string(data.input_dim()) + ", " +
                         std::to_string(data.output_dim()) + ") do not match spec");
  }
  const auto val_idx = data.validation_indices();
  if (val_idx.empty()) throw InsufficientDataError("train: empty validation split");

  ModelBundle bundle = build_model(spec);
  bundle.scaler = fit_scaler(data);
  bundle.provenance.trained = true;
  bundle.provenance.dataset_size = static_cast<long long>(data.size());

  auto train_idx = data.train_indices();
  MatrixXd geoms_tr, spectra_tr, geoms_val, spectra_val;
  gather_columns(data, train_idx, geoms_tr, spectra_tr);
  gather_columns(data, val_idx, geoms_val, spectra_val);

  // Pre-scaled input matrix; the gradient path never touches validation.
  // Targets stay in physical units: the training loss is measured on
  // un-scaled spectra, matching the reported metric.
  MatrixXd x_tr(geoms_tr.rows(), geoms_tr.cols());
  for (int c = 0; c < spec.input_dim; ++c) {
    x_tr.row(c) = (geoms_tr.row(c).array() - bundle.scaler.input_mean[c]) /
                  bundle.scaler.input_std[c];
  }
  const MatrixXd& y_tr = spectra_tr;

  VectorXd weights = aligned_weights(bundle.weights);
  const auto n_weights = static_cast<Eigen::Index>(bundle.weights.size());

  double best_metric =
      matrix_val_mse(spec, weights.data(), bundle.scaler, geoms_val, spectra_val);
  VectorXd best_weights = weights;

  VectorXd grad = VectorXd::Zero(n_weights);
  VectorXd adam_m = VectorXd::Zero(n_weights);
  VectorXd adam_v = VectorXd::Zero(n_weights);

  Network net(spec, weights.data());
  Network::Workspace ws;
  MatrixXd xb, yb, d_y;
  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long long adam_t = 0;
  double significant_best = best_metric;
  int stall = 0;

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    deterministic_shuffle(order, splitmix64(spec.init_seed ^ (kShuffleSalt + epoch)));
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t n =
          std::min<std::size_t>(spec.batch_size, order.size() - start);
      xb.resize(spec.input_dim, static_cast<Eigen::Index>(n));
      yb.resize(spec.output_dim, static_cast<Eigen::Index>(n));
      for (std::size_t j = 0; j < n; ++j) {
        xb.col(static_cast<Eigen::Index>(j)) = x_tr.col(static_cast<Eigen::Index>(order[start + j]));
        yb.col(static_cast<Eigen::Index>(j)) = y_tr.col(static_cast<Eigen::Index>(order[start + j]));
      }
      net.forward(xb, ws);
      const double batch_loss = loss_and_gradient(spec.loss, ws.y, yb,
                                                  bundle.scaler.output_std,
                                                  bundle.scaler.output_mean, d_y);
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch),
                              epoch);
      }
      grad.setZero();
      net.backward_weights(d_y, ws, grad.data());
      ++adam_t;
      const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_t));
      adam_m = kAdamBeta1 * adam_m + (1.0 - kAdamBeta1) * grad;
      adam_v = kAdamBeta2 * adam_v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
      weights.array() -=
          spec.learning_rate * (adam_m.array() / bc1) / ((adam_v.array() / bc2).sqrt() + kAdamEps);
    }

    const double val =
        matrix_val_mse(spec, weights.data(), bundle.scaler, geoms_val, spectra_val);
    if (!std::isfinite(val)) {
      throw DivergenceError("validation metric became non-finite at epoch " +
                                std::to_string(epoch),
                            epoch);
    }
    if (val < best_metric) {
      best_metric = val;
      best_weights = weights;
    }
    if (val < significant_best - kEarlyStopMinDelta) {
      significant_best = val;
      stall = 0;
    } else if (++stall >= kEarlyStopPatience) {
      break;
    }
  }

  bundle.weights.assign(best_weights.data(), best_weights.data() + best_weights.size());
  bundle.metric = best_metric;
  return bundle;
}

double evaluate(const ModelBundle& bundle, const Dataset& data) {
  check_bundle_dims(bundle);
  if (data.input_dim() != bundle.spec.input_dim || data.output_dim() != bundle.spec.output_dim) {
    throw DimensionError("evaluate: dataset dims do not match bundle");
  }
  const auto val_idx = data.validation_indices();
  if (val_idx.empty()) throw InsufficientDataError("evaluate: empty validation split");
  MatrixXd geoms, spectra;
  gather_columns(data, val_idx, geoms, spectra);
  const VectorXd weights = aligned_weights(bundle.weights);
  return matrix_val_mse(bundle.spec, weights.data(), bundle.scaler, geoms, spectra);
}

std::vector<double> input_gradient(const ModelBundle& bundle, const Geometry& g,
                                   const Spectrum& target) {
  check_bundle_dims(bundle);
  const int d = bundle.spec.input_dim, l = bundle.spec.output_dim;
  if (static_cast<int>(g.size()) != d) throw DimensionError("input_gradient: geometry size");
  if (static_cast<int>(target.size()) != l) throw DimensionError("input_gradient: target length");

  const VectorXd weights = aligned_weights(bundle.weights);
  Network net(bundle.spec, weights.data());
  Network::Workspace ws;
  Eigen::Map<const VectorXd> gv(g.values.data(), d);
  net.forward(scale_inputs(bundle, gv), ws);

  // dMSE/d(scaled output): chain through the output unscale.
  MatrixXd d_y(l, 1);
  for (int r = 0; r < l; ++r) {
    const double pred = ws.y(r, 0) * bundle.scaler.output_std[r] + bundle.scaler.output_mean[r];
    d_y(r, 0) = 2.0 / static_cast<double>(l) * (pred - target.values[r]) *
                bundle.scaler.output_std[r];
  }
  MatrixXd dx;
  net.backward_inputs(d_y, ws, dx);
  std::vector<double> out(d);
  for (int c = 0; c < d; ++c) {
    out[c] = dx(c, 0) / bundle.scaler.input_std[c];
    if (!std::isfinite(out[c])) throw NumericError("input_gradient: non-finite gradient");
  }
  return out;
}

// --- Persistence ------------------------------------------------------------------

namespace {

std::string encode_doubles_le(const double* p, std::size_t n) {
  std::string out(n * 8, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    uint64_t bits = std::bit_cast<uint64_t>(p[i]);
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    std::memcpy(out.data() + i * 8, &bits, 8);
  }
  return out;
}

std::vector<double> decode_doubles_le(const std::string& raw, std::size_t expect,
                                      const std::string& what) {
  if (raw.size() != expect * 8) {
    throw LoadError(what + ": expected " + std::to_string(expect * 8) + " bytes (" +
                    std::to_string(expect) + " doubles), file has " + std::to_string(raw.size()));
  }
  std::vector<double> out(expect);
  for (std::size_t i = 0; i < expect; ++i) {
    uint64_t bits;
    std::memcpy(&bits, raw.data() + i * 8, 8);
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

json spec_to_json(const ModelSpec& spec) {
  return json{{"family", family_name(spec.family)},
              {"input_dim", spec.input_dim},
              {"output_dim", spec.output_dim},
              {"hidden_dim", spec.hidden_dim},
              {"n_blocks", spec.n_blocks},
              {"se_reduction", spec.se_reduction},
              {"activation", "relu"},
              {"loss", loss_name(spec.loss)},
              {"learning_rate", spec.learning_rate},
              {"epochs", spec.epochs},
              {"batch_size", spec.batch_size},
              {"init_seed", spec.init_seed}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.family = parse_family(j.at("family").get<std::string>());
  spec.input_dim = j.at("input_dim").get<int>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.hidden_dim = j.at("hidden_dim").get<int>();
  spec.n_blocks = j.at("n_blocks").get<int>();
  spec.se_reduction = j.value("se_reduction", 0);
  spec.loss = parse_loss(j.at("loss").get<std::string>());
  spec.learning_rate = j.value("learning_rate", 1e-3);
  spec.epochs = j.value("epochs", 0);
  spec.batch_size = j.value("batch_size", 1);
  spec.init_seed = j.value("init_seed", uint64_t{0});
  return spec;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& dir) {
  check_bundle_dims(bundle);
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json manifest;
  manifest["format"] = "invdes-bundle";
  manifest["format_version"] = kBundleFormatVersion;
  manifest["endianness"] = "little";
  manifest["storage"] = "column-major";
  manifest["spec"] = spec_to_json(bundle.spec);
  manifest["metric"] = metric_to_json(bundle.metric);
  manifest["provenance"] = {{"round", bundle.provenance.round},
                            {"dataset_size", bundle.provenance.dataset_size},
                            {"trained", bundle.provenance.trained}};
  json layers = json::array();
  for (const auto& layer : layer_manifest(bundle.spec)) {
    layers.push_back(
        {{"name", layer.name}, {"rows", layer.rows}, {"cols", layer.cols}, {"count", layer.count()}});
  }
  manifest["layers"] = layers;
  manifest["weight_count"] = bundle.weights.size();

  write_file_atomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  write_file_atomic((fs::path(dir) / "weights.bin").string(),
                    encode_doubles_le(bundle.weights.data(), bundle.weights.size()));
  std::string scaler_raw;
  scaler_raw += encode_doubles_le(bundle.scaler.input_mean.data(), bundle.scaler.input_mean.size());
  scaler_raw += encode_doubles_le(bundle.scaler.input_std.data(), bundle.scaler.input_std.size());
  scaler_raw +=
      encode_doubles_le(bundle.scaler.output_mean.data(), bundle.scaler.output_mean.size());
  scaler_raw += encode_doubles_le(bundle.scaler.output_std.data(), bundle.scaler.output_std.size());
  write_file_atomic((fs::path(dir) / "scaler.bin").string(), scaler_raw);
}

ModelBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  json manifest;
  try {
    manifest = json::parse(read_file((fs::path(dir) / "manifest.json").string()));
  } catch (const json::exception& ex) {
    throw LoadError("bundle manifest is not valid JSON: " + std::string(ex.what()));
  }
  if (manifest.value("format", "") != "invdes-bundle") {
    throw LoadError("not a model bundle: " + dir);
  }
  if (manifest.value("format_version", -1) != kBundleFormatVersion) {
    throw LoadError("unsupported bundle format version " +
                    manifest.value("format_version", json()).dump() + " (expected " +
                    std::to_string(kBundleFormatVersion) + ")");
  }
  if (manifest.value("endianness", "") != "little") {
    throw LoadError("unsupported weight endianness: " + manifest.value("endianness", "?"));
  }

  ModelBundle bundle;
  try {
    bundle.spec = spec_from_json(manifest.at("spec"));
  } catch (const json::exception& ex) {
    throw LoadError("bundle manifest spec is malformed: " + std::string(ex.what()));
  }
  bundle.spec.ensure_valid();

  const std::size_t expect = weight_count(bundle.spec);
  const std::size_t declared = manifest.value("weight_count", std::size_t{0});
  if (declared != expect) {
    throw LoadError("manifest weight_count " + std::to_string(declared) +
                    " does not match spec-implied count " + std::to_string(expect));
  }
  bundle.weights =
      decode_doubles_le(read_file((fs::path(dir) / "weights.bin").string()), expect, "weights.bin");

  const auto d = static_cast<std::size_t>(bundle.spec.input_dim);
  const auto l = static_cast<std::size_t>(bundle.spec.output_dim);
  auto scaler_all = decode_doubles_le(read_file((fs::path(dir) / "scaler.bin").string()),
                                      2 * d + 2 * l, "scaler.bin");
  auto it = scaler_all.begin();
  bundle.scaler.input_mean.assign(it, it + d);
  it += d;
  bundle.scaler.input_std.assign(it, it + d);
  it += d;
  bundle.scaler.output_mean.assign(it, it + l);
  it += l;
  bundle.scaler.output_std.assign(it, it + l);

  bundle.metric = metric_from_json(manifest.value("metric", json("inf")));
  if (manifest.contains("provenance")) {
    const auto& p = manifest["provenance"];
    bundle.provenance.round = p.value("round", -1);
    bundle.provenance.dataset_size = p.value("dataset_size", 0LL);
    bundle.provenance.trained = p.value("trained", false);
  }
  return bundle;
}

}  // namespace invdes
