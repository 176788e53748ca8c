#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "invdes/domain.hpp"

namespace invdes {

enum class ModelFamily { plain_mlp, residual_mlp, se_residual_mlp };
enum class LossKind { mse, smooth_l1 };

std::string family_name(ModelFamily f);
std::string loss_name(LossKind k);
ModelFamily parse_family(const std::string& s);  // throws ValidationError
LossKind parse_loss(const std::string& s);

// Architecture plus training hyperparameters of one surrogate model.
// Activation is ReLU throughout.
struct ModelSpec {
  ModelFamily family = ModelFamily::plain_mlp;
  int input_dim = 0;
  int output_dim = 0;
  int hidden_dim = 0;
  int n_blocks = 0;
  int se_reduction = 0;  // se_residual_mlp only; must divide hidden_dim
  LossKind loss = LossKind::mse;
  double learning_rate = 1e-3;
  int epochs = 150;
  int batch_size = 128;
  uint64_t init_seed = 0;

  std::vector<std::string> validate() const;  // empty when valid
  void ensure_valid() const;                  // throws ValidationError listing violations

  // Stable identifier of the (family, dims, loss) triple,
  // e.g. "se-residual-mlp-h256-b4-r16-mse".
  std::string id() const;
};

// Per-feature standardization parameters, fit on training pairs only.
// Standard deviations are floored at 1e-8.
struct ScalerParams {
  std::vector<double> input_mean, input_std;
  std::vector<double> output_mean, output_std;
};

inline constexpr double kScalerStdFloor = 1e-8;

ScalerParams fit_scaler(const Dataset& data);  // throws InsufficientDataError for < 2 train pairs

std::vector<double> apply_scaler(const std::vector<double>& x, const std::vector<double>& mean,
                                 const std::vector<double>& std);
std::vector<double> invert_scaler(const std::vector<double>& x, const std::vector<double>& mean,
                                  const std::vector<double>& std);

// A trained (or freshly initialized) surrogate: spec, flat weight array in
// manifest order, scaler, and the validation MSE it achieved.
struct ModelBundle {
  struct Provenance {
    int round = -1;
    long long dataset_size = 0;
    bool trained = false;
  };

  ModelSpec spec;
  std::vector<double> weights;
  ScalerParams scaler;
  double metric = std::numeric_limits<double>::infinity();
  Provenance provenance;
};

// One entry of the flat-weight layout. Bias entries have cols == 1. Matrices
// are stored column-major.
struct LayerInfo {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
};

std::vector<LayerInfo> layer_manifest(const ModelSpec& spec);
std::size_t weight_count(const ModelSpec& spec);

// Fast forward/backward passes over a flat weight array. Operates in scaled
// space on column batches; the bundle-level helpers below add the scaler
// chain. Non-owning: weights must outlive the view.
class Network {
 public:
  Network(const ModelSpec& spec, const double* weights);

  struct Workspace {
    Eigen::MatrixXd x;                         // scaled input, D x B
    std::vector<Eigen::MatrixXd> block_in;     // activation entering each block
    std::vector<Eigen::MatrixXd> z1_mask, u;   // first linear: relu mask, output
    std::vector<Eigen::MatrixXd> t;            // block body output, pre-gate
    std::vector<Eigen::MatrixXd> se_s1, se_mask, se_gate;
    std::vector<Eigen::MatrixXd> out_mask;     // relu mask of the block output
    Eigen::MatrixXd hidden;                    // activation entering the output layer
    Eigen::MatrixXd y;                         // scaled output, L x B
    // scratch for backward
    Eigen::MatrixXd d_a, d_t, d_u, d_z1, d_p1, d_p2, d_s1;
  };

  // Full pass: fills ws.y (and all intermediates).
  void forward(const Eigen::Ref<const Eigen::MatrixXd>& x, Workspace& ws) const;
  // Same but stops at ws.hidden, skipping the output layer.
  void forward_hidden(const Eigen::Ref<const Eigen::MatrixXd>& x, Workspace& ws) const;

  // d_y is dLoss/d(scaled output). Fills dx = dLoss/d(scaled input).
  void backward_inputs(const Eigen::Ref<const Eigen::MatrixXd>& d_y, Workspace& ws,
                       Eigen::MatrixXd& dx) const;
  // As backward_inputs but the gradient arrives at ws.hidden (the caller has
  // folded the output layer into it); the output layer is skipped.
  void backward_from_hidden(const Eigen::Ref<const Eigen::MatrixXd>& d_hidden, Workspace& ws,
                            Eigen::MatrixXd& dx) const;
  // Accumulates dLoss/dW into grad (layout of layer_manifest) and returns
  // dLoss/d(scaled input) via dx if non-null.
  void backward_weights(const Eigen::Ref<const Eigen::MatrixXd>& d_y, Workspace& ws, double* grad,
                        Eigen::MatrixXd* dx = nullptr) const;

  Eigen::Map<const Eigen::MatrixXd> output_weight() const;
  Eigen::Map<const Eigen::VectorXd> output_bias() const;
  Eigen::Map<const Eigen::MatrixXd> input_weight() const;
  Eigen::Map<const Eigen::VectorXd> input_bias() const;

 private:
  const ModelSpec& spec_;
  const double* w_;
  std::vector<LayerInfo> layers_;
  std::size_t layer_offset(const std::string& name) const;
  const double* ptr(std::size_t i) const { return w_ + layers_[i].offset; }

  void run_forward(const Eigen::Ref<const Eigen::MatrixXd>& x, Workspace& ws,
                   bool with_output) const;
  void run_backward(Workspace& ws, double* grad, Eigen::MatrixXd* dx) const;
};

// Deterministically initialized, untrained bundle (identity scaler).
ModelBundle build_model(const ModelSpec& spec);

Spectrum predict(const ModelBundle& bundle, const Geometry& g);
// Column-batched prediction: geoms is D x N, result is L x N, unscaled.
Eigen::MatrixXd predict_batch(const ModelBundle& bundle, const Eigen::Ref<const Eigen::MatrixXd>& geoms);

// Mean per-element loss between two equal-length spectra.
// smooth-l1 uses beta = 1: 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise.
double loss(const Spectrum& pred, const Spectrum& truth, LossKind kind);

// Adam training over mini-batches with early stopping on the validation MSE
// (patience 20 epochs, minimum improvement 1e-6); returns the best-validation
// weights. The gradient path sees training pairs only. The reported metric is
// MSE in un-scaled spectrum units.
ModelBundle train(const ModelSpec& spec, const Dataset& data);

// Validation-split MSE of the bundle on data, un-scaled units.
double evaluate(const ModelBundle& bundle, const Dataset& data);

// Exact reverse-mode gradient of MSE(predict(g), target) with respect to g,
// including the scaler chain rule.
std::vector<double> input_gradient(const ModelBundle& bundle, const Geometry& g,
                                   const Spectrum& target);

// --- Bundle directory format ----------------------------------------------------
//
// <dir>/manifest.json  - spec, layer ordering with per-layer counts, format
//                        version, endianness tag, metric, provenance
// <dir>/weights.bin    - little-endian 64-bit floats in manifest order
// <dir>/scaler.bin     - input_mean, input_std, output_mean, output_std,
//                        same encoding

void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

inline constexpr int kBundleFormatVersion = 1;

}  // namespace invdes
