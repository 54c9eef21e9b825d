#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "logicdiff/core.hpp"
#include "logicdiff/labeling.hpp"
#include "logicdiff/rng.hpp"

namespace logicdiff {

// Row-major rows x cols matrix of hidden states.
struct HiddenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  HiddenMatrix() = default;
  HiddenMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<float> row(std::size_t i) { return std::span<float>(data).subspan(i * cols, cols); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data).subspan(i * cols, cols);
  }
  bool operator==(const HiddenMatrix&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

// LayerNorm -> Linear(D, D/4) -> GELU -> Dropout -> Linear(D/4, 5).
// Stored as float32 so a checkpoint round-trip is lossless; arithmetic is
// carried out in double.
struct RoleHeadParams {
  std::size_t dim = 0;
  std::vector<float> ln_gain;  // D
  std::vector<float> ln_bias;  // D
  std::vector<float> w1;       // (D/4) x D
  std::vector<float> b1;       // D/4
  std::vector<float> w2;       // 5 x (D/4)
  std::vector<float> b2;       // 5
  float dropout_rate = 0.1f;

  // Unit gain, all other tensors zero. Throws kShape unless D > 0 and D % 4 == 0.
  static RoleHeadParams zeros(std::size_t dim, float dropout_rate = 0.1f);
  // Xavier-uniform linear layers, unit LayerNorm gain, zero biases.
  static RoleHeadParams initialized(std::size_t dim, Rng& rng, float dropout_rate = 0.1f);

  std::size_t hidden_units() const noexcept { return dim / 4; }
  std::size_t param_count() const noexcept { return param_count_for(dim); }
  static constexpr std::size_t param_count_for(std::size_t d) noexcept {
    return 2 * d + (d / 4) * (d + 1) + kNumRoles * (d / 4 + 1);
  }

  bool operator==(const RoleHeadParams&) const = default;
};

using Logits = std::array<double, kNumRoles>;

// Population variance, eps = 1e-5.
std::vector<double> layer_norm(std::span<const double> h, std::span<const float> gain,
                               std::span<const float> bias);

// Exact (erf) form.
double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

Logits softmax(const Logits& logits) noexcept;

// Dropout is applied only when `training`; it then requires `rng`.
Logits role_head_forward(const RoleHeadParams& params, std::span<const float> h, bool training,
                         Rng* rng = nullptr);

// Ties go to the lowest role id.
Role argmax_role(const Logits& logits) noexcept;
Role predict_role(const RoleHeadParams& params, std::span<const float> h);

// Predictions for the given rows of `hidden`. The parallel version splits
// rows across OpenMP threads; both produce identical output.
std::vector<Role> predict_roles_serial(const RoleHeadParams& params, const HiddenMatrix& hidden,
                                       std::span<const Position> rows);
std::vector<Role> predict_roles(const RoleHeadParams& params, const HiddenMatrix& hidden,
                                std::span<const Position> rows);

struct LossGrad {
  double loss = 0.0;
  Logits grad_logits{};
};

LossGrad weighted_ce_loss(const Logits& logits, Role gold, const ClassWeights& weights) noexcept;

// Gradient buffers, one per parameter tensor.
struct RoleHeadGrads {
  std::vector<double> ln_gain, ln_bias, w1, b1, w2, b2;

  explicit RoleHeadGrads(std::size_t dim = 0);
  void zero();
};

// Intermediate activations kept for the backward pass.
struct ForwardCache {
  std::vector<double> x_hat;     // normalized input
  std::vector<double> ln_out;    // gain * x_hat + bias
  std::vector<double> pre_act;   // W1 y + b1
  std::vector<double> dropped;   // activations after dropout (inputs to W2)
  std::vector<double> drop_scale;  // per-unit multiplier: 0 or 1/(1-p), or 1 at inference
  double inv_std = 0.0;
  Logits logits{};
};

// `keep` selects dropout survivors (1 = keep). Empty `keep` disables dropout.
const Logits& forward_cached(const RoleHeadParams& params, std::span<const float> h,
                             std::span<const std::uint8_t> keep, ForwardCache& cache);
// Accumulates d(loss)/d(params) into `grads`.
void backward(const RoleHeadParams& params, const ForwardCache& cache,
              const Logits& grad_logits, RoleHeadGrads& grads);

// Flat views over parameter tensors in declaration order, for optimizers and
// finite-difference checks.
std::array<std::span<float>, 6> param_tensors(RoleHeadParams& params);
std::array<std::span<double>, 6> grad_tensors(RoleHeadGrads& grads);
inline constexpr std::array<const char*, 6> kTensorNames = {"ln_gain", "ln_bias", "w1",
                                                            "b1",      "w2",      "b2"};

struct LabeledHidden {
  std::size_t dim = 0;
  std::vector<float> features;  // n x dim
  std::vector<Role> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(features).subspan(i * dim, dim);
  }
  void push(std::span<const float> h, Role r);
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double learning_rate = 0.05;
  double momentum = 0.9;
  float dropout_rate = 0.1f;
  double val_fraction = 0.1;
  std::uint64_t rng_seed = 0;
  ClassWeights weights;

  void validate() const;
};

struct TrainResult {
  RoleHeadParams params;
  double val_accuracy = 0.0;
  // NaN for classes absent from the validation split.
  std::array<double, kNumRoles> per_class_recall{};
  // Weighted loss over the training split after each epoch, dropout off.
  std::vector<double> epoch_loss;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

// Mini-batch SGD with momentum on the class-weighted cross entropy. The
// validation split is stratified per class.
TrainResult train_role_head(const LabeledHidden& data, const TrainConfig& cfg);
// Same, starting from caller-supplied parameters.
TrainResult train_role_head(const LabeledHidden& data, const TrainConfig& cfg,
                            RoleHeadParams init);

double accuracy(const RoleHeadParams& params, const LabeledHidden& data);

// Binary checkpoint: "LDRH", u32 version, u32 D, u32 R, then little-endian
// float32 tensors in declaration order followed by the dropout rate.
void save_checkpoint(const RoleHeadParams& params, std::ostream& out);
void save_checkpoint(const RoleHeadParams& params, const std::string& path);
RoleHeadParams load_checkpoint(std::istream& in);
RoleHeadParams load_checkpoint(const std::string& path);

}  // namespace logicdiff
