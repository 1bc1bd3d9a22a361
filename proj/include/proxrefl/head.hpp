#pragma once

// Regression head over frozen, precomputed embeddings:
//
//   alpha_hat = w_out . act(W_hidden x + b_hidden) + b_out
//
// trained with MSE, Adam and a cosine-annealed learning rate.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proxrefl/dataset.hpp"
#include "proxrefl/errors.hpp"

namespace proxrefl {

enum class Activation { ReLU, Tanh };
enum class FusionMode { ImageOnly, TextOnly, Add, Concat };

std::string to_string(Activation a);
std::string to_string(FusionMode m);
Activation parse_activation(const std::string& text);
FusionMode parse_fusion_mode(const std::string& text);

inline constexpr std::size_t kDefaultHiddenUnits = 32;

struct HeadParams {
  std::size_t input_dim = 0;
  std::size_t hidden_units = 0;
  std::vector<double> w_hidden;  // hidden_units x input_dim, row-major
  std::vector<double> b_hidden;  // hidden_units
  std::vector<double> w_out;     // hidden_units
  double b_out = 0.0;

  static HeadParams zeros(std::size_t input_dim, std::size_t hidden_units = kDefaultHiddenUnits);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias of each layer.
  static HeadParams random(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed);

  std::size_t parameter_count() const noexcept { return w_hidden.size() + b_hidden.size() + w_out.size() + 1; }
  // Flat view order: w_hidden, b_hidden, w_out, b_out.
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;

  bool all_finite() const;
  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

// Raw (unclamped) head output. Throws DomainError on dimension mismatch.
double head_forward(const HeadParams& params, std::span<const double> x, Activation act = Activation::ReLU);

// Estimator query: head output clamped to [0, 1].
double head_estimate(const HeadParams& params, std::span<const double> x, Activation act = Activation::ReLU);

double mse_loss(std::span<const double> preds, std::span<const double> targets);

struct Batch {
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
};

struct LossAndGradient {
  double loss = 0.0;
  HeadParams gradient;
};

// MSE over the batch and its exact gradient with respect to every parameter.
LossAndGradient loss_and_gradient(const HeadParams& params, const Batch& batch, Activation act = Activation::ReLU);

struct GradientCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-6;
};

// Largest relative discrepancy between the analytic gradient and central finite
// differences over every parameter.
double gradient_check(const HeadParams& params, const Batch& batch, Activation act = Activation::ReLU,
                      GradientCheckOptions options = {});
// Same comparison against a caller-supplied gradient (for negative controls).
double gradient_check(const HeadParams& params, const Batch& batch, const HeadParams& analytic,
                      Activation act = Activation::ReLU, GradientCheckOptions options = {});

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_floor = 0.0;
  int epochs = 200;
  std::size_t batch_size = 0;  // 0 = full batch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t hidden_units = kDefaultHiddenUnits;
  Activation activation = Activation::ReLU;
  bool keep_best = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Learning rate for an epoch: floor + (lr - floor) * (1 + cos(pi * epoch / (epochs - 1))) / 2,
// so the first epoch uses `learning_rate` and the last uses `lr_floor`.
double cosine_learning_rate(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;  // full training-set MSE after the epoch's updates
};

struct TrainResult {
  HeadParams params;
  std::vector<EpochRecord> history;
  std::optional<HeadParams> best_params;
  int best_epoch = -1;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, int epoch) : Error(ErrorKind::Convergence, message), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Deterministic for a fixed (cfg.seed, batch).
TrainResult train_head(const Batch& data, const TrainConfig& cfg);

// image_only / text_only pass one input through; add needs equal dims; concat appends.
std::vector<double> fuse(std::span<const double> image, std::span<const double> text, FusionMode mode);

// Input dimension produced by `fuse` for the given encoder dims.
std::size_t fused_dim(std::size_t image_dim, std::size_t text_dim, FusionMode mode);

struct FusedSample {
  std::string object_id;
  int view_index = 0;
  std::vector<double> input;
};

// One sample per image view (sharing the object's text vector when fused), or one
// per object for text_only. Objects without the needed embeddings raise DataError.
std::vector<FusedSample> fused_samples(const Manifest& manifest, const std::vector<const ObjectRecord*>& objects,
                                       FusionMode mode);

// Training pairs for the given split; every object must have a true_alpha.
Batch training_batch(const Manifest& manifest, Split split, FusionMode mode);

struct TrainedHead {
  HeadParams params;
  Activation activation = Activation::ReLU;
  FusionMode fusion = FusionMode::ImageOnly;
};

void save_head(const TrainedHead& head, const std::filesystem::path& path);
TrainedHead load_head(const std::filesystem::path& path);

void save_loss_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

// Likelihood-weighted reflectance: sum_k p_k alpha_k. Likelihoods must be
// non-negative and sum to 1 within 1e-9.
double categorical_expectation(std::span<const double> likelihoods, std::span<const double> category_alphas);

}  // namespace proxrefl
