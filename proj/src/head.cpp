#include "proxrefl/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "proxrefl/csv.hpp"

namespace proxrefl {

std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::ImageOnly: return "image_only";
    case FusionMode::TextOnly: return "text_only";
    case FusionMode::Add: return "add";
    case FusionMode::Concat: return "concat";
  }
  return "image_only";
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::ReLU;
  if (text == "tanh") return Activation::Tanh;
  throw UsageError(fmt::format("unknown activation '{}' (expected relu or tanh)", text));
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "image_only" || text == "image") return FusionMode::ImageOnly;
  if (text == "text_only" || text == "text") return FusionMode::TextOnly;
  if (text == "add") return FusionMode::Add;
  if (text == "concat") return FusionMode::Concat;
  throw UsageError(fmt::format("unknown fusion mode '{}' (expected image_only, text_only, add or concat)", text));
}

HeadParams HeadParams::zeros(std::size_t input_dim, std::size_t hidden_units) {
  HeadParams p;
  p.input_dim = input_dim;
  p.hidden_units = hidden_units;
  p.w_hidden.assign(input_dim * hidden_units, 0.0);
  p.b_hidden.assign(hidden_units, 0.0);
  p.w_out.assign(hidden_units, 0.0);
  return p;
}

HeadParams HeadParams::random(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed) {
  auto p = zeros(input_dim, hidden_units);
  std::mt19937_64 rng(seed);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_units));
  std::uniform_real_distribution<double> first(-bound1, bound1);
  std::uniform_real_distribution<double> second(-bound2, bound2);
  for (auto& w : p.w_hidden) w = first(rng);
  for (auto& b : p.b_hidden) b = first(rng);
  for (auto& w : p.w_out) w = second(rng);
  p.b_out = second(rng);
  return p;
}

double& HeadParams::at(std::size_t i) {
  if (i < w_hidden.size()) return w_hidden[i];
  i -= w_hidden.size();
  if (i < b_hidden.size()) return b_hidden[i];
  i -= b_hidden.size();
  if (i < w_out.size()) return w_out[i];
  i -= w_out.size();
  if (i == 0) return b_out;
  throw DomainError("parameter index out of range");
}

double HeadParams::at(std::size_t i) const { return const_cast<HeadParams&>(*this).at(i); }

bool HeadParams::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(w_hidden) && finite(b_hidden) && finite(w_out) && std::isfinite(b_out);
}

namespace {

double activate(double z, Activation act) { return act == Activation::ReLU ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

// Derivative expressed through the pre-activation.
double activate_grad(double z, Activation act) {
  if (act == Activation::ReLU) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

void check_dim(const HeadParams& params, std::size_t dim) {
  if (dim != params.input_dim) {
    throw DomainError(fmt::format("input has dimension {}, head expects {}", dim, params.input_dim));
  }
}

// Pre-activations into `pre`, returns the raw output.
double forward_into(const HeadParams& p, std::span<const double> x, Activation act, std::vector<double>& pre) {
  pre.resize(p.hidden_units);
  double out = p.b_out;
  for (std::size_t j = 0; j < p.hidden_units; ++j) {
    const double* row = p.w_hidden.data() + j * p.input_dim;
    double z = p.b_hidden[j];
    for (std::size_t k = 0; k < p.input_dim; ++k) z += row[k] * x[k];
    pre[j] = z;
    out += p.w_out[j] * activate(z, act);
  }
  return out;
}

}  // namespace

double head_forward(const HeadParams& params, std::span<const double> x, Activation act) {
  check_dim(params, x.size());
  std::vector<double> pre;
  return forward_into(params, x, act, pre);
}

double head_estimate(const HeadParams& params, std::span<const double> x, Activation act) {
  return std::clamp(head_forward(params, x, act), 0.0, 1.0);
}

double mse_loss(std::span<const double> preds, std::span<const double> targets) {
  if (preds.empty()) throw DomainError("mse_loss needs at least one prediction");
  if (preds.size() != targets.size()) {
    throw DomainError(fmt::format("mse_loss got {} predictions and {} targets", preds.size(), targets.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(preds.size());
}

namespace {

void check_batch(const HeadParams& params, const Batch& batch) {
  if (batch.inputs.empty()) throw DomainError("batch is empty");
  if (batch.inputs.size() != batch.targets.size()) {
    throw DomainError(fmt::format("batch has {} inputs but {} targets", batch.inputs.size(), batch.targets.size()));
  }
  for (const auto& x : batch.inputs) check_dim(params, x.size());
}

double batch_loss(const HeadParams& params, const Batch& batch, Activation act) {
  std::vector<double> pre;
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const double d = forward_into(params, batch.inputs[i], act, pre) - batch.targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(batch.inputs.size());
}

// Accumulates the gradient of the MSE over `indices` into `grad` (which must be zeroed).
double accumulate_gradient(const HeadParams& p, const Batch& batch, std::span<const std::size_t> indices,
                           Activation act, HeadParams& grad) {
  std::vector<double> pre;
  const double scale = 2.0 / static_cast<double>(indices.size());
  double sum = 0.0;
  for (std::size_t idx : indices) {
    const auto& x = batch.inputs[idx];
    const double err = forward_into(p, x, act, pre) - batch.targets[idx];
    sum += err * err;
    const double dy = scale * err;
    grad.b_out += dy;
    for (std::size_t j = 0; j < p.hidden_units; ++j) {
      grad.w_out[j] += dy * activate(pre[j], act);
      const double dz = dy * p.w_out[j] * activate_grad(pre[j], act);
      if (dz == 0.0) continue;
      grad.b_hidden[j] += dz;
      double* row = grad.w_hidden.data() + j * p.input_dim;
      for (std::size_t k = 0; k < p.input_dim; ++k) row[k] += dz * x[k];
    }
  }
  return sum / static_cast<double>(indices.size());
}

}  // namespace

LossAndGradient loss_and_gradient(const HeadParams& params, const Batch& batch, Activation act) {
  check_batch(params, batch);
  LossAndGradient out{0.0, HeadParams::zeros(params.input_dim, params.hidden_units)};
  std::vector<std::size_t> all(batch.inputs.size());
  std::iota(all.begin(), all.end(), 0);
  out.loss = accumulate_gradient(params, batch, all, act, out.gradient);
  return out;
}

double gradient_check(const HeadParams& params, const Batch& batch, Activation act, GradientCheckOptions options) {
  return gradient_check(params, batch, loss_and_gradient(params, batch, act).gradient, act, options);
}

double gradient_check(const HeadParams& params, const Batch& batch, const HeadParams& analytic, Activation act,
                      GradientCheckOptions options) {
  check_batch(params, batch);
  if (analytic.parameter_count() != params.parameter_count()) {
    throw DomainError("analytic gradient does not match the parameter layout");
  }
  HeadParams probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.parameter_count(); ++i) {
    const double original = probe.at(i);
    probe.at(i) = original + options.step;
    const double up = batch_loss(probe, batch, act);
    probe.at(i) = original - options.step;
    const double down = batch_loss(probe, batch, act);
    probe.at(i) = original;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic.at(i);
    const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw UsageError(fmt::format("epochs must be >= 0, got {}", epochs));
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
  if (!(lr_floor >= 0.0)) throw UsageError("learning-rate floor must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw UsageError("Adam epsilon must be > 0");
  if (hidden_units == 0) throw UsageError("hidden_units must be >= 1");
}

double cosine_learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.epochs <= 1) return cfg.learning_rate;
  if (epoch >= cfg.epochs - 1) return cfg.lr_floor;
  const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_floor + (cfg.learning_rate - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train_head(const Batch& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.inputs.empty()) throw UsageError("training needs at least one example");
  const std::size_t dim = data.inputs.front().size();
  if (dim == 0) throw DomainError("training inputs have dimension 0");

  TrainResult result;
  result.params = HeadParams::random(dim, cfg.hidden_units, cfg.seed);
  check_batch(result.params, data);
  if (cfg.epochs == 0) return result;

  auto& p = result.params;
  const std::size_t n = data.inputs.size();
  const std::size_t batch_size = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  const std::size_t count = p.parameter_count();
  std::vector<double> m1(count, 0.0);
  std::vector<double> m2(count, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Separate stream from the initialiser so that changing the batch size does not change the init.
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  double best = std::numeric_limits<double>::infinity();
  long long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_learning_rate(cfg, epoch);
    if (batch_size < n) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(start + batch_size, n);
      auto grad = HeadParams::zeros(p.input_dim, p.hidden_units);
      accumulate_gradient(p, data, std::span<const std::size_t>(order).subspan(start, stop - start), cfg.activation,
                          grad);
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < count; ++i) {
        const double g = grad.at(i);
        m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
        m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
        p.at(i) -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.epsilon);
      }
    }
    const double loss = batch_loss(p, data, cfg.activation);
    if (!std::isfinite(loss) || !p.all_finite()) {
      throw DivergenceError(fmt::format("training diverged at epoch {} (loss {})", epoch, loss), epoch);
    }
    result.history.push_back({epoch, lr, loss});
    if (cfg.keep_best && loss < best) {
      best = loss;
      result.best_params = p;
      result.best_epoch = epoch;
    }
  }
  return result;
}

std::size_t fused_dim(std::size_t image_dim, std::size_t text_dim, FusionMode mode) {
  switch (mode) {
    case FusionMode::ImageOnly: return image_dim;
    case FusionMode::TextOnly: return text_dim;
    case FusionMode::Add:
      if (image_dim != text_dim) {
        throw DomainError(fmt::format("add fusion needs equal dims, got {} and {}", image_dim, text_dim));
      }
      return image_dim;
    case FusionMode::Concat: return image_dim + text_dim;
  }
  return image_dim;
}

std::vector<double> fuse(std::span<const double> image, std::span<const double> text, FusionMode mode) {
  fused_dim(image.size(), text.size(), mode);
  switch (mode) {
    case FusionMode::ImageOnly: return {image.begin(), image.end()};
    case FusionMode::TextOnly: return {text.begin(), text.end()};
    case FusionMode::Add: {
      std::vector<double> out(image.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = image[i] + text[i];
      return out;
    }
    case FusionMode::Concat: {
      std::vector<double> out(image.begin(), image.end());
      out.insert(out.end(), text.begin(), text.end());
      return out;
    }
  }
  return {};
}

std::vector<FusedSample> fused_samples(const Manifest& manifest, const std::vector<const ObjectRecord*>& objects,
                                       FusionMode mode) {
  std::map<std::string, std::vector<const EmbeddingVector*>> images;
  std::map<std::string, const EmbeddingVector*> texts;
  for (const auto& e : manifest.embeddings) {
    if (e.modality == Modality::Image) {
      images[e.object_id].push_back(&e);
    } else if (e.view_index == 0) {
      texts[e.object_id] = &e;
    }
  }
  const bool need_image = mode != FusionMode::TextOnly;
  const bool need_text = mode != FusionMode::ImageOnly;

  std::vector<FusedSample> out;
  std::vector<std::string> missing;
  for (const auto* obj : objects) {
    const auto img_it = images.find(obj->object_id);
    const auto txt_it = texts.find(obj->object_id);
    if (need_image && img_it == images.end()) {
      missing.push_back(fmt::format("'{}' has no image embeddings", obj->object_id));
      continue;
    }
    if (need_text && txt_it == texts.end()) {
      missing.push_back(fmt::format("'{}' has no text embedding (view 0)", obj->object_id));
      continue;
    }
    if (!need_image) {
      out.push_back({obj->object_id, 0, txt_it->second->values});
      continue;
    }
    const std::vector<double> empty;
    for (const auto* view : img_it->second) {
      const auto& text = need_text ? txt_it->second->values : empty;
      out.push_back({obj->object_id, view->view_index, fuse(view->values, text, mode)});
    }
  }
  if (!missing.empty()) throw DataError("embeddings required by the fusion mode are missing", std::move(missing));
  return out;
}

Batch training_batch(const Manifest& manifest, Split split, FusionMode mode) {
  const auto objects = manifest.objects_in(split);
  std::vector<std::string> unlabeled;
  for (const auto* o : objects) {
    if (!o->true_alpha) unlabeled.push_back(fmt::format("'{}' has no true_alpha", o->object_id));
  }
  if (!unlabeled.empty()) throw DataError("training objects must be calibrated", std::move(unlabeled));
  Batch batch;
  for (auto& s : fused_samples(manifest, objects, mode)) {
    batch.targets.push_back(manifest.find(s.object_id)->true_alpha->value());
    batch.inputs.push_back(std::move(s.input));
  }
  return batch;
}

namespace {

constexpr const char* kHeadMagic = "proxrefl-head";
constexpr int kHeadFormatVersion = 1;

void write_row(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += csv::format_double(values[i]);
  }
  out += '\n';
}

}  // namespace

void save_head(const TrainedHead& head, const std::filesystem::path& path) {
  const auto& p = head.params;
  std::string out = fmt::format("{} {}\ninput_dim {}\nhidden_units {}\nactivation {}\nfusion {}\n", kHeadMagic,
                                kHeadFormatVersion, p.input_dim, p.hidden_units, to_string(head.activation),
                                to_string(head.fusion));
  out += "w_hidden\n";
  for (std::size_t j = 0; j < p.hidden_units; ++j) {
    write_row(out, std::span<const double>(p.w_hidden).subspan(j * p.input_dim, p.input_dim));
  }
  out += "b_hidden\n";
  write_row(out, p.b_hidden);
  out += "w_out\n";
  write_row(out, p.w_out);
  out += "b_out\n";
  out += csv::format_double(p.b_out) + "\n";
  csv::write_file_atomic(path, out);
}

TrainedHead load_head(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open head file '{}'", path.string()));
  const auto ctx = path.string();
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kHeadMagic || version != kHeadFormatVersion) {
    throw DataError(fmt::format("'{}' is not a version-{} head file", ctx, kHeadFormatVersion));
  }
  auto expect_key = [&](const char* key) {
    std::string word;
    in >> word;
    if (word != key) throw DataError(fmt::format("'{}': expected '{}', found '{}'", ctx, key, word));
  };
  TrainedHead head;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::string act;
  std::string fusion;
  expect_key("input_dim");
  in >> input_dim;
  expect_key("hidden_units");
  in >> hidden;
  expect_key("activation");
  in >> act;
  expect_key("fusion");
  in >> fusion;
  if (!in || input_dim == 0 || hidden == 0) throw DataError(fmt::format("'{}': malformed header", ctx));
  try {
    head.activation = parse_activation(act);
    head.fusion = parse_fusion_mode(fusion);
  } catch (const UsageError& e) {
    throw DataError(fmt::format("'{}': {}", ctx, e.what()));
  }
  head.params = HeadParams::zeros(input_dim, hidden);
  auto read_values = [&](std::vector<double>& dst, const char* key) {
    expect_key(key);
    for (auto& v : dst) {
      std::string token;
      in >> token;
      v = csv::parse_double(token, ctx + " " + key);
    }
  };
  read_values(head.params.w_hidden, "w_hidden");
  read_values(head.params.b_hidden, "b_hidden");
  read_values(head.params.w_out, "w_out");
  std::vector<double> bias(1);
  read_values(bias, "b_out");
  head.params.b_out = bias[0];
  if (!head.params.all_finite()) throw DataError(fmt::format("'{}': non-finite parameter", ctx));
  return head;
}

void save_loss_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::string out = "epoch,learning_rate,loss\n";
  for (const auto& r : history) {
    out += fmt::format("{},{},{}\n", r.epoch, csv::format_double(r.learning_rate), csv::format_double(r.loss));
  }
  csv::write_file_atomic(path, out);
}

double categorical_expectation(std::span<const double> likelihoods, std::span<const double> category_alphas) {
  if (likelihoods.empty() || likelihoods.size() != category_alphas.size()) {
    throw DomainError(fmt::format("categorical expectation needs equal, non-zero lengths (got {} and {})",
                                  likelihoods.size(), category_alphas.size()));
  }
  double total = 0.0;
  double expectation = 0.0;
  for (std::size_t k = 0; k < likelihoods.size(); ++k) {
    if (!(likelihoods[k] >= 0.0) || !std::isfinite(likelihoods[k])) {
      throw DomainError(fmt::format("likelihood {} is negative or non-finite", k));
    }
    total += likelihoods[k];
    expectation += likelihoods[k] * category_alphas[k];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError(fmt::format("likelihoods sum to {}, not 1", total));
  }
  return expectation;
}

}  // namespace proxrefl
