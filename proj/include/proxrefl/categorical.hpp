#pragma once

// Category-likelihood baseline: alpha_hat = sum_k p_k * alpha_k where alpha_k is
// the mean training reflectance of category k and p_k comes from a softmax over
// negative squared distances to per-category embedding centroids.

#include <span>
#include <vector>

#include "proxrefl/dataset.hpp"
#include "proxrefl/head.hpp"

namespace proxrefl {

struct CategoricalModel {
  std::vector<Category> categories;
  std::vector<double> alphas;
  std::vector<std::vector<double>> centroids;
  // Softmax temperature on squared distance divided by the embedding dimension.
  double temperature = 0.05;
  FusionMode fusion = FusionMode::ImageOnly;

  // Uses train-split objects with true_alpha; categories without any are left out.
  static CategoricalModel fit(const Manifest& manifest, FusionMode fusion = FusionMode::ImageOnly,
                              double temperature = 0.05);

  std::vector<double> likelihoods(std::span<const double> x) const;
  double estimate(std::span<const double> x) const;
};

}  // namespace proxrefl
