#include "proxrefl/categorical.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace proxrefl {

CategoricalModel CategoricalModel::fit(const Manifest& manifest, FusionMode fusion, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("categorical temperature must be > 0");
  CategoricalModel model;
  model.temperature = temperature;
  model.fusion = fusion;

  std::vector<const ObjectRecord*> train;
  for (const auto* o : manifest.objects_in(Split::Train)) {
    if (o->true_alpha) train.push_back(o);
  }
  if (train.empty()) throw DataError("categorical baseline needs train objects with true_alpha");

  std::map<Category, std::pair<double, int>> alpha_sums;
  for (const auto* o : train) {
    auto& [sum, n] = alpha_sums[o->category];
    sum += o->true_alpha->value();
    ++n;
  }
  std::map<std::string, Category> category_of;
  for (const auto* o : train) category_of[o->object_id] = o->category;

  std::map<Category, std::pair<std::vector<double>, int>> centroid_sums;
  for (const auto& s : fused_samples(manifest, train, fusion)) {
    auto& [sum, n] = centroid_sums[category_of.at(s.object_id)];
    if (sum.empty()) sum.assign(s.input.size(), 0.0);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += s.input[i];
    ++n;
  }
  for (const auto& [cat, acc] : alpha_sums) {
    model.categories.push_back(cat);
    model.alphas.push_back(acc.first / acc.second);
    auto centroid = centroid_sums.at(cat).first;
    for (auto& v : centroid) v /= centroid_sums.at(cat).second;
    model.centroids.push_back(std::move(centroid));
  }
  return model;
}

std::vector<double> CategoricalModel::likelihoods(std::span<const double> x) const {
  std::vector<double> logits(centroids.size());
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    if (centroids[k].size() != x.size()) {
      throw DomainError(fmt::format("input has dim {}, centroids have {}", x.size(), centroids[k].size()));
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - centroids[k][i]) * (x[i] - centroids[k][i]);
    logits[k] = -d2 / (static_cast<double>(x.size()) * temperature);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  for (auto& l : logits) l /= total;
  return logits;
}

double CategoricalModel::estimate(std::span<const double> x) const {
  return categorical_expectation(likelihoods(x), alphas);
}

}  // namespace proxrefl
