#include "proxrefl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "proxrefl/errors.hpp"

namespace proxrefl {

SampleStats describe(std::span<const double> values, StdEstimator estimator) {
  SampleStats s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double denom = estimator == StdEstimator::Population ? static_cast<double>(s.n) : static_cast<double>(s.n - 1);
  s.std = denom > 0.0 ? std::sqrt(ss / denom) : 0.0;
  return s;
}

std::string to_string(SignificanceTest t) { return t == SignificanceTest::MannWhitney ? "mann_whitney" : "welch"; }

std::string to_string(Correction c) {
  switch (c) {
    case Correction::None: return "none";
    case Correction::Bonferroni: return "bonferroni";
    case Correction::Holm: return "holm";
  }
  return "none";
}

SignificanceTest parse_significance_test(const std::string& text) {
  if (text == "mann_whitney" || text == "mwu") return SignificanceTest::MannWhitney;
  if (text == "welch") return SignificanceTest::Welch;
  throw UsageError(fmt::format("unknown significance test '{}' (expected mann_whitney or welch)", text));
}

Correction parse_correction(const std::string& text) {
  if (text == "none") return Correction::None;
  if (text == "bonferroni") return Correction::Bonferroni;
  if (text == "holm") return Correction::Holm;
  throw UsageError(fmt::format("unknown correction '{}' (expected none, bonferroni or holm)", text));
}

namespace {

constexpr std::size_t kExactLimit = 60;

// Doubled mid-ranks so tied ranks stay integral.
std::vector<long> doubled_midranks(std::span<const double> pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<long> ranks(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    // ranks i+1 .. j+1 averaged, doubled: (i+1 + j+1)
    const long doubled = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("Mann-Whitney U needs two non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = doubled_midranks(pooled);
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  const std::size_t total = n1 + n2;

  long r1 = 0;
  for (std::size_t i = 0; i < n1; ++i) r1 += ranks[i];
  TestResult result;
  result.statistic = r1 / 2.0 - static_cast<double>(n1 * (n1 + 1)) / 2.0;

  // Doubled expected rank sum of the first sample: n1 (N + 1).
  const long center = static_cast<long>(n1 * (total + 1));
  const long observed_dev = std::labs(r1 - center);

  if (total <= kExactLimit) {
    result.exact = true;
    const long max_sum = std::accumulate(ranks.begin(), ranks.end(), 0L);
    // ways[k][s]: subsets of size k with doubled rank sum s.
    std::vector<std::vector<long double>> ways(n1 + 1, std::vector<long double>(static_cast<std::size_t>(max_sum) + 1));
    ways[0][0] = 1.0L;
    long reach = 0;
    for (std::size_t i = 0; i < total; ++i) {
      const long r = ranks[i];
      reach += r;
      for (std::size_t k = std::min(i + 1, n1); k >= 1; --k) {
        auto& dst = ways[k];
        const auto& src = ways[k - 1];
        for (long s = reach; s >= r; --s) dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
      }
    }
    long double extreme = 0.0L;
    long double all = 0.0L;
    for (long s = 0; s <= max_sum; ++s) {
      const long double w = ways[n1][static_cast<std::size_t>(s)];
      all += w;
      if (std::labs(s - center) >= observed_dev) extreme += w;
    }
    result.p_value = std::min(1.0, static_cast<double>(extreme / all));
    return result;
  }

  // Normal approximation with tie correction.
  std::vector<long> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double nn = static_cast<double>(total);
  const double variance =
      static_cast<double>(n1) * static_cast<double>(n2) / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (!(variance > 0.0)) {
    result.p_value = 1.0;
    return result;
  }
  const double deviation = std::max(0.0, observed_dev / 2.0 - 0.5);
  const double z = deviation / std::sqrt(variance);
  result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return result;
}

TestResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("Welch's t test needs at least 2 values per sample");
  const auto sa = describe(a, StdEstimator::Sample);
  const auto sb = describe(b, StdEstimator::Sample);
  const double va = sa.std * sa.std / sa.n;
  const double vb = sb.std * sb.std / sb.n;
  TestResult result;
  if (va + vb == 0.0) {
    result.p_value = sa.mean == sb.mean ? 1.0 : 0.0;
    result.statistic = sa.mean == sb.mean ? 0.0 : std::copysign(INFINITY, sa.mean - sb.mean);
    return result;
  }
  result.statistic = (sa.mean - sb.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) / (va * va / (sa.n - 1) + vb * vb / (sb.n - 1));
  boost::math::students_t dist(df);
  result.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(result.statistic))));
  return result;
}

const PairEntry& SignificanceMatrix::at(std::size_t row, std::size_t col) const {
  if (row < col) std::swap(row, col);
  for (const auto& e : entries) {
    if (e.row == row && e.col == col) return e;
  }
  throw DomainError(fmt::format("no significance entry for ({}, {})", row, col));
}

SignificanceMatrix significance_matrix(const std::vector<NamedSample>& samples, SignificanceTest test,
                                       Correction correction) {
  if (samples.size() < 2) throw DomainError("a significance matrix needs at least two methods");
  SignificanceMatrix m;
  m.test = test;
  m.correction = correction;
  for (const auto& s : samples) m.methods.push_back(s.method_id);

  std::vector<std::size_t> tested;
  for (std::size_t row = 1; row < samples.size(); ++row) {
    for (std::size_t col = 0; col < row; ++col) {
      PairEntry e{row, col, std::nullopt, {}};
      const auto& a = samples[row].values;
      const auto& b = samples[col].values;
      if (a.size() < 2 || b.size() < 2) {
        e.note = fmt::format("insufficient samples ({} vs {})", a.size(), b.size());
      } else {
        e.p_value = test == SignificanceTest::MannWhitney ? mann_whitney_u(a, b).p_value : welch_t(a, b).p_value;
        tested.push_back(m.entries.size());
      }
      m.entries.push_back(std::move(e));
    }
  }

  const double count = static_cast<double>(tested.size());
  if (correction == Correction::Bonferroni) {
    for (auto idx : tested) m.entries[idx].p_value = std::min(1.0, *m.entries[idx].p_value * count);
  } else if (correction == Correction::Holm) {
    auto order = tested;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return *m.entries[i].p_value < *m.entries[j].p_value; });
    double running = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const double adjusted = std::min(1.0, *m.entries[order[k]].p_value * (count - static_cast<double>(k)));
      running = std::max(running, adjusted);
      m.entries[order[k]].p_value = running;
    }
  }
  return m;
}

std::string significance_label(double p) {
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return fmt::format("{:.3f}", p);
}

}  // namespace proxrefl
