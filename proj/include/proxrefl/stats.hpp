#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace proxrefl {

enum class StdEstimator { Population, Sample };

struct SampleStats {
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

// Mean and standard deviation; Population divides by n, Sample by n - 1 (0 when n == 1).
SampleStats describe(std::span<const double> values, StdEstimator estimator = StdEstimator::Population);

enum class SignificanceTest { MannWhitney, Welch };
enum class Correction { None, Bonferroni, Holm };

std::string to_string(SignificanceTest t);
std::string to_string(Correction c);
SignificanceTest parse_significance_test(const std::string& text);
Correction parse_correction(const std::string& text);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
};

// Two-sided Mann-Whitney U test. Uses the exact permutation distribution of U
// (mid-ranks for ties) when n1 + n2 <= 60, else the tie-corrected normal
// approximation with continuity correction. All-tied data gives p = 1.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

// Two-sided Welch t test.
TestResult welch_t(std::span<const double> a, std::span<const double> b);

struct NamedSample {
  std::string method_id;
  std::vector<double> values;
};

struct PairEntry {
  std::size_t row = 0;  // row > col
  std::size_t col = 0;
  std::optional<double> p_value;  // nullopt when a sample has fewer than 2 values
  std::string note;
};

struct SignificanceMatrix {
  std::vector<std::string> methods;
  SignificanceTest test = SignificanceTest::MannWhitney;
  Correction correction = Correction::None;
  std::vector<PairEntry> entries;  // lower triangle, row-major

  const PairEntry& at(std::size_t row, std::size_t col) const;
};

SignificanceMatrix significance_matrix(const std::vector<NamedSample>& samples,
                                       SignificanceTest test = SignificanceTest::MannWhitney,
                                       Correction correction = Correction::None);

// "**" for p < 0.01, "*" for p < 0.05, otherwise the value to three decimals.
std::string significance_label(double p);

}  // namespace proxrefl
