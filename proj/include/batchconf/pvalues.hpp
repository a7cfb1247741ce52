#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchconf/combinatorics.hpp"

namespace batchconf {

enum class PValueMethod {
  kBatch,
  kMultiQuantile,
  kSubsampling,
  kPermutation,
  kRankSum,
  kZTest,
  kTTest,
};

std::string_view MethodName(PValueMethod method);

struct PValueRecord {
  std::string group_id;
  PValueMethod method = PValueMethod::kBatch;
  // One rank for batch, two for multi-quantile, the drawn index for
  // subsampling; empty where no rank applies.
  std::vector<std::int64_t> eta_used;
  double statistic = 0.0;
  double p = 1.0;
};

struct BatchOptions {
  // With ties the indicator form is still evaluated, which only makes p larger.
  bool allow_ties = false;
  // Optional memo shared across calls.
  WeightCache* cache = nullptr;
};

// `reference` must be ascending. Large comparison scores are evidence against
// the null.
PValueRecord BatchConformalPValue(std::span<const double> reference,
                                  std::span<const double> comparison, std::int64_t eta,
                                  const BatchOptions& options = {});

// Two-sample convenience: unsorted reference, eta = ceil(q * m).
PValueRecord TwoSampleBatchPValue(std::vector<double> reference,
                                  std::span<const double> comparison, double q,
                                  const BatchOptions& options = {});

// Two-quantile p-value with reference ranks ScaledRank(eta, m, n).
PValueRecord MultiQuantilePValue(std::span<const double> reference,
                                 std::span<const double> comparison, std::int64_t eta1,
                                 std::int64_t eta2, const BatchOptions& options = {});

PValueRecord SubsamplingPValue(std::span<const double> reference,
                               std::span<const double> comparison, std::uint64_t seed);

struct PermutationStatistic {
  enum class Kind { kMeanDiff, kQuantileDiff };
  Kind kind = Kind::kMeanDiff;
  double tau = 0.5;

  // "mean-diff" or "quantile-diff"; throws std::invalid_argument otherwise.
  static PermutationStatistic Parse(std::string_view name, double tau = 0.5);
  // stat(comparison) - stat(reference).
  double Evaluate(std::span<const double> reference, std::span<const double> comparison) const;
};

// pooled = reference block (first n) followed by the comparison block.
PValueRecord PermutationPValue(std::span<const double> pooled, std::size_t n,
                               const PermutationStatistic& statistic, std::int64_t permutations,
                               std::uint64_t seed);

enum class RankSumMode { kExact, kNormal };

// Exact mode is limited to n * m <= kRankSumExactLimit.
inline constexpr std::int64_t kRankSumExactLimit = 10000;

// U counts pairs with reference > comparison (ties count 1/2); p = P(U' <= U).
PValueRecord RankSumPValue(std::span<const double> reference, std::span<const double> comparison,
                           RankSumMode mode);

// cdf[u] = P(U <= u) for the Mann-Whitney count with sizes (n, m).
std::vector<double> RankSumExactCdf(std::int64_t n, std::int64_t m);

PValueRecord ZTestPValue(std::span<const double> reference, std::span<const double> comparison,
                         double sigma);

// z-test with sigma replaced by the pooled sample standard deviation.
PValueRecord TTestPValue(std::span<const double> reference, std::span<const double> comparison);

double NormalCdf(double x);

}  // namespace batchconf
