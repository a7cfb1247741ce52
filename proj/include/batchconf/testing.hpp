#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "batchconf/combinatorics.hpp"
#include "batchconf/pvalues.hpp"
#include "batchconf/scores.hpp"

namespace batchconf {

struct BHOutcome {
  double alpha = 0.0;
  std::size_t k_star = 0;
  // p_(k*) when k* >= 1, otherwise 0.
  double threshold = 0.0;
  // Indices into the input p-value vector, ascending.
  std::vector<std::size_t> rejected;
  std::vector<double> sorted_pvalues;
  std::vector<bool> decisions;
};

BHOutcome BenjaminiHochberg(std::span<const double> pvalues, double alpha);

// How eta_k is chosen from the group size n_k.
struct QuantileRule {
  enum class Kind { kRank, kCeil, kFloor };
  Kind kind = Kind::kCeil;
  double value = 0.5;

  // Throws std::domain_error when the rule yields a rank outside [1, n_k];
  // floor rules that hit 0 are raised to 1.
  std::int64_t EtaFor(std::int64_t group_size) const;
  static QuantileRule Rank(std::int64_t eta) { return {Kind::kRank, static_cast<double>(eta)}; }
  static QuantileRule Ceil(double q) { return {Kind::kCeil, q}; }
  static QuantileRule Floor(double q) { return {Kind::kFloor, q}; }
  // "rank", "q-ceil" or "q-floor".
  static QuantileRule Parse(std::string_view kind, double value);
  std::string KindName() const;
};

struct DetectionResult {
  std::vector<PValueRecord> pvalues;
  BHOutcome bh;
};

struct DetectOptions {
  WeightCache* cache = nullptr;
  int workers = 1;
};

// Batch conformal p-values from already-scored data, then BH. `rules` holds
// either one rule for every group or one per group.
DetectionResult BatchDetect(const ScoreSet& scores, std::span<const QuantileRule> rules,
                            double alpha, const DetectOptions& options = {});

DetectionResult BatchDetect(const SampleGroup& reference, const std::vector<SampleGroup>& groups,
                            const ScoreSpec& spec, std::span<const QuantileRule> rules,
                            double alpha, const TieOptions& ties = {},
                            const DetectOptions& options = {});

// Assigns reference scores at random to K disjoint chunks whose sizes differ by
// at most one; group k is tested against chunk k only.
DetectionResult PartitionedDetect(const ScoreSet& scores, std::span<const QuantileRule> rules,
                                  double alpha, std::uint64_t seed,
                                  const DetectOptions& options = {});

DetectionResult PartitionedDetect(const SampleGroup& reference,
                                  const std::vector<SampleGroup>& groups, const ScoreSpec& spec,
                                  std::span<const QuantileRule> rules, double alpha,
                                  std::uint64_t seed, const TieOptions& ties = {});

struct TruthLabels {
  std::vector<bool> is_null;
};

struct MetricRecord {
  double fdp = 0.0;
  double power = 0.0;
  std::size_t false_discoveries = 0;
  std::size_t rejections = 0;
};

MetricRecord Evaluate(const BHOutcome& outcome, const TruthLabels& truth);

// Uniform law of the ordered comparison ranks R_1 < ... < R_m among n + m.
struct RankDistribution {
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::vector<std::vector<std::int64_t>> vectors;  // lexicographic order
  double mass = 0.0;

  // pmf of R_t over combined positions 1..n+m (index 0 is position 1).
  std::vector<double> Marginal(std::int64_t t) const;
};

inline constexpr std::uint64_t kMaxEnumeration = 10'000'000;

RankDistribution RankDistributionOracle(std::int64_t n, std::int64_t m);

struct StochasticOrderReport {
  std::size_t comparisons = 0;
  std::size_t violations = 0;
  // Largest |enumerated - closed-form| for P(R_{t-1} <= r | R_t = q).
  double max_closed_form_error = 0.0;
  // Largest deviation from (R_1..R_{t-1}) independent of (R_{t+1}..R_m) given R_t.
  double max_factorization_error = 0.0;
};

StochasticOrderReport StochasticOrderCheck(std::int64_t n, std::int64_t m, std::int64_t t);

}  // namespace batchconf
