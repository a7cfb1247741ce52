#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace batchconf {

struct Observation {
  std::vector<double> features;
  std::vector<double> outcome;
};

struct SampleGroup {
  std::string id;
  std::vector<Observation> rows;
};

enum class ScoreKind {
  kIdentity,
  kNegatedIdentity,
  kAbsResidual,
  kCqr,
  kMahalanobis,
  kSequentialMahalanobis,
  kEmpiricalCdf,
};

std::string_view ScoreKindName(ScoreKind kind);
// Accepts the names returned by ScoreKindName. Throws std::invalid_argument.
ScoreKind ParseScoreKind(std::string_view name);

enum class CenterEstimator { kMedian, kMean };
enum class RidgePolicy { kAuto, kOff };

struct ScoreOptions {
  int knn_k = 10;
  // Location estimate for abs-residual when there are no features.
  CenterEstimator center = CenterEstimator::kMedian;
  // Miscoverage of the conditional quantile band used by the cqr score.
  double cqr_alpha = 0.1;
  // Outcome component used by the scalar kinds.
  std::size_t outcome_index = 0;
  // Order in which outcome components are residualized by the sequential
  // kind. Empty means natural order.
  std::vector<std::size_t> component_order;
  // Fit the sequential estimators in natural order and evaluate them under
  // `component_order`, feeding earlier components in ascending index order.
  bool misspecified_order = false;
  RidgePolicy ridge = RidgePolicy::kAuto;
};

// k-nearest-neighbour regressor on standardized inputs. Distance ties are
// broken by training row order.
class KnnRegressor {
 public:
  KnnRegressor() = default;
  KnnRegressor(std::vector<std::vector<double>> inputs, std::vector<double> targets, int k);

  double PredictMean(std::span<const double> x) const;
  // Left-continuous empirical quantile of the neighbours' targets.
  double PredictQuantile(std::span<const double> x, double level) const;
  std::size_t input_dim() const { return center_.size(); }

 private:
  std::vector<double> NeighbourTargets(std::span<const double> x) const;

  std::vector<std::vector<double>> inputs_;  // standardized
  std::vector<double> targets_;
  std::vector<double> center_;
  std::vector<double> scale_;
  int k_ = 1;
};

// A fitted score function. Immutable and cheap to copy.
class ScoreSpec {
 public:
  struct Impl;

  ScoreSpec() = default;
  explicit ScoreSpec(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  ScoreKind kind() const;
  double operator()(const Observation& obs) const;
  // Residual vector of the mahalanobis kinds, in residualization order.
  std::vector<double> Residual(const Observation& obs) const;
  // Row-major inverse residual covariance (after any ridge term) used by the
  // mahalanobis kinds.
  std::vector<double> Precision() const;
  bool ridge_applied() const;

 private:
  const Impl& impl() const;
  std::shared_ptr<const Impl> impl_;
};

ScoreSpec FitScore(ScoreKind kind, const std::vector<Observation>& training,
                   const ScoreOptions& options = {});

// Score y -> (1/N) #{control values <= y}.
ScoreSpec EmpiricalCdfScore(std::vector<double> control_outcomes, std::size_t outcome_index = 0);

enum class TiePolicy { kNone, kNoise, kUniformRank };

std::string_view TiePolicyName(TiePolicy policy);
TiePolicy ParseTiePolicy(std::string_view name);

struct TieOptions {
  TiePolicy policy = TiePolicy::kNoise;
  // Gaussian noise sd; multiplied by the pooled interquartile range when
  // scale_by_iqr is set (a zero IQR counts as 1).
  double noise_sd = 1e-10;
  bool scale_by_iqr = true;
  std::uint64_t seed = 0;
};

struct ScoreSet {
  std::vector<double> reference;  // ascending
  std::vector<std::string> group_ids;
  std::vector<std::vector<double>> groups;
  TiePolicy policy = TiePolicy::kNone;
  std::uint64_t seed = 0;
  double noise_sd = 0.0;  // absolute sd actually applied
};

// Breaks ties so that all reference and comparison values are distinct, then
// sorts the reference. Throws std::invalid_argument on ties under kNone.
ScoreSet MakeScoreSet(std::vector<double> reference, std::vector<std::string> group_ids,
                      std::vector<std::vector<double>> groups, const TieOptions& ties);

ScoreSet ApplyScores(const ScoreSpec& spec, const std::vector<Observation>& reference,
                     const std::vector<SampleGroup>& groups, const TieOptions& ties);

// Variant with one score per comparison group, e.g. control-arm CDF scores.
ScoreSet ApplyScores(const ScoreSpec& reference_spec, const std::vector<Observation>& reference,
                     const std::vector<ScoreSpec>& group_specs,
                     const std::vector<SampleGroup>& groups, const TieOptions& ties);

// Left-continuous empirical quantile inf{x : F(x) >= tau} of unsorted values.
double EmpiricalQuantile(std::vector<double> values, double tau);

}  // namespace batchconf
