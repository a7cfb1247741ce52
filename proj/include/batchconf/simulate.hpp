#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "batchconf/scores.hpp"
#include "batchconf/testing.hpp"

namespace batchconf {

struct GroupSizeRule {
  enum class Kind { kFixed, kUniform, kShiftedPoisson };
  Kind kind = Kind::kUniform;
  std::int64_t fixed = 30;
  std::int64_t min = 30;
  std::int64_t max = 50;
  std::int64_t shift = 5;
  double lambda = 20.0;
};

// One method evaluated in a Monte Carlo run. Unset fields fall back to the
// scenario defaults.
struct MethodSpec {
  // batch, multiquantile, subsampling, partitioned, ztest, ttest,
  // permutation, ranksum
  std::string name;
  std::string label;
  std::optional<QuantileRule> quantile;
  double q1 = 0.25;
  double q2 = 0.75;
  std::string statistic = "mean-diff";
  double tau = 0.5;
  std::int64_t permutations = 199;
  RankSumMode ranksum_mode = RankSumMode::kExact;
  std::optional<std::string> score;
};

struct Scenario {
  enum class Kind { kUnivariate, kMultivariate };
  enum class Distribution { kNormal, kCauchyUniformMixture };
  enum class GammaParam { kShapeScale, kShapeRate };

  std::string name = "scenario";
  Kind kind = Kind::kUnivariate;

  // univariate
  Distribution distribution = Distribution::kNormal;
  double sigma = 3.0;
  double delta = 2.0;
  // Non-null spread multiplier (scale alternative); 1 keeps the null spread.
  double alt_scale = 1.0;

  std::int64_t n = 100;
  std::int64_t groups = 20;
  GroupSizeRule group_size;
  double null_proportion = 0.5;

  // multivariate
  std::int64_t n_train = 100;
  std::int64_t feature_dim = 10;
  // Group counts at t = 0, 1, 2, ...; t = 0 is null.
  std::vector<std::int64_t> t_allocation{25, 10, 5, 5, 5};
  GammaParam gamma_param = GammaParam::kShapeScale;
  int knn_k = 10;

  // identity, negated-identity, abs-residual, A, B, C
  std::string score = "identity";
  QuantileRule quantile = QuantileRule::Ceil(0.5);
  std::vector<double> alphas{0.05, 0.1, 0.2};
  std::int64_t replicates = 500;
  std::uint64_t seed = 1;
  TieOptions ties;
  std::vector<MethodSpec> methods;
};

// Parses and validates a scenario JSON document. Throws std::invalid_argument.
Scenario ParseScenario(const std::string& json_text);
Scenario LoadScenario(const std::string& path);

struct SimulatedData {
  std::vector<Observation> training;
  SampleGroup reference;
  std::vector<SampleGroup> groups;
  TruthLabels truth;
};

// Group sizes depend only on the scenario seed.
std::vector<std::int64_t> ScenarioGroupSizes(const Scenario& scenario);

// Groups drawn from the reference law (delta = 0 and alt_scale = 1) are null
// whatever their position.
SimulatedData GenerateUnivariate(const Scenario& scenario, std::uint64_t replicate_seed);
SimulatedData GenerateMultivariate(const Scenario& scenario, std::uint64_t replicate_seed);
SimulatedData Generate(const Scenario& scenario, std::uint64_t replicate_seed);

// Covariance 2 - |i - j| of the Gaussian block (Y1, Y2, Y3), row-major.
std::array<double, 9> OutcomeNoiseCovariance();

// Seed for replicate r (and stream s within it), a function of the master
// seed only.
std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t replicate, std::uint64_t stream = 0);

struct SimRow {
  std::string scenario;
  std::string method;
  double alpha = 0.0;
  double fdr = 0.0;
  double fdr_se = 0.0;
  double power = 0.0;
  double power_se = 0.0;
  std::int64_t replicates = 0;
  std::string warning;
};

struct SimResult {
  std::vector<SimRow> rows;

  const SimRow& Find(const std::string& method, double alpha) const;
};

// Per-replicate metrics, indexed [method][alpha].
std::vector<std::vector<MetricRecord>> RunReplicate(const Scenario& scenario, std::int64_t replicate,
                                                    WeightCache& cache);

SimResult RunMonteCarlo(const Scenario& scenario, int workers = 1);

std::string SimResultCsv(const SimResult& result);

}  // namespace batchconf
