#include "batchconf/pvalues.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>

#include "batchconf/scores.hpp"

namespace batchconf {

namespace {

double ClampP(double p, double floor_value) {
  const double lo = floor_value > 0.0 ? floor_value : std::numeric_limits<double>::min();
  return std::min(1.0, std::max(p, lo));
}

void RequireAscending(std::span<const double> reference) {
  if (!std::is_sorted(reference.begin(), reference.end())) {
    throw std::invalid_argument("reference scores must be sorted ascending");
  }
}

void RequireDistinct(std::span<const double> reference, const std::vector<double>& sorted_cmp) {
  if (std::adjacent_find(reference.begin(), reference.end()) != reference.end() ||
      std::adjacent_find(sorted_cmp.begin(), sorted_cmp.end()) != sorted_cmp.end()) {
    throw std::invalid_argument("scores are not distinct; break ties first");
  }
  auto r = reference.begin();
  for (double c : sorted_cmp) {
    r = std::lower_bound(r, reference.end(), c);
    if (r != reference.end() && *r == c) {
      throw std::invalid_argument("scores are not distinct; break ties first");
    }
  }
}

// Number of reference scores strictly below s, plus one: R_eta - eta + 1 when
// s is the eta-th comparison order statistic.
std::int64_t PositionAmongReference(std::span<const double> reference, double s) {
  return static_cast<std::int64_t>(std::lower_bound(reference.begin(), reference.end(), s) -
                                   reference.begin()) +
         1;
}

double MeanOf(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view MethodName(PValueMethod method) {
  switch (method) {
    case PValueMethod::kBatch: return "batch";
    case PValueMethod::kMultiQuantile: return "multiquantile";
    case PValueMethod::kSubsampling: return "subsample";
    case PValueMethod::kPermutation: return "permutation";
    case PValueMethod::kRankSum: return "ranksum";
    case PValueMethod::kZTest: return "ztest";
    case PValueMethod::kTTest: return "ttest";
  }
  return "unknown";
}

double NormalCdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

PValueRecord BatchConformalPValue(std::span<const double> reference,
                                  std::span<const double> comparison, std::int64_t eta,
                                  const BatchOptions& options) {
  const auto n = static_cast<std::int64_t>(reference.size());
  const auto m = static_cast<std::int64_t>(comparison.size());
  if (n < 1 || m < 1) throw std::invalid_argument("batch p-value needs nonempty samples");
  if (eta < 1 || eta > m) throw std::domain_error("eta must lie in [1, m]");
  RequireAscending(reference);
  std::vector<double> cmp(comparison.begin(), comparison.end());
  std::sort(cmp.begin(), cmp.end());
  if (!options.allow_ties) RequireDistinct(reference, cmp);

  std::shared_ptr<const WeightTable> table;
  if (options.cache) {
    table = options.cache->Rank(n, m, eta);
  } else {
    table = std::make_shared<const WeightTable>(RankWeights(n, m, eta));
  }
  const double s = cmp[static_cast<std::size_t>(eta - 1)];
  const double p = table->TailFrom(PositionAmongReference(reference, s));

  PValueRecord rec;
  rec.method = PValueMethod::kBatch;
  rec.eta_used = {eta};
  rec.statistic = s;
  rec.p = ClampP(p, table->Smallest());
  return rec;
}

PValueRecord TwoSampleBatchPValue(std::vector<double> reference,
                                  std::span<const double> comparison, double q,
                                  const BatchOptions& options) {
  if (!(q > 0.0 && q <= 1.0)) throw std::domain_error("quantile level must lie in (0, 1]");
  std::sort(reference.begin(), reference.end());
  const auto m = static_cast<double>(comparison.size());
  const auto eta = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(q * m - 1e-9)));
  return BatchConformalPValue(reference, comparison, eta, options);
}

PValueRecord MultiQuantilePValue(std::span<const double> reference,
                                 std::span<const double> comparison, std::int64_t eta1,
                                 std::int64_t eta2, const BatchOptions& options) {
  const auto n = static_cast<std::int64_t>(reference.size());
  const auto m = static_cast<std::int64_t>(comparison.size());
  if (n < 1 || m < 2) throw std::invalid_argument("two-quantile p-value needs n >= 1, m >= 2");
  if (!(1 <= eta1 && eta1 < eta2 && eta2 <= m)) {
    throw std::domain_error("two-quantile p-value requires 1 <= eta1 < eta2 <= m");
  }
  RequireAscending(reference);
  std::vector<double> cmp(comparison.begin(), comparison.end());
  std::sort(cmp.begin(), cmp.end());
  if (!options.allow_ties) RequireDistinct(reference, cmp);

  const std::int64_t et1 = ScaledRank(eta1, m, n);
  const std::int64_t et2 = ScaledRank(eta2, m, n);
  std::shared_ptr<const TwoQuantileWeightTable> table;
  if (options.cache) {
    table = options.cache->TwoQuantile(n, m, eta1, eta2, et1, et2);
  } else {
    table = std::make_shared<const TwoQuantileWeightTable>(
        TwoQuantileWeights(n, m, eta1, eta2, et1, et2));
  }
  const std::int64_t j1 = PositionAmongReference(reference, cmp[static_cast<std::size_t>(eta1 - 1)]);
  const std::int64_t j2 = PositionAmongReference(reference, cmp[static_cast<std::size_t>(eta2 - 1)]);
  const std::int64_t t_obs = std::max(j1 - et1, j2 - et2);

  PValueRecord rec;
  rec.method = PValueMethod::kMultiQuantile;
  rec.eta_used = {eta1, eta2};
  rec.statistic = static_cast<double>(t_obs);
  rec.p = ClampP(table->TailFrom(t_obs), table->Smallest());
  return rec;
}

PValueRecord SubsamplingPValue(std::span<const double> reference,
                               std::span<const double> comparison, std::uint64_t seed) {
  if (reference.empty() || comparison.empty()) {
    throw std::invalid_argument("subsampling p-value needs nonempty samples");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, comparison.size() - 1);
  const std::size_t chosen = pick(rng);
  const double s = comparison[chosen];
  const auto count = std::count_if(reference.begin(), reference.end(), [s](double r) { return s <= r; });
  PValueRecord rec;
  rec.method = PValueMethod::kSubsampling;
  rec.eta_used = {static_cast<std::int64_t>(chosen) + 1};
  rec.statistic = s;
  rec.p = static_cast<double>(count + 1) / static_cast<double>(reference.size() + 1);
  return rec;
}

PermutationStatistic PermutationStatistic::Parse(std::string_view name, double tau) {
  PermutationStatistic stat;
  stat.tau = tau;
  if (name == "mean-diff") {
    stat.kind = Kind::kMeanDiff;
  } else if (name == "quantile-diff") {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("quantile-diff needs tau in (0, 1]");
    stat.kind = Kind::kQuantileDiff;
  } else {
    throw std::invalid_argument("unknown permutation statistic '" + std::string(name) + "'");
  }
  return stat;
}

double PermutationStatistic::Evaluate(std::span<const double> reference,
                                      std::span<const double> comparison) const {
  if (kind == Kind::kMeanDiff) return MeanOf(comparison) - MeanOf(reference);
  return EmpiricalQuantile({comparison.begin(), comparison.end()}, tau) -
         EmpiricalQuantile({reference.begin(), reference.end()}, tau);
}

PValueRecord PermutationPValue(std::span<const double> pooled, std::size_t n,
                               const PermutationStatistic& statistic, std::int64_t permutations,
                               std::uint64_t seed) {
  if (permutations < 1) throw std::invalid_argument("permutation test needs L >= 1");
  if (n < 1 || n >= pooled.size()) throw std::invalid_argument("both permutation blocks must be nonempty");
  // Sorting within blocks makes the result invariant to relabeling inside
  // each block for a fixed seed.
  std::vector<double> data(pooled.begin(), pooled.end());
  const auto split = data.begin() + static_cast<long>(n);
  std::sort(data.begin(), split);
  std::sort(split, data.end());

  auto eval = [&](const std::vector<double>& v) {
    return statistic.Evaluate(std::span(v).first(n), std::span(v).subspan(n));
  };
  const double observed = eval(data);
  const double tol = 1e-12 * std::max(1.0, std::abs(observed));
  std::mt19937_64 rng(seed);
  std::vector<double> work(data);
  std::int64_t exceed = 0;
  for (std::int64_t l = 0; l < permutations; ++l) {
    std::copy(data.begin(), data.end(), work.begin());
    std::shuffle(work.begin(), work.end(), rng);
    if (eval(work) >= observed - tol) ++exceed;
  }
  PValueRecord rec;
  rec.method = PValueMethod::kPermutation;
  rec.statistic = observed;
  rec.p = static_cast<double>(1 + exceed) / static_cast<double>(permutations + 1);
  return rec;
}

std::vector<double> RankSumExactCdf(std::int64_t n, std::int64_t m) {
  if (n < 1 || m < 1) throw std::invalid_argument("rank-sum needs nonempty samples");
  if (n * m > kRankSumExactLimit) {
    throw std::invalid_argument("exact rank-sum distribution limited to n*m <= " +
                                std::to_string(kRankSumExactLimit) + "; use normal mode");
  }
  static std::mutex mutex;
  static std::map<std::pair<std::int64_t, std::int64_t>, std::vector<double>> cache;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find({n, m}); it != cache.end()) return it->second;
  }
  // row[b] holds counts of U over arrangements of a reference and b comparison
  // values; the largest element is either a reference value (adds b) or a
  // comparison value (adds 0).
  std::vector<std::vector<double>> row(static_cast<std::size_t>(m + 1), std::vector<double>{1.0});
  for (std::int64_t a = 1; a <= n; ++a) {
    std::vector<std::vector<double>> next(static_cast<std::size_t>(m + 1));
    next[0] = {1.0};
    for (std::int64_t b = 1; b <= m; ++b) {
      auto& cur = next[static_cast<std::size_t>(b)];
      cur.assign(static_cast<std::size_t>(a * b + 1), 0.0);
      const auto& up = row[static_cast<std::size_t>(b)];
      for (std::size_t u = 0; u < up.size(); ++u) cur[u + static_cast<std::size_t>(b)] += up[u];
      const auto& left = next[static_cast<std::size_t>(b - 1)];
      for (std::size_t u = 0; u < left.size(); ++u) cur[u] += left[u];
    }
    row = std::move(next);
  }
  const auto& counts = row[static_cast<std::size_t>(m)];
  const long double total = std::accumulate(counts.begin(), counts.end(), 0.0L);
  std::vector<double> cdf(counts.size());
  long double acc = 0.0L;
  for (std::size_t u = 0; u < counts.size(); ++u) {
    acc += counts[u];
    cdf[u] = static_cast<double>(acc / total);
  }
  cdf.back() = 1.0;
  std::lock_guard lock(mutex);
  return cache.emplace(std::make_pair(n, m), std::move(cdf)).first->second;
}

PValueRecord RankSumPValue(std::span<const double> reference, std::span<const double> comparison,
                           RankSumMode mode) {
  if (reference.empty() || comparison.empty()) {
    throw std::invalid_argument("rank-sum needs nonempty samples");
  }
  std::vector<double> ref(reference.begin(), reference.end());
  std::sort(ref.begin(), ref.end());
  double u = 0.0;
  for (double c : comparison) {
    const auto lo = std::lower_bound(ref.begin(), ref.end(), c);
    const auto hi = std::upper_bound(lo, ref.end(), c);
    u += static_cast<double>(ref.end() - hi) + 0.5 * static_cast<double>(hi - lo);
  }
  const auto n = static_cast<std::int64_t>(ref.size());
  const auto m = static_cast<std::int64_t>(comparison.size());
  PValueRecord rec;
  rec.method = PValueMethod::kRankSum;
  rec.statistic = u;
  if (mode == RankSumMode::kExact) {
    const auto cdf = RankSumExactCdf(n, m);
    const auto idx = static_cast<std::size_t>(std::floor(u + 1e-9));
    rec.p = ClampP(cdf[idx], cdf.front());
  } else {
    const double nm = static_cast<double>(n) * static_cast<double>(m);
    const double sd = std::sqrt(nm * static_cast<double>(n + m + 1) / 12.0);
    rec.p = ClampP(NormalCdf((u + 0.5 - nm / 2.0) / sd), 0.0);
  }
  return rec;
}

namespace {

PValueRecord ZRecord(PValueMethod method, double diff, double se) {
  PValueRecord rec;
  rec.method = method;
  double z = 0.0;
  if (se > 0.0) {
    z = diff / se;
  } else if (diff != 0.0) {
    z = std::copysign(std::numeric_limits<double>::infinity(), diff);
  }
  rec.statistic = z;
  rec.p = ClampP(NormalCdf(z), 0.0);
  return rec;
}

}  // namespace

PValueRecord ZTestPValue(std::span<const double> reference, std::span<const double> comparison,
                         double sigma) {
  if (reference.empty() || comparison.empty()) throw std::invalid_argument("z-test needs nonempty samples");
  if (!(sigma > 0.0)) throw std::invalid_argument("z-test needs sigma > 0");
  const double se = sigma * std::sqrt(1.0 / static_cast<double>(reference.size()) +
                                      1.0 / static_cast<double>(comparison.size()));
  return ZRecord(PValueMethod::kZTest, MeanOf(reference) - MeanOf(comparison), se);
}

PValueRecord TTestPValue(std::span<const double> reference, std::span<const double> comparison) {
  const auto n = reference.size();
  const auto m = comparison.size();
  if (n + m < 3 || n == 0 || m == 0) throw std::invalid_argument("t-test needs n, m >= 1 and n + m >= 3");
  const double mr = MeanOf(reference);
  const double mc = MeanOf(comparison);
  double ss = 0.0;
  for (double v : reference) ss += (v - mr) * (v - mr);
  for (double v : comparison) ss += (v - mc) * (v - mc);
  const double pooled_sd = std::sqrt(ss / static_cast<double>(n + m - 2));
  const double se = pooled_sd * std::sqrt(1.0 / static_cast<double>(n) + 1.0 / static_cast<double>(m));
  return ZRecord(PValueMethod::kTTest, mr - mc, se);
}

}  // namespace batchconf
