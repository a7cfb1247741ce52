#include "batchconf/testing.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace batchconf {

BHOutcome BenjaminiHochberg(std::span<const double> pvalues, double alpha) {
  if (pvalues.empty()) throw std::invalid_argument("BH needs at least one p-value");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("BH level must lie in (0, 1)");
  for (double p : pvalues) {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("p-values must lie in (0, 1]");
  }
  const std::size_t count = pvalues.size();
  BHOutcome out;
  out.alpha = alpha;
  out.sorted_pvalues.assign(pvalues.begin(), pvalues.end());
  std::sort(out.sorted_pvalues.begin(), out.sorted_pvalues.end());
  for (std::size_t k = count; k >= 1; --k) {
    if (out.sorted_pvalues[k - 1] <= static_cast<double>(k) * alpha / static_cast<double>(count)) {
      out.k_star = k;
      break;
    }
  }
  out.decisions.assign(count, false);
  if (out.k_star > 0) {
    out.threshold = out.sorted_pvalues[out.k_star - 1];
    for (std::size_t i = 0; i < count; ++i) {
      if (pvalues[i] <= out.threshold) {
        out.decisions[i] = true;
        out.rejected.push_back(i);
      }
    }
  }
  return out;
}

std::int64_t QuantileRule::EtaFor(std::int64_t group_size) const {
  if (group_size < 1) throw std::invalid_argument("comparison group is empty");
  std::int64_t eta = 0;
  switch (kind) {
    case Kind::kRank:
      if (value != std::floor(value)) throw std::domain_error("explicit rank must be an integer");
      eta = static_cast<std::int64_t>(value);
      break;
    case Kind::kCeil:
    case Kind::kFloor: {
      if (!(value > 0.0 && value <= 1.0)) throw std::domain_error("quantile level must lie in (0, 1]");
      const double x = value * static_cast<double>(group_size);
      eta = static_cast<std::int64_t>(kind == Kind::kCeil ? std::ceil(x - 1e-9) : std::floor(x + 1e-9));
      eta = std::max<std::int64_t>(eta, 1);
      break;
    }
  }
  if (eta < 1 || eta > group_size) {
    throw std::domain_error("rank " + std::to_string(eta) + " outside [1, " +
                            std::to_string(group_size) + "]");
  }
  return eta;
}

QuantileRule QuantileRule::Parse(std::string_view kind, double value) {
  if (kind == "rank") return Rank(static_cast<std::int64_t>(value));
  if (kind == "q-ceil") return Ceil(value);
  if (kind == "q-floor") return Floor(value);
  throw std::invalid_argument("unknown quantile rule '" + std::string(kind) + "'");
}

std::string QuantileRule::KindName() const {
  switch (kind) {
    case Kind::kRank: return "rank";
    case Kind::kCeil: return "q-ceil";
    case Kind::kFloor: return "q-floor";
  }
  return "unknown";
}

namespace {

const QuantileRule& RuleFor(std::span<const QuantileRule> rules, std::size_t k, std::size_t count) {
  if (rules.size() == 1) return rules[0];
  if (rules.size() != count) throw std::invalid_argument("need one quantile rule or one per group");
  return rules[k];
}

// Runs fn(k) for k in [0, count) on up to `workers` threads; rethrows the
// first failure.
template <typename Fn>
void ParallelFor(std::size_t count, int workers, Fn fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads <= 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(threads, count); ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < count; k += threads) fn(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<double> PValuesOf(const std::vector<PValueRecord>& records) {
  std::vector<double> p;
  p.reserve(records.size());
  for (const auto& r : records) p.push_back(r.p);
  return p;
}

}  // namespace

DetectionResult BatchDetect(const ScoreSet& scores, std::span<const QuantileRule> rules,
                            double alpha, const DetectOptions& options) {
  const std::size_t count = scores.groups.size();
  if (count == 0) throw std::invalid_argument("detection needs at least one comparison group");
  WeightCache local;
  WeightCache* cache = options.cache ? options.cache : &local;
  DetectionResult result;
  result.pvalues.resize(count);
  ParallelFor(count, options.workers, [&](std::size_t k) {
    const auto& group = scores.groups[k];
    const auto eta = RuleFor(rules, k, count).EtaFor(static_cast<std::int64_t>(group.size()));
    BatchOptions opts;
    opts.cache = cache;
    auto rec = BatchConformalPValue(scores.reference, group, eta, opts);
    rec.group_id = scores.group_ids[k];
    result.pvalues[k] = std::move(rec);
  });
  result.bh = BenjaminiHochberg(PValuesOf(result.pvalues), alpha);
  return result;
}

DetectionResult BatchDetect(const SampleGroup& reference, const std::vector<SampleGroup>& groups,
                            const ScoreSpec& spec, std::span<const QuantileRule> rules,
                            double alpha, const TieOptions& ties, const DetectOptions& options) {
  for (const auto& g : groups) {
    if (g.rows.empty()) throw std::invalid_argument("comparison group '" + g.id + "' is empty");
  }
  const ScoreSet scores = ApplyScores(spec, reference.rows, groups, ties);
  return BatchDetect(scores, rules, alpha, options);
}

DetectionResult PartitionedDetect(const ScoreSet& scores, std::span<const QuantileRule> rules,
                                  double alpha, std::uint64_t seed,
                                  const DetectOptions& options) {
  const std::size_t count = scores.groups.size();
  if (count == 0) throw std::invalid_argument("detection needs at least one comparison group");
  if (scores.reference.size() < count) {
    throw std::invalid_argument("partitioning needs at least as many reference points as groups");
  }
  std::vector<std::size_t> order(scores.reference.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<double>> chunks(count);
  for (std::size_t i = 0; i < order.size(); ++i) {
    chunks[i % count].push_back(scores.reference[order[i]]);
  }
  for (auto& c : chunks) std::sort(c.begin(), c.end());

  WeightCache local;
  WeightCache* cache = options.cache ? options.cache : &local;
  DetectionResult result;
  result.pvalues.resize(count);
  ParallelFor(count, options.workers, [&](std::size_t k) {
    const auto& group = scores.groups[k];
    const auto eta = RuleFor(rules, k, count).EtaFor(static_cast<std::int64_t>(group.size()));
    BatchOptions opts;
    opts.cache = cache;
    auto rec = BatchConformalPValue(chunks[k], group, eta, opts);
    rec.group_id = scores.group_ids[k];
    result.pvalues[k] = std::move(rec);
  });
  result.bh = BenjaminiHochberg(PValuesOf(result.pvalues), alpha);
  return result;
}

DetectionResult PartitionedDetect(const SampleGroup& reference,
                                  const std::vector<SampleGroup>& groups, const ScoreSpec& spec,
                                  std::span<const QuantileRule> rules, double alpha,
                                  std::uint64_t seed, const TieOptions& ties) {
  const ScoreSet scores = ApplyScores(spec, reference.rows, groups, ties);
  return PartitionedDetect(scores, rules, alpha, seed);
}

MetricRecord Evaluate(const BHOutcome& outcome, const TruthLabels& truth) {
  if (truth.is_null.size() != outcome.decisions.size()) {
    throw std::invalid_argument("truth labels do not match the tested groups");
  }
  MetricRecord rec;
  std::size_t non_null = 0;
  std::size_t true_discoveries = 0;
  for (std::size_t k = 0; k < truth.is_null.size(); ++k) {
    if (!truth.is_null[k]) ++non_null;
    if (!outcome.decisions[k]) continue;
    ++rec.rejections;
    if (truth.is_null[k]) {
      ++rec.false_discoveries;
    } else {
      ++true_discoveries;
    }
  }
  rec.fdp = static_cast<double>(rec.false_discoveries) /
            static_cast<double>(std::max<std::size_t>(rec.rejections, 1));
  rec.power = non_null == 0 ? 0.0
                            : static_cast<double>(true_discoveries) / static_cast<double>(non_null);
  return rec;
}

std::vector<double> RankDistribution::Marginal(std::int64_t t) const {
  if (t < 1 || t > m) throw std::domain_error("rank index out of range");
  std::vector<double> pmf(static_cast<std::size_t>(n + m), 0.0);
  for (const auto& v : vectors) pmf[static_cast<std::size_t>(v[static_cast<std::size_t>(t - 1)] - 1)] += mass;
  return pmf;
}

RankDistribution RankDistributionOracle(std::int64_t n, std::int64_t m) {
  if (n < 0 || m < 1) throw std::invalid_argument("rank oracle needs n >= 0, m >= 1");
  const auto total = BinomExact(n + m, m);
  if (!total || *total > kMaxEnumeration) {
    throw std::invalid_argument("rank enumeration too large (C(n+m, m) > 1e7)");
  }
  RankDistribution dist;
  dist.n = n;
  dist.m = m;
  dist.mass = 1.0 / static_cast<double>(*total);
  dist.vectors.reserve(*total);
  const std::int64_t size = n + m;
  std::vector<std::int64_t> v(static_cast<std::size_t>(m));
  std::iota(v.begin(), v.end(), std::int64_t{1});
  while (true) {
    dist.vectors.push_back(v);
    std::int64_t i = m - 1;
    while (i >= 0 && v[static_cast<std::size_t>(i)] == size - m + i + 1) --i;
    if (i < 0) break;
    ++v[static_cast<std::size_t>(i)];
    for (std::int64_t j = i + 1; j < m; ++j) {
      v[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return dist;
}

StochasticOrderReport StochasticOrderCheck(std::int64_t n, std::int64_t m, std::int64_t t) {
  if (t < 2 || t > m) throw std::domain_error("stochastic order check needs 2 <= t <= m");
  const RankDistribution dist = RankDistributionOracle(n, m);
  const std::int64_t size = n + m;
  const auto cells = static_cast<std::size_t>(size + 1);
  const auto ti = static_cast<std::size_t>(t - 1);
  const bool has_next = t < m;

  std::vector<double> at_q(cells, 0.0);
  std::vector<std::vector<double>> prev(cells, std::vector<double>(cells, 0.0));
  std::vector<std::vector<double>> next(cells, std::vector<double>(cells, 0.0));
  std::map<std::vector<std::int64_t>, double> prefix_count;
  std::map<std::vector<std::int64_t>, double> suffix_count;
  for (const auto& v : dist.vectors) {
    const auto q = static_cast<std::size_t>(v[ti]);
    at_q[q] += 1.0;
    prev[q][static_cast<std::size_t>(v[ti - 1])] += 1.0;
    if (has_next) next[q][static_cast<std::size_t>(v[ti + 1])] += 1.0;
    std::vector<std::int64_t> pre(v.begin(), v.begin() + static_cast<long>(ti) + 1);
    std::vector<std::int64_t> suf(v.begin() + static_cast<long>(ti), v.end());
    prefix_count[pre] += 1.0;
    suffix_count[suf] += 1.0;
  }

  auto prev_cdf = [&](std::size_t q, std::size_t r) {
    double acc = 0.0;
    for (std::size_t a = 1; a <= r; ++a) acc += prev[q][a];
    return acc / at_q[q];
  };
  auto next_sf = [&](std::size_t q, std::size_t r) {
    double acc = 0.0;
    for (std::size_t b = r; b < cells; ++b) acc += next[q][b];
    return acc / at_q[q];
  };

  StochasticOrderReport report;
  constexpr double kTol = 1e-12;
  for (std::size_t q = 1; q < cells; ++q) {
    if (at_q[q] == 0.0) continue;
    for (std::size_t q2 = q; q2 < cells; ++q2) {
      if (at_q[q2] == 0.0) continue;
      for (std::size_t r = 1; r < cells; ++r) {
        ++report.comparisons;
        if (prev_cdf(q, r) < prev_cdf(q2, r) - kTol) ++report.violations;
        if (has_next && next_sf(q, r) > next_sf(q2, r) + kTol) ++report.violations;
      }
    }
    // Closed form: sum_{l<=r} C(l-1, t-2) / sum_{l<=q-1} C(l-1, t-2).
    double denom = 0.0;
    for (std::int64_t l = 1; l <= static_cast<std::int64_t>(q) - 1; ++l) {
      if (l - 1 >= t - 2) denom += static_cast<double>(*BinomExact(l - 1, t - 2));
    }
    double numer = 0.0;
    for (std::int64_t r = 1; r <= static_cast<std::int64_t>(q) - 1; ++r) {
      if (r - 1 >= t - 2) numer += static_cast<double>(*BinomExact(r - 1, t - 2));
      const double err = std::abs(prev_cdf(q, static_cast<std::size_t>(r)) - numer / denom);
      report.max_closed_form_error = std::max(report.max_closed_form_error, err);
    }
  }

  for (const auto& v : dist.vectors) {
    const auto q = static_cast<std::size_t>(v[ti]);
    std::vector<std::int64_t> pre(v.begin(), v.begin() + static_cast<long>(ti) + 1);
    std::vector<std::int64_t> suf(v.begin() + static_cast<long>(ti), v.end());
    const double joint = 1.0 / at_q[q];
    const double product = (prefix_count[pre] / at_q[q]) * (suffix_count[suf] / at_q[q]);
    report.max_factorization_error = std::max(report.max_factorization_error, std::abs(joint - product));
  }
  return report;
}

}  // namespace batchconf
