#include "batchconf/combinatorics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace batchconf {

namespace {

using u128 = unsigned __int128;

// Largest integer below which every integer is an exact double.
constexpr std::uint64_t kExactDoubleLimit = std::uint64_t{1} << 53;

// Above this many factors, ln C(b, a) switches from a direct log sum to
// log-gamma differences.
constexpr std::int64_t kDirectLogTerms = 64;

long double LogGammaL(long double x) {
#if defined(__GLIBC__)
  int sign = 0;
  return lgammal_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

long double LogBinomL(std::int64_t b, std::int64_t a) {
  const std::int64_t k = std::min(a, b - a);
  if (k == 0) return 0.0L;
  if (k <= kDirectLogTerms) {
    long double acc = 0.0L;
    for (std::int64_t j = 1; j <= k; ++j) {
      acc += std::log(static_cast<long double>(b - k + j) / static_cast<long double>(j));
    }
    return acc;
  }
  return LogGammaL(static_cast<long double>(b) + 1.0L) -
         LogGammaL(static_cast<long double>(a) + 1.0L) -
         LogGammaL(static_cast<long double>(b - a) + 1.0L);
}

// Neumaier-compensated suffix sums: out[j] = sum_{i >= j} terms[i], out has one
// extra trailing zero.
std::vector<double> SuffixSums(const std::vector<double>& terms) {
  std::vector<double> out(terms.size() + 1, 0.0);
  double sum = 0.0;
  double comp = 0.0;
  for (std::size_t idx = terms.size(); idx-- > 0;) {
    const double x = terms[idx];
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
    out[idx] = sum + comp;
  }
  return out;
}

std::vector<double> ExactSuffix(const ExactWeights& exact) {
  std::vector<double> out(exact.numerators.size() + 1, 0.0);
  std::uint64_t acc = 0;
  const auto den = static_cast<double>(exact.denominator);
  for (std::size_t idx = exact.numerators.size(); idx-- > 0;) {
    acc += exact.numerators[idx];
    out[idx] = static_cast<double>(acc) / den;
  }
  return out;
}

std::optional<std::uint64_t> ExactDenominator(std::int64_t n, std::int64_t m) {
  auto total = BinomExact(n + m, m);
  if (!total || *total > kExactDoubleLimit) return std::nullopt;
  return total;
}

std::uint64_t BinomSmall(std::int64_t b, std::int64_t a) {
  if (a < 0 || a > b) return 0;
  // Callers only reach this on the exact path, where every factor is bounded
  // by C(n+m, m) <= 2^53.
  return *BinomExact(b, a);
}

}  // namespace

double LogBinom(std::int64_t b, std::int64_t a) {
  if (a < 0 || b < 0 || a > b) {
    throw std::domain_error("log_binom requires 0 <= a <= b (got b=" + std::to_string(b) +
                            ", a=" + std::to_string(a) + ")");
  }
  return static_cast<double>(LogBinomL(b, a));
}

std::optional<std::uint64_t> BinomExact(std::int64_t b, std::int64_t a) {
  if (a < 0 || b < 0 || a > b) {
    throw std::domain_error("binomial coefficient requires 0 <= a <= b");
  }
  const std::int64_t k = std::min(a, b - a);
  u128 r = 1;
  for (std::int64_t j = 1; j <= k; ++j) {
    r = r * static_cast<u128>(b - k + j) / static_cast<u128>(j);
    if (r > std::numeric_limits<std::uint64_t>::max()) return std::nullopt;
  }
  return static_cast<std::uint64_t>(r);
}

double SumAscending(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double x : terms) acc += x;
  return acc;
}

double WeightTable::TailFrom(std::int64_t position) const {
  if (position <= 1) return tail.front();
  if (position > n + 1) return 0.0;
  return tail[static_cast<std::size_t>(position - 1)];
}

double WeightTable::Smallest() const { return weights.back(); }

WeightTable RankWeights(std::int64_t n, std::int64_t m, std::int64_t eta) {
  if (n < 1 || m < 1) throw std::domain_error("rank_weights requires n >= 1 and m >= 1");
  if (eta < 1 || eta > m) {
    throw std::domain_error("rank_weights requires 1 <= eta <= m (got eta=" +
                            std::to_string(eta) + ", m=" + std::to_string(m) + ")");
  }
  WeightTable table;
  table.n = n;
  table.m = m;
  table.eta = eta;
  table.weights.resize(static_cast<std::size_t>(n + 1));

  if (auto den = ExactDenominator(n, m)) {
    ExactWeights exact;
    exact.denominator = *den;
    exact.numerators.resize(static_cast<std::size_t>(n + 1));
    for (std::int64_t i = 1; i <= n + 1; ++i) {
      const u128 num = static_cast<u128>(BinomSmall(i + eta - 2, eta - 1)) *
                       BinomSmall(n + m - i - eta + 1, m - eta);
      exact.numerators[static_cast<std::size_t>(i - 1)] = static_cast<std::uint64_t>(num);
      table.weights[static_cast<std::size_t>(i - 1)] =
          static_cast<double>(num) / static_cast<double>(*den);
    }
    table.tail = ExactSuffix(exact);
    table.exact = std::move(exact);
    return table;
  }

  const long double log_den = LogBinomL(n + m, m);
  for (std::int64_t i = 1; i <= n + 1; ++i) {
    const long double lw =
        LogBinomL(i + eta - 2, eta - 1) + LogBinomL(n + m - i - eta + 1, m - eta) - log_den;
    table.weights[static_cast<std::size_t>(i - 1)] = static_cast<double>(std::exp(lw));
  }
  table.tail = SuffixSums(table.weights);
  table.tail.front() = std::min(1.0, SumAscending(table.weights));
  return table;
}

double TwoQuantileWeightTable::Weight(std::int64_t t) const {
  if (t < MinOffset() || t > MaxOffset()) return 0.0;
  return weights[static_cast<std::size_t>(t - MinOffset())];
}

double TwoQuantileWeightTable::TailFrom(std::int64_t t) const {
  if (t <= MinOffset()) return tail.front();
  if (t > MaxOffset()) return 0.0;
  return tail[static_cast<std::size_t>(t - MinOffset())];
}

double TwoQuantileWeightTable::Smallest() const {
  for (auto it = tail.rbegin(); it != tail.rend(); ++it) {
    if (*it > 0.0) return *it;
  }
  return 0.0;
}

TwoQuantileWeightTable TwoQuantileWeights(std::int64_t n, std::int64_t m, std::int64_t eta1,
                                          std::int64_t eta2, std::int64_t eta_tilde1,
                                          std::int64_t eta_tilde2) {
  if (n < 1 || m < 2) throw std::domain_error("two_quantile_weights requires n >= 1, m >= 2");
  if (!(1 <= eta1 && eta1 < eta2 && eta2 <= m)) {
    throw std::domain_error("two_quantile_weights requires 1 <= eta1 < eta2 <= m");
  }
  if (!(0 <= eta_tilde1 && eta_tilde1 <= eta_tilde2 && eta_tilde2 <= n)) {
    throw std::domain_error(
        "two_quantile_weights requires 0 <= etaTilde1 <= etaTilde2 <= n");
  }
  TwoQuantileWeightTable table;
  table.n = n;
  table.m = m;
  table.eta1 = eta1;
  table.eta2 = eta2;
  table.eta_tilde1 = eta_tilde1;
  table.eta_tilde2 = eta_tilde2;
  const auto size = static_cast<std::size_t>(n + 1);
  const std::int64_t gap = eta2 - eta1;
  auto offset_of = [&](std::int64_t r1, std::int64_t r2) {
    const std::int64_t t1 = r1 - eta1 - eta_tilde1 + 1;
    const std::int64_t t2 = r2 - eta2 - eta_tilde2 + 1;
    return static_cast<std::size_t>(std::max(t1, t2) - table.MinOffset());
  };

  if (auto den = ExactDenominator(n, m)) {
    std::vector<u128> acc(size, 0);
    for (std::int64_t r1 = eta1; r1 <= n + eta1; ++r1) {
      const u128 left = BinomSmall(r1 - 1, eta1 - 1);
      for (std::int64_t r2 = r1 + gap; r2 <= n + eta2; ++r2) {
        const u128 mid = BinomSmall(r2 - r1 - 1, gap - 1);
        const u128 right = BinomSmall(n + m - r2, m - eta2);
        acc[offset_of(r1, r2)] += left * mid * right;
      }
    }
    ExactWeights exact;
    exact.denominator = *den;
    exact.numerators.resize(size);
    table.weights.resize(size);
    for (std::size_t j = 0; j < size; ++j) {
      exact.numerators[j] = static_cast<std::uint64_t>(acc[j]);
      table.weights[j] = static_cast<double>(acc[j]) / static_cast<double>(*den);
    }
    table.tail = ExactSuffix(exact);
    table.exact = std::move(exact);
    return table;
  }

  const long double log_den = LogBinomL(n + m, m);
  std::vector<std::vector<double>> buckets(size);
  for (std::int64_t r1 = eta1; r1 <= n + eta1; ++r1) {
    const long double left = LogBinomL(r1 - 1, eta1 - 1);
    for (std::int64_t r2 = r1 + gap; r2 <= n + eta2; ++r2) {
      const long double lw = left + LogBinomL(r2 - r1 - 1, gap - 1) +
                             LogBinomL(n + m - r2, m - eta2) - log_den;
      buckets[offset_of(r1, r2)].push_back(static_cast<double>(std::exp(lw)));
    }
  }
  table.weights.resize(size);
  for (std::size_t j = 0; j < size; ++j) table.weights[j] = SumAscending(std::move(buckets[j]));
  table.tail = SuffixSums(table.weights);
  table.tail.front() = std::min(1.0, SumAscending(table.weights));
  return table;
}

std::int64_t ScaledRank(std::int64_t eta, std::int64_t m, std::int64_t n) {
  if (m < 1 || eta < 1 || eta > m || n < 0) {
    throw std::domain_error("scaled_rank requires 1 <= eta <= m and n >= 0");
  }
  const std::int64_t num = eta * n;
  const std::int64_t q = num / m;
  const std::int64_t r = num % m;
  return 2 * r > m ? q + 1 : q;
}

std::shared_ptr<const WeightTable> WeightCache::Rank(std::int64_t n, std::int64_t m,
                                                     std::int64_t eta) {
  const auto key = std::make_tuple(n, m, eta);
  {
    std::lock_guard lock(mutex_);
    if (auto it = rank_.find(key); it != rank_.end()) return it->second;
  }
  auto table = std::make_shared<const WeightTable>(RankWeights(n, m, eta));
  std::lock_guard lock(mutex_);
  return rank_.emplace(key, std::move(table)).first->second;
}

std::shared_ptr<const TwoQuantileWeightTable> WeightCache::TwoQuantile(
    std::int64_t n, std::int64_t m, std::int64_t eta1, std::int64_t eta2,
    std::int64_t eta_tilde1, std::int64_t eta_tilde2) {
  const auto key = std::make_tuple(n, m, eta1, eta2, eta_tilde1, eta_tilde2);
  {
    std::lock_guard lock(mutex_);
    if (auto it = two_.find(key); it != two_.end()) return it->second;
  }
  auto table = std::make_shared<const TwoQuantileWeightTable>(
      TwoQuantileWeights(n, m, eta1, eta2, eta_tilde1, eta_tilde2));
  std::lock_guard lock(mutex_);
  return two_.emplace(key, std::move(table)).first->second;
}

std::size_t WeightCache::size() const {
  std::lock_guard lock(mutex_);
  return rank_.size() + two_.size();
}

}  // namespace batchconf
