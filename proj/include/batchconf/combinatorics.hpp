#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <tuple>
#include <vector>

namespace batchconf {

// Integer weights sharing one denominator. Present on a table only when
// C(n+m, m) is exactly representable as a double (<= 2^53).
struct ExactWeights {
  std::vector<std::uint64_t> numerators;
  std::uint64_t denominator = 1;
};

// Probabilities w_1..w_{n+1} of the position of the eta-th smallest comparison
// score among n reference scores, i.e. the pmf of R_eta - eta + 1 under
// exchangeability. Index i of `weights` holds w_{i+1}.
struct WeightTable {
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::int64_t eta = 0;
  std::vector<double> weights;
  // tail[j] = sum_{i >= j} weights[i]; tail has n+2 entries, tail[n+1] == 0.
  std::vector<double> tail;
  std::optional<ExactWeights> exact;

  // P(R_eta - eta + 1 >= position), position in [1..n+1].
  double TailFrom(std::int64_t position) const;
  double Smallest() const;
};

// pmf of T = max{R_eta1 - eta1 - etaTilde1 + 1, R_eta2 - eta2 - etaTilde2 + 1}.
// weights[j] is the mass at offset t = MinOffset() + j.
struct TwoQuantileWeightTable {
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::int64_t eta1 = 0;
  std::int64_t eta2 = 0;
  std::int64_t eta_tilde1 = 0;
  std::int64_t eta_tilde2 = 0;
  std::vector<double> weights;
  std::vector<double> tail;
  std::optional<ExactWeights> exact;

  std::int64_t MinOffset() const { return 1 - eta_tilde1; }
  std::int64_t MaxOffset() const { return n + 1 - eta_tilde1; }
  double Weight(std::int64_t t) const;
  // sum_{t' >= t} w_{t'}
  double TailFrom(std::int64_t t) const;
  double Smallest() const;
};

// ln C(b, a). Throws std::domain_error unless 0 <= a <= b.
double LogBinom(std::int64_t b, std::int64_t a);

// Exact C(b, a) if it fits in 64 bits.
std::optional<std::uint64_t> BinomExact(std::int64_t b, std::int64_t a);

WeightTable RankWeights(std::int64_t n, std::int64_t m, std::int64_t eta);

TwoQuantileWeightTable TwoQuantileWeights(std::int64_t n, std::int64_t m, std::int64_t eta1,
                                          std::int64_t eta2, std::int64_t eta_tilde1,
                                          std::int64_t eta_tilde2);

// round(eta * n / m) with exact halves rounded down.
std::int64_t ScaledRank(std::int64_t eta, std::int64_t m, std::int64_t n);

// Sum of nonnegative terms in ascending order.
double SumAscending(std::vector<double> terms);

// Thread-safe memo of weight tables keyed by their parameters.
class WeightCache {
 public:
  std::shared_ptr<const WeightTable> Rank(std::int64_t n, std::int64_t m, std::int64_t eta);
  std::shared_ptr<const TwoQuantileWeightTable> TwoQuantile(std::int64_t n, std::int64_t m,
                                                            std::int64_t eta1, std::int64_t eta2,
                                                            std::int64_t eta_tilde1,
                                                            std::int64_t eta_tilde2);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>,
           std::shared_ptr<const WeightTable>>
      rank_;
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t, std::int64_t,
                      std::int64_t>,
           std::shared_ptr<const TwoQuantileWeightTable>>
      two_;
};

}  // namespace batchconf
