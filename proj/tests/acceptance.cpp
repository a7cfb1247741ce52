// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "batchconf/combinatorics.hpp"
#include "batchconf/pvalues.hpp"
#include "batchconf/simulate.hpp"
#include "batchconf/testing.hpp"
#include "oracles.hpp"

using namespace batchconf;
using oracle::cpp_int;
using oracle::cpp_rational;

namespace {

constexpr std::int64_t kMaxTotal = 12;

class Stopwatch {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string Fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

int Workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

Scenario Load(const std::string& name) {
  return LoadScenario(std::string(BATCHCONF_SCENARIO_DIR) + "/" + name + ".json");
}

Outcome ExactWeightTables() {
  Stopwatch clock;
  Outcome out;
  std::size_t tables = 0;
  for (std::int64_t total = 2; total <= kMaxTotal; ++total) {
    for (std::int64_t m = 1; m < total; ++m) {
      const std::int64_t n = total - m;
      const cpp_int choose = oracle::Binom(total, m);
      for (std::int64_t eta = 1; eta <= m; ++eta) {
        ++tables;
        const auto table = RankWeights(n, m, eta);
        const auto counts = oracle::PositionCounts(n, m, eta);
        bool ok = table.exact.has_value() && table.weights.size() == counts.size();
        for (std::size_t i = 0; ok && i < counts.size(); ++i) {
          const cpp_rational expect(counts[i], choose);
          const cpp_rational got(cpp_int(table.exact->numerators[i]), cpp_int(table.exact->denominator));
          ok = got == expect && table.weights[i] == oracle::ToDouble(expect);
        }
        if (!ok && out.pass) {
          out.pass = false;
          out.detail = Fmt("mismatch at n=%lld m=%lld eta=%lld; ", static_cast<long long>(n),
                           static_cast<long long>(m), static_cast<long long>(eta));
        }
      }
    }
  }
  const double secs = clock.Seconds();
  if (secs >= 10.0) out.pass = false;
  out.detail += Fmt("%zu tables with n+m <= 12 equal the enumeration pmf exactly; %.2f s (limit 10 s)", tables, secs);
  return out;
}

// Given the observed statistic of every equally likely rank vector, the exact
// p-value of each vector is #{stat' >= stat} / total. Checks that the library
// p-values round those rationals correctly and that P(p <= v) equals v exactly
// at every attained level v.
bool ExactlySuperUniform(const std::vector<std::int64_t>& stats, const std::vector<double>& pvalues) {
  const auto total = static_cast<std::int64_t>(stats.size());
  std::map<std::int64_t, std::int64_t> at_least;
  for (auto s : stats) ++at_least[s];
  std::int64_t running = 0;
  for (auto it = at_least.rbegin(); it != at_least.rend(); ++it) {
    running += it->second;
    it->second = running;
  }
  std::map<cpp_rational, std::int64_t> level_count;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const cpp_rational exact(at_least[stats[i]], total);
    if (pvalues[i] != oracle::ToDouble(exact)) return false;
    ++level_count[exact];
  }
  std::int64_t below = 0;
  for (const auto& [level, count] : level_count) {
    below += count;
    if (cpp_rational(below, total) != level) return false;
  }
  return true;
}

Outcome SuperUniformity() {
  Stopwatch clock;
  Outcome out;
  std::size_t batch_cases = 0;
  std::size_t two_cases = 0;
  for (std::int64_t total = 2; total <= kMaxTotal; ++total) {
    for (std::int64_t m = 1; m < total; ++m) {
      const std::int64_t n = total - m;
      std::vector<std::vector<std::int64_t>> vectors;
      oracle::ForEachRankVector(total, m, [&](const std::vector<std::int64_t>& r) { vectors.push_back(r); });
      std::vector<oracle::Placement> placed;
      for (const auto& r : vectors) placed.push_back(oracle::Place(n, r));

      for (std::int64_t eta = 1; eta <= m; ++eta) {
        std::vector<std::int64_t> stats;
        std::vector<double> ps;
        for (std::size_t v = 0; v < vectors.size(); ++v) {
          stats.push_back(vectors[v][static_cast<std::size_t>(eta - 1)]);
          ps.push_back(BatchConformalPValue(placed[v].reference, placed[v].comparison, eta).p);
        }
        ++batch_cases;
        if (!ExactlySuperUniform(stats, ps) && out.pass) {
          out.pass = false;
          out.detail = Fmt("batch fails at n=%lld m=%lld eta=%lld; ", static_cast<long long>(n),
                           static_cast<long long>(m), static_cast<long long>(eta));
        }
      }
      for (std::int64_t e1 = 1; e1 < m; ++e1) {
        for (std::int64_t e2 = e1 + 1; e2 <= m; ++e2) {
          const auto et1 = ScaledRank(e1, m, n);
          const auto et2 = ScaledRank(e2, m, n);
          std::vector<std::int64_t> stats;
          std::vector<double> ps;
          for (std::size_t v = 0; v < vectors.size(); ++v) {
            const auto& r = vectors[v];
            stats.push_back(std::max(r[static_cast<std::size_t>(e1 - 1)] - e1 - et1 + 1,
                                     r[static_cast<std::size_t>(e2 - 1)] - e2 - et2 + 1));
            ps.push_back(MultiQuantilePValue(placed[v].reference, placed[v].comparison, e1, e2).p);
          }
          ++two_cases;
          if (!ExactlySuperUniform(stats, ps) && out.pass) {
            out.pass = false;
            out.detail = Fmt("two-quantile fails at n=%lld m=%lld eta=(%lld,%lld); ", static_cast<long long>(n),
                             static_cast<long long>(m), static_cast<long long>(e1), static_cast<long long>(e2));
          }
        }
      }
    }
  }
  out.detail += Fmt("%zu batch and %zu two-quantile configurations with n+m <= 12, P(p <= v) == v exactly at "
                    "every attained level; %.2f s",
                    batch_cases, two_cases, clock.Seconds());
  return out;
}

Outcome FdrControl(const Scenario& s, const SimResult& result, double seconds) {
  Outcome out;
  std::ostringstream detail;
  for (double alpha : s.alphas) {
    const auto& row = result.Find("batch", alpha);
    const double bound = s.null_proportion * alpha + 3.0 * row.fdr_se;
    const bool ok = row.fdr <= bound;
    out.pass = out.pass && ok;
    detail << Fmt("alpha=%.2f fdr=%.4f bound=%.4f%s; ", alpha, row.fdr, bound, ok ? "" : " (exceeded)");
  }
  if (seconds >= 300.0) out.pass = false;
  detail << Fmt("%lld reps single-threaded in %.1f s (limit 300 s)", static_cast<long long>(s.replicates), seconds);
  out.detail = detail.str();
  return out;
}

Outcome OraclePower(const Scenario& s, const SimResult& result) {
  Outcome out;
  std::ostringstream detail;
  for (double alpha : s.alphas) {
    const double batch = result.Find("batch", alpha).power;
    const double z = result.Find("ztest", alpha).power;
    const bool ok = batch >= z - 0.15;
    out.pass = out.pass && ok;
    detail << Fmt("alpha=%.2f batch=%.3f ztest=%.3f gap=%.3f%s; ", alpha, batch, z, z - batch,
                  ok ? "" : " (gap > 0.15)");
  }
  detail << Fmt("K=%lld, delta=%.0f, %lld reps", static_cast<long long>(s.groups), s.delta,
                static_cast<long long>(s.replicates));
  out.detail = detail.str();
  return out;
}

Outcome SubsamplingDominance(const std::vector<std::pair<Scenario, SimResult>>& runs) {
  Outcome out;
  std::ostringstream detail;
  for (const auto& [s, result] : runs) {
    for (double alpha : s.alphas) {
      const double batch = result.Find("batch", alpha).power;
      const double sub = result.Find("subsampling", alpha).power;
      const bool ok = batch > sub;
      out.pass = out.pass && ok;
      detail << Fmt("delta=%.0f alpha=%.2f batch=%.3f subsampling=%.3f%s; ", s.delta, alpha, batch, sub,
                    ok ? "" : " (not higher)");
    }
  }
  out.detail = detail.str();
  out.detail.resize(out.detail.size() - 2);
  return out;
}

Outcome TwoSample() {
  Stopwatch clock;
  const auto s = Load("two_sample");
  const auto result = RunMonteCarlo(s, Workers());
  const double secs = clock.Seconds();
  const double alpha = s.alphas.front();
  const auto& batch = result.Find("batch_q0.8", alpha);
  const auto& ranksum = result.Find("ranksum", alpha);
  const auto& perm = result.Find("permutation_q0.8", alpha);
  const double se = std::sqrt(batch.power_se * batch.power_se + perm.power_se * perm.power_se);
  Outcome out;
  out.pass = batch.power > ranksum.power && batch.power >= perm.power - 3.0 * se && secs < 300.0;
  out.detail = Fmt("batch(q=0.8)=%.3f ranksum=%.3f permutation(q=0.8)=%.3f (3 SE = %.3f); %.1f s (limit 300 s)",
                   batch.power, ranksum.power, perm.power, 3.0 * se, secs);
  return out;
}

Outcome RankLawChecks() {
  Stopwatch clock;
  Outcome out;
  std::ostringstream detail;

  const std::int64_t n = 5;
  const std::int64_t m = 3;
  const auto dist = RankDistributionOracle(n, m);
  std::map<std::vector<std::int64_t>, std::size_t> index;
  for (std::size_t i = 0; i < dist.vectors.size(); ++i) index[dist.vectors[i]] = i;
  std::vector<double> observed(dist.vectors.size(), 0.0);
  std::mt19937_64 rng(20240607);
  std::normal_distribution<double> z(0.0, 1.0);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    std::vector<std::pair<double, bool>> pooled;
    for (std::int64_t i = 0; i < n; ++i) pooled.emplace_back(z(rng), false);
    for (std::int64_t i = 0; i < m; ++i) pooled.emplace_back(z(rng), true);
    std::sort(pooled.begin(), pooled.end());
    std::vector<std::int64_t> ranks;
    for (std::size_t pos = 0; pos < pooled.size(); ++pos) {
      if (pooled[pos].second) ranks.push_back(static_cast<std::int64_t>(pos) + 1);
    }
    observed[index.at(ranks)] += 1.0;
  }
  double chi2 = 0.0;
  for (double o : observed) {
    const double e = draws * dist.mass;
    chi2 += (o - e) * (o - e) / e;
  }
  const double df = static_cast<double>(observed.size() - 1);
  const double pvalue = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), chi2));
  const bool uniform_ok = pvalue > 0.001 && dist.vectors.size() == 56;
  detail << Fmt("chi-square=%.2f on %.0f df, p=%.4f; ", chi2, df, pvalue);

  std::size_t comparisons = 0;
  std::size_t violations = 0;
  double closed_form = 0.0;
  double factorization = 0.0;
  for (std::int64_t total = 3; total <= 11; ++total) {
    for (std::int64_t mm = 2; mm < total; ++mm) {
      for (std::int64_t t = 2; t <= mm; ++t) {
        const auto report = StochasticOrderCheck(total - mm, mm, t);
        comparisons += report.comparisons;
        violations += report.violations;
        closed_form = std::max(closed_form, report.max_closed_form_error);
        factorization = std::max(factorization, report.max_factorization_error);
      }
    }
  }
  const bool order_ok = violations == 0 && closed_form <= 1e-12 && factorization <= 1e-12;
  detail << Fmt("%zu dominance comparisons for n+m <= 11, %zu violations, closed-form error %.2e, "
                "factorization error %.2e; %.1f s",
                comparisons, violations, closed_form, factorization, clock.Seconds());
  out.pass = uniform_ok && order_ok;
  out.detail = detail.str();
  return out;
}

Outcome AllNull() {
  const auto s = Load("all_null");
  const auto result = RunMonteCarlo(s, Workers());
  Outcome out;
  std::ostringstream detail;
  const double alpha = s.alphas.front();
  for (const auto& method : s.methods) {
    const auto& row = result.Find(method.label, alpha);
    const double bound = alpha + 3.0 * row.fdr_se;
    const bool ok = row.fdr <= bound;
    out.pass = out.pass && ok;
    detail << Fmt("%s=%.4f%s; ", method.label.c_str(), row.fdr, ok ? "" : " (exceeded)");
  }
  detail << Fmt("alpha=%.2f, bound alpha + 3 SE, %lld reps", alpha, static_cast<long long>(s.replicates));
  out.detail = detail.str();
  return out;
}

Outcome Determinism(const std::string& fdr_single_threaded) {
  Outcome out;
  std::ostringstream detail;
  auto check = [&](const Scenario& s, const std::string& reference) {
    bool ok = true;
    for (int workers : {1, 2, 4}) ok = ok && SimResultCsv(RunMonteCarlo(s, workers)) == reference;
    out.pass = out.pass && ok;
    detail << s.name << (ok ? " identical" : " DIFFERS") << "; ";
  };
  check(Load("fdr_control"), fdr_single_threaded);
  auto multi = Load("multivariate");
  multi.replicates = 10;
  check(multi, SimResultCsv(RunMonteCarlo(multi, 3)));
  auto two = Load("two_sample");
  two.replicates = 50;
  check(two, SimResultCsv(RunMonteCarlo(two, 1)));
  detail << "workers 1, 2 and 4 against an independent run";
  out.detail = detail.str();
  return out;
}

struct SimulationCache {
  std::optional<std::pair<Scenario, SimResult>> fdr_run;
  double fdr_seconds = 0.0;
  std::optional<SimResult> oracle2;

  const std::pair<Scenario, SimResult>& FdrRun() {
    if (!fdr_run) {
      auto s = Load("fdr_control");
      Stopwatch clock;
      auto result = RunMonteCarlo(s, 1);
      fdr_seconds = clock.Seconds();
      fdr_run.emplace(std::move(s), std::move(result));
    }
    return *fdr_run;
  }
  const SimResult& Oracle2() {
    if (!oracle2) oracle2 = RunMonteCarlo(Load("oracle_comparison"), Workers());
    return *oracle2;
  }
};

}  // namespace

// With no arguments every criterion runs; otherwise only the named ones.
int main(int argc, char** argv) {
  SimulationCache sims;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"exact-weights", ExactWeightTables},
      {"super-uniformity", SuperUniformity},
      {"fdr-control",
       [&] {
         const auto& [s, result] = sims.FdrRun();
         return FdrControl(s, result, sims.fdr_seconds);
       }},
      {"oracle-power", [&] { return OraclePower(Load("oracle_comparison"), sims.Oracle2()); }},
      {"subsampling-dominance",
       [&] {
         const auto oracle2 = Load("oracle_comparison");
         auto oracle3 = oracle2;
         oracle3.delta = 3.0;
         return SubsamplingDominance({{oracle2, sims.Oracle2()}, {oracle3, RunMonteCarlo(oracle3, Workers())}});
       }},
      {"two-sample", TwoSample},
      {"rank-order", RankLawChecks},
      {"all-null", AllNull},
      {"determinism", [&] { return Determinism(SimResultCsv(sims.FdrRun().second)); }},
  };

  std::set<std::string> selected(argv + 1, argv + argc);
  for (const auto& name : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
      return 2;
    }
  }
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    const Outcome outcome = run();
    std::printf("%s %s: %s\n", outcome.pass ? "PASS" : "FAIL", name.c_str(), outcome.detail.c_str());
    std::fflush(stdout);
    failures += outcome.pass ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
