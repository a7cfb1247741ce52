#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "batchconf/cli.hpp"
#include "batchconf/combinatorics.hpp"
#include "batchconf/pvalues.hpp"
#include "batchconf/simulate.hpp"
#include "batchconf/testing.hpp"

namespace py = pybind11;
namespace bc = batchconf;

namespace {

py::dict ToDict(const bc::PValueRecord& r) {
  py::dict d;
  d["group_id"] = r.group_id;
  d["method"] = std::string(bc::MethodName(r.method));
  d["eta_used"] = r.eta_used;
  d["statistic"] = r.statistic;
  d["p"] = r.p;
  return d;
}

py::dict ToDict(const bc::BHOutcome& bh) {
  py::dict d;
  d["alpha"] = bh.alpha;
  d["k_star"] = bh.k_star;
  d["threshold"] = bh.threshold;
  d["rejected"] = bh.rejected;
  d["sorted_pvalues"] = bh.sorted_pvalues;
  return d;
}

std::vector<double> Sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Batch conformal p-values, BH selection and simulation harness";
  m.attr("__version__") = std::string(bc::Version());

  py::register_exception<std::domain_error>(m, "DomainError", PyExc_ValueError);

  m.def("log_binom", &bc::LogBinom, py::arg("b"), py::arg("a"), "ln C(b, a)");
  m.def("scaled_rank", &bc::ScaledRank, py::arg("eta"), py::arg("m"), py::arg("n"));
  m.def(
      "rank_weights",
      [](std::int64_t n, std::int64_t m, std::int64_t eta) { return bc::RankWeights(n, m, eta).weights; },
      py::arg("n"), py::arg("m"), py::arg("eta"),
      "Weights w_1..w_{n+1} of the batch conformal p-value.");
  m.def(
      "two_quantile_weights",
      [](std::int64_t n, std::int64_t m, std::int64_t eta1, std::int64_t eta2) {
        const auto table = bc::TwoQuantileWeights(n, m, eta1, eta2, bc::ScaledRank(eta1, m, n),
                                                  bc::ScaledRank(eta2, m, n));
        return py::make_tuple(table.MinOffset(), table.weights);
      },
      py::arg("n"), py::arg("m"), py::arg("eta1"), py::arg("eta2"),
      "(first offset t, weights) of the two-quantile p-value.");

  m.def(
      "batch_pvalue",
      [](std::vector<double> ref, const std::vector<double>& cmp, std::int64_t eta, bool allow_ties) {
        bc::BatchOptions opts;
        opts.allow_ties = allow_ties;
        return ToDict(bc::BatchConformalPValue(Sorted(std::move(ref)), cmp, eta, opts));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("eta"), py::arg("allow_ties") = false);
  m.def(
      "multiquantile_pvalue",
      [](std::vector<double> ref, const std::vector<double>& cmp, std::int64_t eta1, std::int64_t eta2) {
        return ToDict(bc::MultiQuantilePValue(Sorted(std::move(ref)), cmp, eta1, eta2));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("eta1"), py::arg("eta2"));
  m.def(
      "subsampling_pvalue",
      [](const std::vector<double>& ref, const std::vector<double>& cmp, std::uint64_t seed) {
        return ToDict(bc::SubsamplingPValue(ref, cmp, seed));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("seed"));
  m.def(
      "permutation_pvalue",
      [](const std::vector<double>& ref, const std::vector<double>& cmp, const std::string& statistic,
         std::int64_t permutations, std::uint64_t seed, double tau) {
        std::vector<double> pooled(ref);
        pooled.insert(pooled.end(), cmp.begin(), cmp.end());
        return ToDict(bc::PermutationPValue(pooled, ref.size(), bc::PermutationStatistic::Parse(statistic, tau),
                                            permutations, seed));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("statistic") = "mean-diff", py::arg("L") = 199,
      py::arg("seed") = 0, py::arg("tau") = 0.5);
  m.def(
      "ranksum_pvalue",
      [](const std::vector<double>& ref, const std::vector<double>& cmp, const std::string& mode) {
        if (mode != "exact" && mode != "normal") throw py::value_error("mode must be 'exact' or 'normal'");
        return ToDict(bc::RankSumPValue(ref, cmp, mode == "exact" ? bc::RankSumMode::kExact : bc::RankSumMode::kNormal));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("mode") = "exact");
  m.def(
      "ztest_pvalue",
      [](const std::vector<double>& ref, const std::vector<double>& cmp, double sigma) {
        return ToDict(bc::ZTestPValue(ref, cmp, sigma));
      },
      py::arg("ref"), py::arg("cmp"), py::arg("sigma"));
  m.def(
      "ttest_pvalue",
      [](const std::vector<double>& ref, const std::vector<double>& cmp) { return ToDict(bc::TTestPValue(ref, cmp)); },
      py::arg("ref"), py::arg("cmp"));

  m.def(
      "bh_procedure", [](const std::vector<double>& p, double alpha) { return ToDict(bc::BenjaminiHochberg(p, alpha)); },
      py::arg("pvalues"), py::arg("alpha"));

  m.def(
      "batch_detect",
      [](const std::vector<double>& reference, const std::vector<std::vector<double>>& groups, double alpha,
         const std::string& rule, double value, const std::string& tie_policy, std::uint64_t seed) {
        bc::TieOptions ties;
        ties.policy = bc::ParseTiePolicy(tie_policy);
        ties.seed = seed;
        std::vector<std::string> ids;
        for (std::size_t k = 0; k < groups.size(); ++k) ids.push_back("g" + std::to_string(k + 1));
        const auto set = bc::MakeScoreSet(reference, ids, groups, ties);
        const auto quantile = bc::QuantileRule::Parse(rule, value);
        const auto result = bc::BatchDetect(set, std::span(&quantile, 1), alpha);
        py::list records;
        for (const auto& r : result.pvalues) records.append(ToDict(r));
        py::dict out;
        out["pvalues"] = records;
        out["bh"] = ToDict(result.bh);
        return out;
      },
      py::arg("reference"), py::arg("groups"), py::arg("alpha") = 0.1, py::arg("rule") = "q-ceil",
      py::arg("value") = 0.5, py::arg("tie_policy") = "noise", py::arg("seed") = 1,
      "Batch conformal p-values for identity scores followed by BH.");

  m.def(
      "run_simulation",
      [](const std::string& scenario_json, int workers) {
        const auto scenario = bc::ParseScenario(scenario_json);
        py::gil_scoped_release release;
        return bc::SimResultCsv(bc::RunMonteCarlo(scenario, workers));
      },
      py::arg("scenario_json"), py::arg("workers") = 1, "Runs a scenario and returns the result CSV text.");
}
