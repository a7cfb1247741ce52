#include "batchconf/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "batchconf/csv.hpp"
#include "batchconf/pvalues.hpp"
#include "batchconf/scores.hpp"
#include "batchconf/simulate.hpp"
#include "batchconf/testing.hpp"

namespace batchconf {

using nlohmann::json;

namespace {

// Raised for invalid flag combinations; maps to kExitConfig.
struct ConfigError : std::logic_error {
  using std::logic_error::logic_error;
};

std::uint64_t DefaultSeed() {
  const char* env = std::getenv(kSeedEnv);
  if (env == nullptr || *env == '\0') return 1;
  const std::string_view text(env);
  std::uint64_t seed = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(kSeedEnv) + " is not an unsigned integer: '" + std::string(text) + "'");
  }
  return seed;
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void WriteOutput(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write '" + path + "'");
  file << text;
  if (!file) throw std::runtime_error("failed writing '" + path + "'");
}

json RecordJson(const PValueRecord& r) {
  return json{{"group_id", r.group_id},
              {"method", std::string(MethodName(r.method))},
              {"eta_used", r.eta_used},
              {"statistic", r.statistic},
              {"p", r.p}};
}

// ---------------------------------------------------------------- detect

struct DetectConfig {
  std::string reference;
  std::vector<std::string> group_paths;
  std::string input;
  std::string group_column = "group";
  std::string reference_group = "reference";
  std::string outcome = "value";
  std::string features;
  std::string score = "identity";
  double train_fraction = 0.5;
  std::optional<std::uint64_t> seed;
  std::string quantile_rule = "q-ceil";
  double quantile_value = 0.5;
  double alpha = 0.1;
  std::string tie_policy = "noise";
  std::string arm_column;
  std::string control_label = "control";
  int workers = 1;
  std::string output;
};

struct LabelledRows {
  std::vector<Observation> rows;
  std::vector<std::string> arms;
};

struct RowReader {
  std::vector<std::size_t> outcome;
  std::vector<std::size_t> features;
  std::optional<std::size_t> arm;

  RowReader(const CsvTable& table, const DetectConfig& config) {
    for (const auto& name : SplitList(config.outcome)) outcome.push_back(table.Column(name));
    if (outcome.empty()) throw ConfigError("--outcome names no column");
    for (const auto& name : SplitList(config.features)) features.push_back(table.Column(name));
    if (!config.arm_column.empty()) arm = table.Column(config.arm_column);
  }

  void Append(const CsvTable& table, std::size_t r, LabelledRows& into) const {
    into.rows.push_back(Observation{table.NumericRow(r, features), table.NumericRow(r, outcome)});
    into.arms.push_back(arm ? table.rows[r][*arm] : std::string());
  }
};

LabelledRows ReadAll(const std::string& path, const DetectConfig& config) {
  const CsvTable table = ReadCsv(path);
  const RowReader reader(table, config);
  LabelledRows out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) reader.Append(table, r, out);
  return out;
}

struct DetectInputs {
  LabelledRows reference;
  std::vector<std::string> ids;
  std::vector<LabelledRows> groups;
};

DetectInputs LoadDetectInputs(const DetectConfig& config) {
  DetectInputs in;
  bool have_reference = false;
  if (!config.reference.empty()) {
    in.reference = ReadAll(config.reference, config);
    have_reference = true;
  }
  std::set<std::string> seen;
  for (const auto& path : config.group_paths) {
    const std::string id = std::filesystem::path(path).stem().string();
    if (!seen.insert(id).second) throw ConfigError("two group files share the name '" + id + "'");
    in.ids.push_back(id);
    in.groups.push_back(ReadAll(path, config));
  }
  if (!config.input.empty()) {
    const CsvTable table = ReadCsv(config.input);
    const RowReader reader(table, config);
    const std::size_t label_col = table.Column(config.group_column);
    std::map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const std::string& label = table.rows[r][label_col];
      if (label.empty()) throw CsvError(table.source, table.lines[r], "missing group label");
      if (!have_reference && label == config.reference_group) {
        reader.Append(table, r, in.reference);
        continue;
      }
      auto it = index.find(label);
      if (it == index.end()) {
        if (!seen.insert(label).second) throw ConfigError("group '" + label + "' is given twice");
        it = index.emplace(label, in.groups.size()).first;
        in.ids.push_back(label);
        in.groups.emplace_back();
      }
      reader.Append(table, r, in.groups[it->second]);
    }
    if (!have_reference && in.reference.rows.empty()) {
      throw ConfigError("no rows labelled '" + config.reference_group + "' in " + config.input);
    }
  }
  if (in.reference.rows.empty()) throw ConfigError("reference sample is empty");
  if (in.groups.empty()) throw ConfigError("no comparison groups given");
  return in;
}

std::vector<Observation> ArmRows(const LabelledRows& data, const std::string& label, bool keep) {
  std::vector<Observation> out;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    if ((data.arms[i] == label) == keep) out.push_back(data.rows[i]);
  }
  return out;
}

std::vector<double> Outcomes(const std::vector<Observation>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.outcome.front());
  return out;
}

ScoreSet ScoreDetectInputs(const DetectConfig& config, const DetectInputs& in, ScoreKind kind,
                           const TieOptions& ties) {
  if (kind == ScoreKind::kEmpiricalCdf) {
    if (config.arm_column.empty()) throw ConfigError("empirical-cdf score needs --arm-column");
    const auto label = config.control_label;
    const ScoreSpec ref_spec = EmpiricalCdfScore(Outcomes(ArmRows(in.reference, label, true)));
    std::vector<ScoreSpec> specs;
    std::vector<SampleGroup> treated;
    for (std::size_t k = 0; k < in.groups.size(); ++k) {
      specs.push_back(EmpiricalCdfScore(Outcomes(ArmRows(in.groups[k], label, true))));
      treated.push_back(SampleGroup{in.ids[k], ArmRows(in.groups[k], label, false)});
      if (treated.back().rows.empty()) throw ConfigError("group '" + in.ids[k] + "' has no treated rows");
    }
    const auto calibration = ArmRows(in.reference, label, false);
    if (calibration.empty()) throw ConfigError("reference has no treated rows");
    return ApplyScores(ref_spec, calibration, specs, treated, ties);
  }

  std::vector<SampleGroup> groups;
  for (std::size_t k = 0; k < in.groups.size(); ++k) groups.push_back(SampleGroup{in.ids[k], in.groups[k].rows});
  if (kind == ScoreKind::kIdentity || kind == ScoreKind::kNegatedIdentity) {
    return ApplyScores(FitScore(kind, {}), in.reference.rows, groups, ties);
  }
  const std::size_t n = in.reference.rows.size();
  const auto n_train = static_cast<std::size_t>(config.train_fraction * static_cast<double>(n));
  if (n_train < 1 || n_train >= n) {
    throw ConfigError("--train-fraction leaves an empty training or calibration split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(ties.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Observation> training;
  std::vector<Observation> calibration;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? training : calibration).push_back(in.reference.rows[order[i]]);
  }
  return ApplyScores(FitScore(kind, training), calibration, groups, ties);
}

int RunDetect(const DetectConfig& config, std::ostream& out) {
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw ConfigError("--alpha must lie in (0, 1)");
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw ConfigError("--train-fraction must lie in (0, 1)");
  }
  if (config.group_paths.empty() && config.input.empty()) throw ConfigError("give --group files or --input");
  if (config.reference.empty() && config.input.empty()) throw ConfigError("give --reference or --input");
  if (config.workers < 1) throw ConfigError("--workers must be >= 1");

  const ScoreKind kind = ParseScoreKind(config.score);
  const QuantileRule rule = QuantileRule::Parse(config.quantile_rule, config.quantile_value);
  TieOptions ties;
  ties.policy = ParseTiePolicy(config.tie_policy);
  ties.seed = config.seed.value_or(DefaultSeed());

  const DetectInputs inputs = LoadDetectInputs(config);
  const ScoreSet scores = ScoreDetectInputs(config, inputs, kind, ties);
  DetectOptions options;
  options.workers = config.workers;
  const DetectionResult result = BatchDetect(scores, std::span(&rule, 1), config.alpha, options);

  json pvalues = json::array();
  for (std::size_t k = 0; k < result.pvalues.size(); ++k) {
    json rec = RecordJson(result.pvalues[k]);
    rec["n"] = scores.groups[k].size();
    pvalues.push_back(std::move(rec));
  }
  json rejected = json::array();
  for (std::size_t idx : result.bh.rejected) rejected.push_back(result.pvalues[idx].group_id);

  json report;
  report["config"] = {{"reference", config.reference},
                      {"groups", config.group_paths},
                      {"input", config.input},
                      {"group_column", config.group_column},
                      {"reference_group", config.reference_group},
                      {"outcome", config.outcome},
                      {"features", config.features},
                      {"score", std::string(ScoreKindName(kind))},
                      {"train_fraction", config.train_fraction},
                      {"seed", ties.seed},
                      {"quantile_rule", {{"kind", rule.KindName()}, {"value", rule.value}}},
                      {"alpha", config.alpha},
                      {"tie_policy", std::string(TiePolicyName(ties.policy))},
                      {"reference_size", scores.reference.size()}};
  if (kind == ScoreKind::kEmpiricalCdf) {
    report["config"]["arm_column"] = config.arm_column;
    report["config"]["control_label"] = config.control_label;
  }
  report["pvalues"] = std::move(pvalues);
  report["bh"] = {{"alpha", result.bh.alpha},
                  {"k_star", result.bh.k_star},
                  {"threshold", result.bh.threshold},
                  {"rejected", rejected}};
  report["version"] = std::string(Version());
  WriteOutput(config.output, report.dump(2) + "\n", out);
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateConfig {
  std::string scenario;
  std::string output;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> replicates;
};

int RunSimulate(const SimulateConfig& config, std::ostream& out) {
  if (config.workers < 1) throw ConfigError("--workers must be >= 1");
  Scenario scenario = LoadScenario(config.scenario);
  if (config.seed) scenario.seed = *config.seed;
  if (config.replicates) {
    if (*config.replicates < 1) throw ConfigError("--replicates must be >= 1");
    scenario.replicates = *config.replicates;
  }
  WriteOutput(config.output, SimResultCsv(RunMonteCarlo(scenario, config.workers)), out);
  return kExitOk;
}

// ---------------------------------------------------------------- pvalue

struct PValueConfig {
  std::string method;
  std::string ref;
  std::string cmp;
  std::string column = "value";
  std::int64_t eta = 0;
  std::int64_t eta2 = 0;
  double q = 0.5;
  double q2 = 0.75;
  std::int64_t permutations = 199;
  std::optional<std::uint64_t> seed;
  std::string statistic = "mean-diff";
  double tau = 0.5;
  std::string mode = "exact";
  double sigma = 1.0;
  std::string tie_policy = "none";
};

std::vector<double> ReadColumn(const std::string& path, const std::string& column) {
  const auto values = ReadCsv(path).Numeric(column);
  if (values.empty()) throw ConfigError("'" + path + "' has no data rows");
  return values;
}

int RunPValue(const PValueConfig& config, const std::set<std::string>& given, std::ostream& out) {
  static const std::map<std::string, std::set<std::string>> allowed{
      {"batch", {"--eta", "--q", "--tie-policy"}},
      {"multiquantile", {"--eta", "--eta2", "--q", "--q2", "--tie-policy"}},
      {"subsample", {"--seed", "--tie-policy"}},
      {"permutation", {"--L", "--seed", "--statistic", "--tau"}},
      {"ranksum", {"--mode"}},
      {"ztest", {"--sigma"}},
      {"ttest", {}},
  };
  const auto it = allowed.find(config.method);
  if (it == allowed.end()) throw ConfigError("unknown method '" + config.method + "'");
  for (const auto& flag : given) {
    if (!it->second.count(flag)) throw ConfigError(flag + " does not apply to method " + config.method);
  }
  if (given.count("--eta") && given.count("--q")) throw ConfigError("give either --eta or --q, not both");

  const auto ref = ReadColumn(config.ref, config.column);
  const auto cmp = ReadColumn(config.cmp, config.column);
  const std::string id = std::filesystem::path(config.cmp).stem().string();
  const auto m = static_cast<std::int64_t>(cmp.size());
  PValueRecord record;

  if (config.method == "batch" || config.method == "multiquantile" || config.method == "subsample") {
    TieOptions ties;
    ties.policy = ParseTiePolicy(config.tie_policy);
    ties.seed = config.seed.value_or(DefaultSeed());
    const ScoreSet set = MakeScoreSet(ref, {id}, {cmp}, ties);
    if (config.method == "batch") {
      const auto eta = given.count("--eta") ? config.eta : QuantileRule::Ceil(config.q).EtaFor(m);
      record = BatchConformalPValue(set.reference, set.groups[0], eta);
    } else if (config.method == "multiquantile") {
      std::int64_t eta1 = config.eta;
      std::int64_t eta2 = config.eta2;
      if (given.count("--eta") != given.count("--eta2")) throw ConfigError("give both --eta and --eta2");
      if (!given.count("--eta")) {
        eta1 = QuantileRule::Ceil(config.q).EtaFor(m);
        eta2 = QuantileRule::Ceil(config.q2).EtaFor(m);
      }
      record = MultiQuantilePValue(set.reference, set.groups[0], eta1, eta2);
    } else {
      record = SubsamplingPValue(set.reference, set.groups[0], ties.seed);
    }
  } else if (config.method == "permutation") {
    if (config.permutations < 1) throw ConfigError("--L must be >= 1");
    std::vector<double> pooled(ref);
    pooled.insert(pooled.end(), cmp.begin(), cmp.end());
    record = PermutationPValue(pooled, ref.size(), PermutationStatistic::Parse(config.statistic, config.tau),
                               config.permutations, config.seed.value_or(DefaultSeed()));
  } else if (config.method == "ranksum") {
    RankSumMode mode = RankSumMode::kExact;
    if (config.mode == "normal") {
      mode = RankSumMode::kNormal;
    } else if (config.mode != "exact") {
      throw ConfigError("--mode must be exact or normal");
    }
    record = RankSumPValue(ref, cmp, mode);
  } else if (config.method == "ztest") {
    if (!given.count("--sigma")) throw ConfigError("ztest needs --sigma");
    if (!(config.sigma > 0.0)) throw ConfigError("--sigma must be positive");
    record = ZTestPValue(ref, cmp, config.sigma);
  } else {
    record = TTestPValue(ref, cmp);
  }
  record.group_id = id;
  out << RecordJson(record).dump() << "\n";
  return kExitOk;
}

}  // namespace

std::string_view Version() { return BATCHCONF_VERSION; }

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distribution-shift detection with batch conformal p-values and BH", "batchconf"};
  app.set_version_flag("--version", std::string(Version()));
  app.require_subcommand(1);

  DetectConfig detect;
  std::uint64_t detect_seed = 0;
  auto* cmd_detect = app.add_subcommand("detect", "Test comparison groups against a reference sample");
  cmd_detect->add_option("--reference", detect.reference, "Reference CSV");
  cmd_detect->add_option("--group", detect.group_paths, "Comparison group CSV (repeatable; id = file stem)");
  cmd_detect->add_option("--input", detect.input, "Long-format CSV holding several groups");
  cmd_detect->add_option("--group-column", detect.group_column, "Group label column of --input")->capture_default_str();
  cmd_detect->add_option("--reference-group", detect.reference_group, "Label of reference rows in --input")
      ->capture_default_str();
  cmd_detect->add_option("--outcome", detect.outcome, "Outcome column(s), comma separated")->capture_default_str();
  cmd_detect->add_option("--features", detect.features, "Feature columns, comma separated");
  cmd_detect->add_option("--score", detect.score, "Score kind")->capture_default_str();
  cmd_detect->add_option("--train-fraction", detect.train_fraction, "Reference share used to fit the score")
      ->capture_default_str();
  auto* detect_seed_opt = cmd_detect->add_option("--seed", detect_seed, "Seed for splitting and tie-breaking");
  cmd_detect->add_option("--quantile-rule", detect.quantile_rule, "rank, q-ceil or q-floor")->capture_default_str();
  cmd_detect->add_option("--quantile-value", detect.quantile_value, "Rank or quantile level")->capture_default_str();
  cmd_detect->add_option("--alpha", detect.alpha, "FDR level")->capture_default_str();
  cmd_detect->add_option("--tie-policy", detect.tie_policy, "none, noise or uniform-rank")->capture_default_str();
  cmd_detect->add_option("--arm-column", detect.arm_column, "Arm column for the empirical-cdf score");
  cmd_detect->add_option("--control-label", detect.control_label, "Control arm label")->capture_default_str();
  cmd_detect->add_option("--workers", detect.workers, "Threads for the per-group loop")->capture_default_str();
  cmd_detect->add_option("--output", detect.output, "Report path (default stdout)");

  SimulateConfig simulate;
  std::uint64_t simulate_seed = 0;
  std::int64_t simulate_replicates = 0;
  auto* cmd_simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario and write a CSV");
  cmd_simulate->add_option("scenario", simulate.scenario, "Scenario JSON")->required();
  cmd_simulate->add_option("--output", simulate.output, "CSV path (default stdout)");
  cmd_simulate->add_option("--workers", simulate.workers, "Replicate-level threads")->capture_default_str();
  auto* sim_seed_opt = cmd_simulate->add_option("--seed", simulate_seed, "Override the scenario seed");
  auto* sim_reps_opt = cmd_simulate->add_option("--replicates", simulate_replicates, "Override the replicate count");

  PValueConfig pvalue;
  std::uint64_t pvalue_seed = 0;
  auto* cmd_pvalue = app.add_subcommand("pvalue", "Compute one p-value for a reference/comparison pair");
  cmd_pvalue->add_option("method", pvalue.method, "batch, multiquantile, subsample, permutation, ranksum, ztest, ttest")
      ->required();
  cmd_pvalue->add_option("--ref", pvalue.ref, "Reference CSV")->required();
  cmd_pvalue->add_option("--cmp", pvalue.cmp, "Comparison CSV")->required();
  cmd_pvalue->add_option("--column", pvalue.column, "Value column")->capture_default_str();
  std::vector<CLI::Option*> method_flags{
      cmd_pvalue->add_option("--eta", pvalue.eta, "Comparison rank"),
      cmd_pvalue->add_option("--eta2", pvalue.eta2, "Upper comparison rank (multiquantile)"),
      cmd_pvalue->add_option("--q", pvalue.q, "Quantile level, eta = ceil(q m)"),
      cmd_pvalue->add_option("--q2", pvalue.q2, "Upper quantile level (multiquantile)"),
      cmd_pvalue->add_option("--L", pvalue.permutations, "Number of random permutations"),
      cmd_pvalue->add_option("--seed", pvalue_seed, "Seed"),
      cmd_pvalue->add_option("--statistic", pvalue.statistic, "mean-diff or quantile-diff"),
      cmd_pvalue->add_option("--tau", pvalue.tau, "Quantile level of quantile-diff"),
      cmd_pvalue->add_option("--mode", pvalue.mode, "exact or normal"),
      cmd_pvalue->add_option("--sigma", pvalue.sigma, "Known standard deviation"),
      cmd_pvalue->add_option("--tie-policy", pvalue.tie_policy, "none, noise or uniform-rank"),
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (cmd_detect->parsed()) {
      if (detect_seed_opt->count()) detect.seed = detect_seed;
      return RunDetect(detect, out);
    }
    if (cmd_simulate->parsed()) {
      if (sim_seed_opt->count()) simulate.seed = simulate_seed;
      if (sim_reps_opt->count()) simulate.replicates = simulate_replicates;
      return RunSimulate(simulate, out);
    }
    std::set<std::string> given;
    for (const auto* opt : method_flags) {
      if (opt->count()) given.insert(opt->get_name());
    }
    if (given.count("--seed")) pvalue.seed = pvalue_seed;
    return RunPValue(pvalue, given, out);
  } catch (const std::logic_error& e) {
    err << "batchconf: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "batchconf: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace batchconf
