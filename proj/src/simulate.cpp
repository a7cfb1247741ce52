#include "batchconf/simulate.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace batchconf {

using nlohmann::json;

namespace {

constexpr std::uint64_t kScenarioStream = std::numeric_limits<std::uint64_t>::max();

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stream ids inside one replicate.
enum Stream : std::uint64_t {
  kDataStream = 0,
  kTieStream = 1,
  kMethodStreamBase = 16,
};

Observation Scalar(double v) { return Observation{{}, {v}}; }

double DrawUnivariate(const Scenario& s, bool null_group, std::mt19937_64& rng) {
  const double location = null_group ? 0.0 : s.delta;
  const double spread = null_group ? 1.0 : s.alt_scale;
  if (s.distribution == Scenario::Distribution::kNormal) {
    std::normal_distribution<double> z(0.0, 1.0);
    return location + spread * s.sigma * z(rng);
  }
  std::bernoulli_distribution coin(0.5);
  double x = 0.0;
  if (coin(rng)) {
    std::cauchy_distribution<double> cauchy(0.0, 1.0);
    x = cauchy(rng);
  } else {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    x = unif(rng);
  }
  return location + spread * x;
}

struct MultivariateModel {
  std::vector<std::array<double, 3>> beta1;  // feature_dim rows
  std::vector<std::array<double, 3>> beta2;
  std::vector<double> beta3;
  std::array<std::array<double, 3>, 3> chol{};  // lower Cholesky factor of Sigma
};

MultivariateModel MakeModel(const Scenario& s) {
  std::mt19937_64 rng(DeriveSeed(s.seed, kScenarioStream, 2));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MultivariateModel model;
  const auto d = static_cast<std::size_t>(s.feature_dim);
  model.beta1.resize(d);
  model.beta2.resize(d);
  model.beta3.resize(d);
  for (auto& row : model.beta1) {
    for (double& v : row) v = unif(rng);
  }
  for (auto& row : model.beta2) {
    for (double& v : row) v = unif(rng);
  }
  for (double& v : model.beta3) v = unif(rng);
  const auto sigma = OutcomeNoiseCovariance();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = sigma[static_cast<std::size_t>(3 * i + j)];
      for (int k = 0; k < j; ++k) acc -= model.chol[i][k] * model.chol[j][k];
      model.chol[i][j] = (i == j) ? std::sqrt(acc) : acc / model.chol[j][j];
    }
  }
  return model;
}

Observation DrawMultivariate(const Scenario& s, const MultivariateModel& model, double t,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto d = static_cast<std::size_t>(s.feature_dim);
  while (true) {
    Observation obs;
    obs.features.resize(d);
    for (double& v : obs.features) v = unif(rng);
    std::array<double, 3> mean{};
    double b3x = 0.0;
    for (int j = 0; j < 3; ++j) {
      double lin = 0.0;
      double quad = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        lin += obs.features[i] * model.beta1[i][static_cast<std::size_t>(j)];
        quad += obs.features[i] * model.beta2[i][static_cast<std::size_t>(j)];
      }
      mean[static_cast<std::size_t>(j)] = lin + t * quad * quad;
    }
    for (std::size_t i = 0; i < d; ++i) b3x += obs.features[i] * model.beta3[i];
    const std::array<double, 3> e{z(rng), z(rng), z(rng)};
    std::array<double, 3> y{};
    for (int i = 0; i < 3; ++i) {
      double acc = mean[static_cast<std::size_t>(i)];
      for (int k = 0; k <= i; ++k) acc += model.chol[i][k] * e[static_cast<std::size_t>(k)];
      y[static_cast<std::size_t>(i)] = acc;
    }
    const double shape = (t * std::abs(b3x) + y[0] * y[0] + y[1] * y[1]) / 2.0;
    const double a = std::abs(y[0]);
    const double b = std::abs(y[1]) + 0.5 * std::abs(y[2]);
    // Zero parameters have probability zero but can occur in floating point.
    if (!(shape > 0.0) || !(a > 0.0) || !(b > 0.0)) continue;
    const double scale = s.gamma_param == Scenario::GammaParam::kShapeScale ? 2.0 : 0.5;
    std::gamma_distribution<double> g4(shape, scale);
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double y4 = g4(rng);
    const double xa = ga(rng);
    const double xb = gb(rng);
    const double y5 = xa / (xa + xb);
    if (!std::isfinite(y4) || !std::isfinite(y5)) continue;
    obs.outcome = {y[0], y[1], y[2], y4, y5};
    return obs;
  }
}

std::string GroupId(std::size_t k) { return "g" + std::to_string(k + 1); }

QuantileRule ParseRule(const json& j) {
  if (j.is_number()) return QuantileRule::Ceil(j.get<double>());
  return QuantileRule::Parse(j.at("rule").get<std::string>(), j.at("value").get<double>());
}

GroupSizeRule ParseSizes(const json& j) {
  GroupSizeRule rule;
  const auto kind = j.value("rule", std::string("uniform"));
  if (kind == "fixed") {
    rule.kind = GroupSizeRule::Kind::kFixed;
    rule.fixed = j.at("size").get<std::int64_t>();
    if (rule.fixed < 1) throw std::invalid_argument("fixed group size must be >= 1");
  } else if (kind == "uniform") {
    rule.kind = GroupSizeRule::Kind::kUniform;
    rule.min = j.at("min").get<std::int64_t>();
    rule.max = j.at("max").get<std::int64_t>();
    if (rule.min < 1 || rule.max < rule.min) throw std::invalid_argument("uniform group sizes need 1 <= min <= max");
  } else if (kind == "shifted_poisson") {
    rule.kind = GroupSizeRule::Kind::kShiftedPoisson;
    rule.shift = j.value("shift", std::int64_t{5});
    rule.lambda = j.value("lambda", 20.0);
    if (rule.shift < 1 || !(rule.lambda > 0.0)) throw std::invalid_argument("shifted Poisson sizes need shift >= 1, lambda > 0");
  } else {
    throw std::invalid_argument("unknown group size rule '" + kind + "'");
  }
  return rule;
}

MethodSpec ParseMethod(const json& j) {
  MethodSpec m;
  if (j.is_string()) {
    m.name = j.get<std::string>();
  } else {
    m.name = j.at("name").get<std::string>();
    m.label = j.value("label", std::string());
    if (j.contains("quantile")) m.quantile = ParseRule(j.at("quantile"));
    m.q1 = j.value("q1", m.q1);
    m.q2 = j.value("q2", m.q2);
    m.statistic = j.value("statistic", m.statistic);
    m.tau = j.value("tau", m.tau);
    m.permutations = j.value("L", m.permutations);
    const auto mode = j.value("mode", std::string("exact"));
    if (mode == "exact") {
      m.ranksum_mode = RankSumMode::kExact;
    } else if (mode == "normal") {
      m.ranksum_mode = RankSumMode::kNormal;
    } else {
      throw std::invalid_argument("unknown rank-sum mode '" + mode + "'");
    }
    if (j.contains("score")) m.score = j.at("score").get<std::string>();
  }
  static const std::set<std::string> known{"batch",  "multiquantile", "subsampling", "partitioned",
                                           "ztest",  "ttest",         "permutation", "ranksum"};
  if (!known.count(m.name)) throw std::invalid_argument("unknown method '" + m.name + "'");
  if (m.label.empty()) m.label = m.name;
  if (m.name == "permutation") {
    PermutationStatistic::Parse(m.statistic, m.tau);
    if (m.permutations < 1) throw std::invalid_argument("permutation method needs L >= 1");
  }
  if (m.name == "multiquantile" && !(0.0 < m.q1 && m.q1 < m.q2 && m.q2 <= 1.0)) {
    throw std::invalid_argument("multiquantile needs 0 < q1 < q2 <= 1");
  }
  return m;
}

ScoreSpec BuildScore(const std::string& name, const Scenario& s,
                     const std::vector<Observation>& training) {
  ScoreOptions opts;
  opts.knn_k = s.knn_k;
  if (name == "A" || name == "mahalanobis") return FitScore(ScoreKind::kMahalanobis, training, opts);
  if (name == "B" || name == "sequential-mahalanobis") {
    return FitScore(ScoreKind::kSequentialMahalanobis, training, opts);
  }
  if (name == "C") {
    opts.component_order = {4, 3, 2, 1, 0};
    opts.misspecified_order = true;
    return FitScore(ScoreKind::kSequentialMahalanobis, training, opts);
  }
  const ScoreKind kind = ParseScoreKind(name);
  if (kind == ScoreKind::kIdentity || kind == ScoreKind::kNegatedIdentity) return FitScore(kind, {}, opts);
  return FitScore(kind, training, opts);
}

void ValidateScore(const std::string& name, const Scenario& s) {
  static const std::set<std::string> uni{"identity", "negated-identity"};
  static const std::set<std::string> multi{"A", "B", "C", "mahalanobis", "sequential-mahalanobis"};
  const bool ok = s.kind == Scenario::Kind::kUnivariate ? uni.count(name) > 0 : multi.count(name) > 0;
  if (!ok) throw std::invalid_argument("score '" + name + "' is not available for this scenario kind");
}

std::vector<double> RawValues(const SampleGroup& g) {
  std::vector<double> out;
  out.reserve(g.rows.size());
  for (const auto& obs : g.rows) out.push_back(obs.outcome.front());
  return out;
}

std::string FormatNumber(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::array<double, 9> OutcomeNoiseCovariance() {
  std::array<double, 9> sigma{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) sigma[static_cast<std::size_t>(3 * i + j)] = 2.0 - std::abs(i - j);
  }
  return sigma;
}

std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t replicate, std::uint64_t stream) {
  std::uint64_t h = SplitMix64(master);
  h = SplitMix64(h ^ SplitMix64(replicate ^ 0xA0761D6478BD642FULL));
  h = SplitMix64(h ^ SplitMix64(stream ^ 0xE7037ED1A0B428DBULL));
  return h;
}

Scenario ParseScenario(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    Scenario s;
    s.name = j.value("name", s.name);
    const auto kind = j.value("kind", std::string("univariate"));
    if (kind == "univariate") {
      s.kind = Scenario::Kind::kUnivariate;
    } else if (kind == "multivariate") {
      s.kind = Scenario::Kind::kMultivariate;
    } else {
      throw std::invalid_argument("unknown scenario kind '" + kind + "'");
    }
    const auto dist = j.value("distribution", std::string("normal"));
    if (dist == "normal") {
      s.distribution = Scenario::Distribution::kNormal;
    } else if (dist == "cauchy_uniform_mixture") {
      s.distribution = Scenario::Distribution::kCauchyUniformMixture;
    } else {
      throw std::invalid_argument("unknown distribution '" + dist + "'");
    }
    s.sigma = j.value("sigma", s.sigma);
    s.delta = j.value("delta", s.delta);
    s.alt_scale = j.value("alt_scale", s.alt_scale);
    s.n = j.value("n", s.n);
    s.groups = j.value("K", s.groups);
    if (j.contains("group_size")) s.group_size = ParseSizes(j.at("group_size"));
    s.null_proportion = j.value("null_proportion", s.null_proportion);
    s.n_train = j.value("n_train", s.n_train);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    if (j.contains("t_allocation")) s.t_allocation = j.at("t_allocation").get<std::vector<std::int64_t>>();
    const auto gamma = j.value("gamma_parameterization", std::string("shape_scale"));
    if (gamma == "shape_scale") {
      s.gamma_param = Scenario::GammaParam::kShapeScale;
    } else if (gamma == "shape_rate") {
      s.gamma_param = Scenario::GammaParam::kShapeRate;
    } else {
      throw std::invalid_argument("unknown gamma parameterization '" + gamma + "'");
    }
    s.knn_k = j.value("knn_k", s.knn_k);
    s.score = j.value("score", s.kind == Scenario::Kind::kUnivariate ? std::string("identity") : std::string("B"));
    if (j.contains("quantile")) s.quantile = ParseRule(j.at("quantile"));
    if (j.contains("alpha")) {
      s.alphas = j.at("alpha").is_array() ? j.at("alpha").get<std::vector<double>>()
                                          : std::vector<double>{j.at("alpha").get<double>()};
    }
    s.replicates = j.value("replicates", s.replicates);
    s.seed = j.value("seed", s.seed);
    if (j.contains("tie_policy")) {
      const auto& t = j.at("tie_policy");
      if (t.is_string()) {
        s.ties.policy = ParseTiePolicy(t.get<std::string>());
      } else {
        s.ties.policy = ParseTiePolicy(t.value("policy", std::string("noise")));
        s.ties.noise_sd = t.value("noise_sd", s.ties.noise_sd);
        s.ties.scale_by_iqr = t.value("scale_by_iqr", s.ties.scale_by_iqr);
      }
    }
    if (j.contains("methods")) {
      for (const auto& m : j.at("methods")) s.methods.push_back(ParseMethod(m));
    }

    if (s.methods.empty()) throw std::invalid_argument("scenario lists no methods");
    std::set<std::string> labels;
    for (const auto& m : s.methods) {
      if (!labels.insert(m.label).second) throw std::invalid_argument("duplicate method label '" + m.label + "'");
      if (s.kind == Scenario::Kind::kMultivariate && (m.name == "ztest" || m.name == "ttest")) {
        throw std::invalid_argument("z/t-tests need a univariate scenario");
      }
      if (m.score) ValidateScore(*m.score, s);
    }
    ValidateScore(s.score, s);
    if (!(s.null_proportion >= 0.0 && s.null_proportion <= 1.0)) {
      throw std::invalid_argument("null_proportion must lie in [0, 1]");
    }
    if (s.replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    if (s.n < 1) throw std::invalid_argument("n must be >= 1");
    if (s.groups < 1) throw std::invalid_argument("K must be >= 1");
    if (!(s.sigma > 0.0) || !(s.alt_scale > 0.0)) throw std::invalid_argument("sigma and alt_scale must be positive");
    if (s.alphas.empty()) throw std::invalid_argument("alpha grid is empty");
    for (double a : s.alphas) {
      if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha values must lie in (0, 1)");
    }
    if (s.kind == Scenario::Kind::kMultivariate) {
      std::int64_t total = 0;
      for (auto c : s.t_allocation) {
        if (c < 0) throw std::invalid_argument("t_allocation entries must be >= 0");
        total += c;
      }
      if (!j.contains("K")) s.groups = total;
      if (total != s.groups) throw std::invalid_argument("t_allocation must sum to K");
      if (s.n_train < 6 || s.feature_dim < 1) throw std::invalid_argument("multivariate scenario needs n_train >= 6, feature_dim >= 1");
    }
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid scenario JSON: ") + e.what());
  }
}

Scenario LoadScenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseScenario(buf.str());
}

std::vector<std::int64_t> ScenarioGroupSizes(const Scenario& s) {
  std::mt19937_64 rng(DeriveSeed(s.seed, kScenarioStream, 1));
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(s.groups));
  for (auto& size : sizes) {
    switch (s.group_size.kind) {
      case GroupSizeRule::Kind::kFixed: size = s.group_size.fixed; break;
      case GroupSizeRule::Kind::kUniform: {
        std::uniform_int_distribution<std::int64_t> u(s.group_size.min, s.group_size.max);
        size = u(rng);
        break;
      }
      case GroupSizeRule::Kind::kShiftedPoisson: {
        std::poisson_distribution<std::int64_t> pois(s.group_size.lambda);
        size = s.group_size.shift + pois(rng);
        break;
      }
    }
  }
  return sizes;
}

SimulatedData GenerateUnivariate(const Scenario& s, std::uint64_t replicate_seed) {
  if (s.kind != Scenario::Kind::kUnivariate) throw std::invalid_argument("scenario is not univariate");
  std::mt19937_64 rng(replicate_seed);
  SimulatedData data;
  data.reference.id = "reference";
  data.reference.rows.reserve(static_cast<std::size_t>(s.n));
  for (std::int64_t i = 0; i < s.n; ++i) data.reference.rows.push_back(Scalar(DrawUnivariate(s, true, rng)));
  const auto sizes = ScenarioGroupSizes(s);
  const auto nulls = static_cast<std::size_t>(std::llround(s.null_proportion * static_cast<double>(s.groups)));
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const bool is_null = k < nulls || (s.delta == 0.0 && s.alt_scale == 1.0);
    SampleGroup g;
    g.id = GroupId(k);
    g.rows.reserve(static_cast<std::size_t>(sizes[k]));
    for (std::int64_t i = 0; i < sizes[k]; ++i) g.rows.push_back(Scalar(DrawUnivariate(s, is_null, rng)));
    data.groups.push_back(std::move(g));
    data.truth.is_null.push_back(is_null);
  }
  return data;
}

SimulatedData GenerateMultivariate(const Scenario& s, std::uint64_t replicate_seed) {
  if (s.kind != Scenario::Kind::kMultivariate) throw std::invalid_argument("scenario is not multivariate");
  const MultivariateModel model = MakeModel(s);
  std::mt19937_64 rng(replicate_seed);
  SimulatedData data;
  for (std::int64_t i = 0; i < s.n_train; ++i) data.training.push_back(DrawMultivariate(s, model, 0.0, rng));
  data.reference.id = "reference";
  for (std::int64_t i = 0; i < s.n; ++i) data.reference.rows.push_back(DrawMultivariate(s, model, 0.0, rng));
  const auto sizes = ScenarioGroupSizes(s);
  std::size_t k = 0;
  for (std::size_t level = 0; level < s.t_allocation.size(); ++level) {
    for (std::int64_t c = 0; c < s.t_allocation[level]; ++c, ++k) {
      SampleGroup g;
      g.id = GroupId(k);
      for (std::int64_t i = 0; i < sizes[k]; ++i) {
        g.rows.push_back(DrawMultivariate(s, model, static_cast<double>(level), rng));
      }
      data.groups.push_back(std::move(g));
      data.truth.is_null.push_back(level == 0);
    }
  }
  return data;
}

SimulatedData Generate(const Scenario& s, std::uint64_t replicate_seed) {
  return s.kind == Scenario::Kind::kUnivariate ? GenerateUnivariate(s, replicate_seed)
                                               : GenerateMultivariate(s, replicate_seed);
}

std::vector<std::vector<MetricRecord>> RunReplicate(const Scenario& s, std::int64_t replicate,
                                                    WeightCache& cache) {
  const auto rep = static_cast<std::uint64_t>(replicate);
  const SimulatedData data = Generate(s, DeriveSeed(s.seed, rep, kDataStream));
  TruthLabels truth = data.truth;
  const std::size_t count = data.groups.size();

  std::map<std::string, ScoreSet> scored;
  auto scores_for = [&](const std::string& name) -> const ScoreSet& {
    auto it = scored.find(name);
    if (it != scored.end()) return it->second;
    const ScoreSpec spec = BuildScore(name, s, data.training);
    TieOptions ties = s.ties;
    ties.seed = DeriveSeed(s.seed, rep, kTieStream);
    return scored.emplace(name, ApplyScores(spec, data.reference.rows, data.groups, ties)).first->second;
  };

  std::vector<std::vector<MetricRecord>> out;
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    const MethodSpec& method = s.methods[mi];
    const std::uint64_t method_seed = DeriveSeed(s.seed, rep, kMethodStreamBase + mi);
    const QuantileRule rule = method.quantile.value_or(s.quantile);
    const std::string score_name = method.score.value_or(s.score);
    std::vector<double> p(count, 1.0);

    if (method.name == "ztest" || method.name == "ttest") {
      const auto ref = RawValues(data.reference);
      for (std::size_t k = 0; k < count; ++k) {
        const auto g = RawValues(data.groups[k]);
        p[k] = method.name == "ztest" ? ZTestPValue(ref, g, s.sigma).p : TTestPValue(ref, g).p;
      }
    } else {
      const ScoreSet& set = scores_for(score_name);
      BatchOptions batch_opts;
      batch_opts.cache = &cache;
      if (method.name == "batch") {
        for (std::size_t k = 0; k < count; ++k) {
          const auto eta = rule.EtaFor(static_cast<std::int64_t>(set.groups[k].size()));
          p[k] = BatchConformalPValue(set.reference, set.groups[k], eta, batch_opts).p;
        }
      } else if (method.name == "partitioned") {
        DetectOptions opts;
        opts.cache = &cache;
        const auto res = PartitionedDetect(set, std::span(&rule, 1), s.alphas.front(), method_seed, opts);
        for (std::size_t k = 0; k < count; ++k) p[k] = res.pvalues[k].p;
      } else if (method.name == "multiquantile") {
        for (std::size_t k = 0; k < count; ++k) {
          const auto size = static_cast<std::int64_t>(set.groups[k].size());
          const auto eta1 = QuantileRule::Ceil(method.q1).EtaFor(size);
          const auto eta2 = QuantileRule::Ceil(method.q2).EtaFor(size);
          p[k] = MultiQuantilePValue(set.reference, set.groups[k], eta1, eta2, batch_opts).p;
        }
      } else if (method.name == "subsampling") {
        for (std::size_t k = 0; k < count; ++k) {
          p[k] = SubsamplingPValue(set.reference, set.groups[k], DeriveSeed(method_seed, k)).p;
        }
      } else if (method.name == "permutation") {
        const auto stat = PermutationStatistic::Parse(method.statistic, method.tau);
        for (std::size_t k = 0; k < count; ++k) {
          std::vector<double> pooled(set.reference);
          pooled.insert(pooled.end(), set.groups[k].begin(), set.groups[k].end());
          p[k] = PermutationPValue(pooled, set.reference.size(), stat, method.permutations,
                                   DeriveSeed(method_seed, k))
                     .p;
        }
      } else if (method.name == "ranksum") {
        for (std::size_t k = 0; k < count; ++k) {
          p[k] = RankSumPValue(set.reference, set.groups[k], method.ranksum_mode).p;
        }
      }
    }

    std::vector<MetricRecord> per_alpha;
    for (double alpha : s.alphas) per_alpha.push_back(Evaluate(BenjaminiHochberg(p, alpha), truth));
    out.push_back(std::move(per_alpha));
  }
  return out;
}

SimResult RunMonteCarlo(const Scenario& s, int workers) {
  const auto reps = static_cast<std::size_t>(s.replicates);
  std::vector<std::vector<std::vector<MetricRecord>>> results(reps);
  WeightCache cache;
  const auto threads = static_cast<std::size_t>(std::clamp<std::int64_t>(workers, 1, s.replicates));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t r = w; r < reps; r += threads) {
        results[r] = RunReplicate(s, static_cast<std::int64_t>(r), cache);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SimResult result;
  const double count = static_cast<double>(reps);
  for (std::size_t mi = 0; mi < s.methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < s.alphas.size(); ++ai) {
      double fdr = 0.0;
      double power = 0.0;
      for (std::size_t r = 0; r < reps; ++r) {
        fdr += results[r][mi][ai].fdp;
        power += results[r][mi][ai].power;
      }
      fdr /= count;
      power /= count;
      double fdr_ss = 0.0;
      double power_ss = 0.0;
      for (std::size_t r = 0; r < reps; ++r) {
        fdr_ss += (results[r][mi][ai].fdp - fdr) * (results[r][mi][ai].fdp - fdr);
        power_ss += (results[r][mi][ai].power - power) * (results[r][mi][ai].power - power);
      }
      SimRow row;
      row.scenario = s.name;
      row.method = s.methods[mi].label;
      row.alpha = s.alphas[ai];
      row.fdr = fdr;
      row.power = power;
      row.replicates = s.replicates;
      if (reps > 1) {
        row.fdr_se = std::sqrt(fdr_ss / (count - 1.0)) / std::sqrt(count);
        row.power_se = std::sqrt(power_ss / (count - 1.0)) / std::sqrt(count);
      } else {
        row.warning = "single replicate: standard errors undefined";
      }
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

const SimRow& SimResult::Find(const std::string& method, double alpha) const {
  for (const auto& row : rows) {
    if (row.method == method && std::abs(row.alpha - alpha) < 1e-12) return row;
  }
  throw std::out_of_range("no result row for method '" + method + "'");
}

std::string SimResultCsv(const SimResult& result) {
  std::string out = "scenario,method,alpha,fdr,fdr_se,power,power_se,replicates,warning\n";
  for (const auto& row : result.rows) {
    out += row.scenario + "," + row.method + "," + FormatNumber(row.alpha) + "," +
           FormatNumber(row.fdr) + "," + FormatNumber(row.fdr_se) + "," + FormatNumber(row.power) +
           "," + FormatNumber(row.power_se) + "," + std::to_string(row.replicates) + "," +
           row.warning + "\n";
  }
  return out;
}

}  // namespace batchconf
