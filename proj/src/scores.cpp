#include "batchconf/scores.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace batchconf {

namespace {

constexpr double kMaxCondition = 1e12;

std::vector<double> Concat(std::span<const double> head, const std::vector<double>& y,
                           const std::vector<std::size_t>& picks) {
  std::vector<double> out(head.begin(), head.end());
  out.reserve(head.size() + picks.size());
  for (std::size_t idx : picks) out.push_back(y[idx]);
  return out;
}

double Mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view ScoreKindName(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kIdentity: return "identity";
    case ScoreKind::kNegatedIdentity: return "negated-identity";
    case ScoreKind::kAbsResidual: return "abs-residual";
    case ScoreKind::kCqr: return "cqr";
    case ScoreKind::kMahalanobis: return "mahalanobis";
    case ScoreKind::kSequentialMahalanobis: return "sequential-mahalanobis";
    case ScoreKind::kEmpiricalCdf: return "empirical-cdf";
  }
  return "unknown";
}

ScoreKind ParseScoreKind(std::string_view name) {
  for (auto kind : {ScoreKind::kIdentity, ScoreKind::kNegatedIdentity, ScoreKind::kAbsResidual,
                    ScoreKind::kCqr, ScoreKind::kMahalanobis,
                    ScoreKind::kSequentialMahalanobis, ScoreKind::kEmpiricalCdf}) {
    if (ScoreKindName(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown score kind '" + std::string(name) + "'");
}

std::string_view TiePolicyName(TiePolicy policy) {
  switch (policy) {
    case TiePolicy::kNone: return "none";
    case TiePolicy::kNoise: return "noise";
    case TiePolicy::kUniformRank: return "uniform-rank";
  }
  return "unknown";
}

TiePolicy ParseTiePolicy(std::string_view name) {
  for (auto p : {TiePolicy::kNone, TiePolicy::kNoise, TiePolicy::kUniformRank}) {
    if (TiePolicyName(p) == name) return p;
  }
  throw std::invalid_argument("unknown tie policy '" + std::string(name) + "'");
}

double EmpiricalQuantile(std::vector<double> values, double tau) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::domain_error("quantile level must lie in (0, 1]");
  const auto size = static_cast<double>(values.size());
  auto k = static_cast<std::int64_t>(std::ceil(tau * size - 1e-12));
  k = std::clamp<std::int64_t>(k, 1, static_cast<std::int64_t>(values.size()));
  auto nth = values.begin() + (k - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

// ---------------------------------------------------------------------------
// KnnRegressor

KnnRegressor::KnnRegressor(std::vector<std::vector<double>> inputs, std::vector<double> targets,
                           int k)
    : targets_(std::move(targets)) {
  if (targets_.empty()) throw std::invalid_argument("k-NN regressor needs training rows");
  if (inputs.size() != targets_.size()) {
    throw std::invalid_argument("k-NN inputs and targets differ in length");
  }
  if (k < 1) throw std::invalid_argument("k-NN requires k >= 1");
  k_ = std::min<int>(k, static_cast<int>(targets_.size()));
  const std::size_t dim = inputs.front().size();
  center_.assign(dim, 0.0);
  scale_.assign(dim, 1.0);
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = 0.0;
    for (const auto& row : inputs) mean += row.at(c);
    mean /= static_cast<double>(inputs.size());
    double var = 0.0;
    for (const auto& row : inputs) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(inputs.size());
    center_[c] = mean;
    scale_[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  inputs_ = std::move(inputs);
  for (auto& row : inputs_) {
    if (row.size() != dim) throw std::invalid_argument("ragged k-NN inputs");
    for (std::size_t c = 0; c < dim; ++c) row[c] = (row[c] - center_[c]) / scale_[c];
  }
}

std::vector<double> KnnRegressor::NeighbourTargets(std::span<const double> x) const {
  if (x.size() != center_.size()) throw std::invalid_argument("k-NN query has wrong dimension");
  std::vector<std::pair<double, std::size_t>> dist(inputs_.size());
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    double d = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double diff = (x[c] - center_[c]) / scale_[c] - inputs_[i][c];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  auto kth = dist.begin() + k_;
  std::partial_sort(dist.begin(), kth, dist.end());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(k_));
  for (auto it = dist.begin(); it != kth; ++it) out.push_back(targets_[it->second]);
  return out;
}

double KnnRegressor::PredictMean(std::span<const double> x) const {
  return Mean(NeighbourTargets(x));
}

double KnnRegressor::PredictQuantile(std::span<const double> x, double level) const {
  return EmpiricalQuantile(NeighbourTargets(x), level);
}

// ---------------------------------------------------------------------------
// ScoreSpec

struct ScoreSpec::Impl {
  ScoreKind kind = ScoreKind::kIdentity;
  ScoreOptions options;
  bool check_features = false;
  std::size_t feature_dim = 0;
  std::size_t outcome_dim = 0;

  // abs-residual / cqr
  double center = 0.0;
  double q_lo = 0.0;
  double q_hi = 0.0;
  KnnRegressor scalar_model;

  // mahalanobis kinds: position j residualizes y[apply_target[j]] against
  // the features plus y[apply_inputs[j]].
  std::vector<std::size_t> apply_target;
  std::vector<std::vector<std::size_t>> apply_inputs;
  std::vector<bool> has_model;
  std::vector<KnnRegressor> models;
  std::vector<double> fallback_mean;
  Eigen::MatrixXd precision;
  bool ridge_applied = false;

  std::vector<double> ecdf;

  void Check(const Observation& obs) const {
    if (check_features && obs.features.size() != feature_dim) {
      std::ostringstream msg;
      msg << "observation has " << obs.features.size() << " features, score expects "
          << feature_dim;
      throw std::invalid_argument(msg.str());
    }
    if (obs.outcome.size() < outcome_dim) {
      std::ostringstream msg;
      msg << "observation has " << obs.outcome.size() << " outcome components, score expects "
          << outcome_dim;
      throw std::invalid_argument(msg.str());
    }
  }

  double Scalar(const Observation& obs) const { return obs.outcome[options.outcome_index]; }

  Eigen::VectorXd ResidualVector(const Observation& obs) const {
    const std::size_t p = apply_target.size();
    Eigen::VectorXd r(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
      double pred = fallback_mean[j];
      if (has_model[j]) {
        const auto in = Concat(obs.features, obs.outcome, apply_inputs[j]);
        pred = models[j].PredictMean(in);
      }
      r(static_cast<Eigen::Index>(j)) = obs.outcome[apply_target[j]] - pred;
    }
    return r;
  }
};

const ScoreSpec::Impl& ScoreSpec::impl() const {
  if (!impl_) throw std::logic_error("score spec used before fitting");
  return *impl_;
}

ScoreKind ScoreSpec::kind() const { return impl().kind; }

bool ScoreSpec::ridge_applied() const { return impl().ridge_applied; }

double ScoreSpec::operator()(const Observation& obs) const {
  const Impl& s = impl();
  s.Check(obs);
  switch (s.kind) {
    case ScoreKind::kIdentity: return s.Scalar(obs);
    case ScoreKind::kNegatedIdentity: return -s.Scalar(obs);
    case ScoreKind::kAbsResidual: {
      const double pred = s.feature_dim > 0 ? s.scalar_model.PredictMean(obs.features) : s.center;
      return std::abs(s.Scalar(obs) - pred);
    }
    case ScoreKind::kCqr: {
      double lo = s.q_lo;
      double hi = s.q_hi;
      if (s.feature_dim > 0) {
        lo = s.scalar_model.PredictQuantile(obs.features, s.options.cqr_alpha / 2.0);
        hi = s.scalar_model.PredictQuantile(obs.features, 1.0 - s.options.cqr_alpha / 2.0);
      }
      const double y = s.Scalar(obs);
      return std::max(lo - y, y - hi);
    }
    case ScoreKind::kMahalanobis:
    case ScoreKind::kSequentialMahalanobis: {
      const Eigen::VectorXd r = s.ResidualVector(obs);
      return r.dot(s.precision * r);
    }
    case ScoreKind::kEmpiricalCdf: {
      const double y = s.Scalar(obs);
      const auto below = std::upper_bound(s.ecdf.begin(), s.ecdf.end(), y) - s.ecdf.begin();
      return static_cast<double>(below) / static_cast<double>(s.ecdf.size());
    }
  }
  throw std::logic_error("unhandled score kind");
}

std::vector<double> ScoreSpec::Residual(const Observation& obs) const {
  const Impl& s = impl();
  if (s.kind != ScoreKind::kMahalanobis && s.kind != ScoreKind::kSequentialMahalanobis) {
    throw std::logic_error("residual vectors exist only for mahalanobis scores");
  }
  s.Check(obs);
  const Eigen::VectorXd r = s.ResidualVector(obs);
  return {r.data(), r.data() + r.size()};
}

std::vector<double> ScoreSpec::Precision() const {
  const Impl& s = impl();
  std::vector<double> out;
  for (Eigen::Index i = 0; i < s.precision.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.precision.cols(); ++j) out.push_back(s.precision(i, j));
  }
  return out;
}

namespace {

void CheckTraining(const std::vector<Observation>& training, std::size_t min_outcome) {
  if (training.empty()) throw std::invalid_argument("score fitting needs training rows");
  const std::size_t d = training.front().features.size();
  const std::size_t p = training.front().outcome.size();
  if (p < min_outcome) throw std::invalid_argument("training outcome has too few components");
  for (std::size_t i = 0; i < training.size(); ++i) {
    if (training[i].features.size() != d || training[i].outcome.size() != p) {
      throw std::invalid_argument("training row " + std::to_string(i) +
                                  " has inconsistent dimensions");
    }
  }
}

void FitMahalanobis(ScoreSpec::Impl& s, const std::vector<Observation>& training) {
  const std::size_t p = training.front().outcome.size();
  const std::size_t d = s.feature_dim;
  if (training.size() <= p) {
    throw std::invalid_argument("mahalanobis score needs more training rows than outcome components");
  }
  std::vector<std::size_t> order = s.options.component_order;
  if (s.kind == ScoreKind::kMahalanobis || order.empty()) {
    order.resize(p);
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
      if (sorted.size() != p || sorted[j] != j) {
        throw std::invalid_argument("component_order must be a permutation of the outcome indices");
      }
    }
  }
  const bool sequential = s.kind == ScoreKind::kSequentialMahalanobis;
  const bool misspecified = sequential && s.options.misspecified_order;

  s.apply_target.resize(p);
  s.apply_inputs.resize(p);
  s.has_model.resize(p);
  s.models.resize(p);
  s.fallback_mean.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    std::size_t fit_target = order[j];
    std::vector<std::size_t> fit_inputs;
    if (sequential) fit_inputs.assign(order.begin(), order.begin() + static_cast<long>(j));
    if (misspecified) {
      fit_target = j;
      fit_inputs.resize(j);
      std::iota(fit_inputs.begin(), fit_inputs.end(), std::size_t{0});
      auto used = std::vector<std::size_t>(order.begin(), order.begin() + static_cast<long>(j));
      std::sort(used.begin(), used.end());
      s.apply_inputs[j] = used;
    } else {
      s.apply_inputs[j] = fit_inputs;
    }
    s.apply_target[j] = order[j];

    std::vector<double> targets;
    targets.reserve(training.size());
    for (const auto& row : training) targets.push_back(row.outcome[fit_target]);
    s.fallback_mean[j] = Mean(targets);
    s.has_model[j] = d + fit_inputs.size() > 0;
    if (s.has_model[j]) {
      std::vector<std::vector<double>> inputs;
      inputs.reserve(training.size());
      for (const auto& row : training) inputs.push_back(Concat(row.features, row.outcome, fit_inputs));
      s.models[j] = KnnRegressor(std::move(inputs), std::move(targets), s.options.knn_k);
    }
  }

  const auto rows = static_cast<Eigen::Index>(training.size());
  const auto cols = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd resid(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    resid.row(i) = s.ResidualVector(training[static_cast<std::size_t>(i)]).transpose();
  }
  const Eigen::RowVectorXd mean = resid.colwise().mean();
  const Eigen::MatrixXd centered = resid.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows - 1);
  cov = 0.5 * (cov + cov.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const bool ill = !(lo > 0.0) || hi / lo > kMaxCondition;
  if (ill) {
    const double trace = cov.trace();
    if (s.options.ridge == RidgePolicy::kOff || !(trace > 0.0)) {
      std::ostringstream msg;
      msg << "residual covariance is singular or ill-conditioned (eigenvalues in [" << lo << ", "
          << hi << "]); enable ridge regularization";
      throw std::invalid_argument(msg.str());
    }
    cov.diagonal().array() += 1e-8 * trace / static_cast<double>(p);
    s.ridge_applied = true;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("residual covariance is not positive definite; enable ridge regularization");
  }
  s.precision = llt.solve(Eigen::MatrixXd::Identity(cols, cols));
  s.precision = 0.5 * (s.precision + s.precision.transpose());
}

}  // namespace

ScoreSpec FitScore(ScoreKind kind, const std::vector<Observation>& training,
                   const ScoreOptions& options) {
  auto s = std::make_shared<ScoreSpec::Impl>();
  s->kind = kind;
  s->options = options;
  if (options.knn_k < 1) throw std::invalid_argument("knn_k must be >= 1");
  switch (kind) {
    case ScoreKind::kIdentity:
    case ScoreKind::kNegatedIdentity:
      s->outcome_dim = options.outcome_index + 1;
      break;
    case ScoreKind::kEmpiricalCdf: {
      CheckTraining(training, options.outcome_index + 1);
      std::vector<double> control;
      control.reserve(training.size());
      for (const auto& row : training) control.push_back(row.outcome[options.outcome_index]);
      return EmpiricalCdfScore(std::move(control), options.outcome_index);
    }
    case ScoreKind::kAbsResidual:
    case ScoreKind::kCqr: {
      CheckTraining(training, options.outcome_index + 1);
      if (kind == ScoreKind::kCqr && !(options.cqr_alpha > 0.0 && options.cqr_alpha < 1.0)) {
        throw std::invalid_argument("cqr_alpha must lie in (0, 1)");
      }
      s->check_features = true;
      s->feature_dim = training.front().features.size();
      s->outcome_dim = options.outcome_index + 1;
      std::vector<double> y;
      y.reserve(training.size());
      for (const auto& row : training) y.push_back(row.outcome[options.outcome_index]);
      if (s->feature_dim > 0) {
        std::vector<std::vector<double>> x;
        x.reserve(training.size());
        for (const auto& row : training) x.push_back(row.features);
        s->scalar_model = KnnRegressor(std::move(x), std::move(y), options.knn_k);
      } else if (kind == ScoreKind::kAbsResidual) {
        s->center = options.center == CenterEstimator::kMedian ? EmpiricalQuantile(y, 0.5) : Mean(y);
      } else {
        s->q_lo = EmpiricalQuantile(y, options.cqr_alpha / 2.0);
        s->q_hi = EmpiricalQuantile(y, 1.0 - options.cqr_alpha / 2.0);
      }
      break;
    }
    case ScoreKind::kMahalanobis:
    case ScoreKind::kSequentialMahalanobis:
      CheckTraining(training, 1);
      s->check_features = true;
      s->feature_dim = training.front().features.size();
      s->outcome_dim = training.front().outcome.size();
      FitMahalanobis(*s, training);
      break;
  }
  return ScoreSpec(std::move(s));
}

ScoreSpec EmpiricalCdfScore(std::vector<double> control_outcomes, std::size_t outcome_index) {
  if (control_outcomes.empty()) throw std::invalid_argument("empirical CDF score needs a nonempty control arm");
  auto s = std::make_shared<ScoreSpec::Impl>();
  s->kind = ScoreKind::kEmpiricalCdf;
  s->options.outcome_index = outcome_index;
  s->outcome_dim = outcome_index + 1;
  std::sort(control_outcomes.begin(), control_outcomes.end());
  s->ecdf = std::move(control_outcomes);
  return ScoreSpec(std::move(s));
}

// ---------------------------------------------------------------------------
// Tie breaking

namespace {

void RequireDistinct(const std::vector<double>& reference,
                     const std::vector<std::vector<double>>& groups, const char* what) {
  std::vector<double> all(reference);
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  for (double v : all) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite score");
  }
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw std::invalid_argument(what);
  }
}

}  // namespace

ScoreSet MakeScoreSet(std::vector<double> reference, std::vector<std::string> group_ids,
                      std::vector<std::vector<double>> groups, const TieOptions& ties) {
  if (group_ids.size() != groups.size()) throw std::invalid_argument("group ids and groups differ in length");
  ScoreSet set;
  set.policy = ties.policy;
  set.seed = ties.seed;
  std::mt19937_64 rng(ties.seed);

  switch (ties.policy) {
    case TiePolicy::kNone:
      RequireDistinct(reference, groups, "tied scores with tie policy 'none'; use noise or uniform-rank");
      break;
    case TiePolicy::kNoise: {
      if (!(ties.noise_sd > 0.0)) throw std::invalid_argument("noise sd must be positive");
      double sd = ties.noise_sd;
      if (ties.scale_by_iqr) {
        std::vector<double> all(reference);
        for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
        double iqr = 0.0;
        if (!all.empty()) iqr = EmpiricalQuantile(all, 0.75) - EmpiricalQuantile(all, 0.25);
        sd *= (iqr > 0.0 && std::isfinite(iqr)) ? iqr : 1.0;
      }
      set.noise_sd = sd;
      std::normal_distribution<double> noise(0.0, sd);
      for (double& v : reference) v += noise(rng);
      for (auto& g : groups) {
        for (double& v : g) v += noise(rng);
      }
      RequireDistinct(reference, groups, "noise too small to separate tied scores");
      break;
    }
    case TiePolicy::kUniformRank: {
      struct Slot {
        double value;
        double key;
        double* target;
      };
      std::vector<Slot> slots;
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (double& v : reference) slots.push_back({v, unif(rng), &v});
      for (auto& g : groups) {
        for (double& v : g) slots.push_back({v, unif(rng), &v});
      }
      for (const auto& s : slots) {
        if (!std::isfinite(s.value)) throw std::invalid_argument("non-finite score");
      }
      std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
        return a.value != b.value ? a.value < b.value : a.key < b.key;
      });
      for (std::size_t r = 0; r < slots.size(); ++r) *slots[r].target = static_cast<double>(r + 1);
      break;
    }
  }
  std::sort(reference.begin(), reference.end());
  set.reference = std::move(reference);
  set.group_ids = std::move(group_ids);
  set.groups = std::move(groups);
  return set;
}

ScoreSet ApplyScores(const ScoreSpec& spec, const std::vector<Observation>& reference,
                     const std::vector<SampleGroup>& groups, const TieOptions& ties) {
  std::vector<ScoreSpec> specs(groups.size(), spec);
  return ApplyScores(spec, reference, specs, groups, ties);
}

ScoreSet ApplyScores(const ScoreSpec& reference_spec, const std::vector<Observation>& reference,
                     const std::vector<ScoreSpec>& group_specs,
                     const std::vector<SampleGroup>& groups, const TieOptions& ties) {
  if (group_specs.size() != groups.size()) {
    throw std::invalid_argument("need one score spec per comparison group");
  }
  std::vector<double> ref;
  ref.reserve(reference.size());
  for (const auto& obs : reference) ref.push_back(reference_spec(obs));
  std::vector<std::string> ids;
  std::vector<std::vector<double>> scored;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    ids.push_back(groups[k].id);
    std::vector<double> g;
    g.reserve(groups[k].rows.size());
    for (const auto& obs : groups[k].rows) g.push_back(group_specs[k](obs));
    scored.push_back(std::move(g));
  }
  return MakeScoreSet(std::move(ref), std::move(ids), std::move(scored), ties);
}

}  // namespace batchconf
