#include "iccl/actr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iccl/error.hpp"
#include "iccl/metric.hpp"
#include "iccl/nelder_mead.hpp"
#include "iccl/rng.hpp"

namespace iccl::actr {

namespace {

// ln sum_i exp(-d * log_gap_i), stable for large practice counts.
double log_sum_power(std::span<const double> log_gaps, double d) {
  // The smallest gap dominates; log_gaps are unsorted so find it once.
  double top = -std::numeric_limits<double>::infinity();
  for (double g : log_gaps) top = std::max(top, -d * g);
  double acc = 0.0;
  for (double g : log_gaps) acc += std::exp(-d * g - top);
  return top + std::log(acc);
}

std::vector<double> log_gaps(const PracticeSchedule& practice, double t) {
  if (practice.times.empty()) throw InvalidArgument("activation: empty practice schedule");
  std::vector<double> out;
  out.reserve(practice.times.size());
  for (long ti : practice.times) {
    const double gap = t - static_cast<double>(ti);
    if (!(gap > 0.0)) throw InvalidArgument("activation: evaluation time must be after every practice");
    out.push_back(std::log(gap));
  }
  return out;
}

}  // namespace

double activation(const ActrParams& params, const PracticeSchedule& practice, double t) {
  if (!(params.kappa > 0.0)) throw InvalidArgument("activation: kappa must be positive");
  const auto gaps = log_gaps(practice, t);
  return -params.d * std::log(params.kappa) + log_sum_power(gaps, params.d);
}

double retention_from_activation(double w, double gamma, double s) {
  const double z = (w - gamma) / s;
  // Branches keep exp() from overflowing at either tail.
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double retention_hat(const ActrParams& params, const PracticeSchedule& practice, double t) {
  return retention_from_activation(activation(params, practice, t), params.gamma, params.s);
}

std::array<double, 3> HumanReference::covariance_diagonal() const {
  return {sigma[0] * sigma[0], sigma[1] * sigma[1], sigma[2] * sigma[2]};
}

HumanReference default_human_reference() { return {}; }

HumanReference human_reference_from_json(const nlohmann::json& j) {
  HumanReference ref;
  const auto& p = j.at("parameters");
  const char* names[] = {"d", "s", "gamma"};
  for (int i = 0; i < 3; ++i) {
    ref.mu[i] = p.at(names[i]).at("mu").get<double>();
    ref.sigma[i] = p.at(names[i]).at("sigma").get<double>();
    if (!(ref.sigma[i] > 0.0)) throw InvalidArgument("human reference: sigma must be positive");
  }
  return ref;
}

nlohmann::json to_json(const HumanReference& ref) {
  nlohmann::json p;
  const char* names[] = {"d", "s", "gamma"};
  for (int i = 0; i < 3; ++i) p[names[i]] = {{"mu", ref.mu[i]}, {"sigma", ref.sigma[i]}};
  return {{"version", 1}, {"covariance", "diagonal"}, {"parameters", p}};
}

double hrs_md(std::span<const double, 3> theta_hat, const HumanReference& reference) {
  double d2 = 0.0;
  for (int j = 0; j < 3; ++j) {
    if (!(reference.sigma[j] > 0.0)) throw InvalidArgument("hrs_md: sigma must be positive");
    const double z = (theta_hat[j] - reference.mu[j]) / reference.sigma[j];
    d2 += z * z;
  }
  return d2;
}

double hrs_md(const ActrParams& params, const HumanReference& reference) {
  const std::array<double, 3> theta{params.d, params.s, params.gamma};
  return hrs_md(std::span<const double, 3>(theta), reference);
}

double hrs_score(double d_squared) {
  if (d_squared < 0.0) throw InvalidArgument("hrs_score: d_squared must be >= 0");
  return std::exp(-0.5 * d_squared);
}

namespace {

struct PreparedPoint {
  std::vector<double> log_gaps;
  // Gaps as inclusive runs of consecutive integers; filled when t and all practice times are integral.
  std::vector<std::pair<long, long>> runs;
  double measured;
};

struct PreparedCurves {
  std::vector<std::vector<PreparedPoint>> curves;
  std::size_t n_points = 0;
  bool integral = true;
  std::vector<double> log_table;  ///< ln g for g = 0..max gap (entry 0 unused)
};

std::vector<std::pair<long, long>> gap_runs(const PracticeSchedule& practice, long t) {
  std::vector<long> gaps;
  gaps.reserve(practice.times.size());
  for (long ti : practice.times) gaps.push_back(t - ti);
  std::sort(gaps.begin(), gaps.end());
  std::vector<std::pair<long, long>> runs;
  for (long g : gaps) {
    if (!runs.empty() && g <= runs.back().second + 1) {
      // repeated practice times fall back to the generic path
      if (g != runs.back().second + 1) return {};
      runs.back().second = g;
    } else {
      runs.emplace_back(g, g);
    }
  }
  return runs;
}

PreparedCurves prepare(std::span<const CurveData> curves) {
  PreparedCurves out;
  long max_gap = 0;
  for (const auto& c : curves) {
    std::vector<PreparedPoint> pts;
    for (const auto& [t, r] : c.points) {
      PreparedPoint pt{log_gaps(c.practice, t), {}, r};
      if (out.integral && t == std::floor(t) && t < 1e12) {
        pt.runs = gap_runs(c.practice, static_cast<long>(t));
        if (pt.runs.empty()) out.integral = false;
        else max_gap = std::max(max_gap, pt.runs.back().second);
      } else {
        out.integral = false;
      }
      pts.push_back(std::move(pt));
    }
    out.n_points += pts.size();
    out.curves.push_back(std::move(pts));
  }
  if (out.integral && max_gap > 0) {
    out.log_table.resize(static_cast<std::size_t>(max_gap) + 1, 0.0);
    for (long g = 1; g <= max_gap; ++g) out.log_table[g] = std::log(static_cast<double>(g));
  } else {
    out.integral = false;
  }
  return out;
}

double prepared_mse(const ActrParams& p, const PreparedCurves& data) {
  const double shift = -p.d * std::log(p.kappa);
  double sse = 0.0;
  if (data.integral) {
    // prefix[g] = sum_{h<=g} h^-d, shared by every point
    std::vector<double> prefix(data.log_table.size(), 0.0);
    for (std::size_t g = 1; g < prefix.size(); ++g) prefix[g] = prefix[g - 1] + std::exp(-p.d * data.log_table[g]);
    for (const auto& curve : data.curves)
      for (const auto& pt : curve) {
        double sum = 0.0;
        for (const auto& [lo, hi] : pt.runs) sum += prefix[hi] - prefix[lo - 1];
        const double e = retention_from_activation(shift + std::log(sum), p.gamma, p.s) - pt.measured;
        sse += e * e;
      }
  } else {
    for (const auto& curve : data.curves)
      for (const auto& pt : curve) {
        const double w = shift + log_sum_power(pt.log_gaps, p.d);
        const double e = retention_from_activation(w, p.gamma, p.s) - pt.measured;
        sse += e * e;
      }
  }
  return sse / static_cast<double>(data.n_points);
}

ActrParams from_unit(std::span<const double> u, const ParamBounds& b) {
  auto at = [&](int i) { return b.lower[i] + std::clamp(u[i], 0.0, 1.0) * (b.upper[i] - b.lower[i]); };
  return {at(0), at(1), at(2), at(3)};
}

}  // namespace

double pooled_mse(const ActrParams& params, std::span<const CurveData> curves) {
  const auto data = prepare(curves);
  if (data.n_points == 0) throw InvalidArgument("pooled_mse: no points");
  return prepared_mse(params, data);
}

std::vector<std::vector<double>> latin_hypercube(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> pts(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(dim)));
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < dim; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    for (int i = 0; i < n; ++i) pts[i][j] = (perm[i] + rng.uniform()) / n;
  }
  return pts;
}

ActrParams canonicalize(const ActrParams& params, const ParamBounds& bounds) {
  ActrParams out = params;
  const double invariant = params.gamma + params.d * std::log(params.kappa);
  out.gamma = std::clamp(invariant, bounds.lower[3], bounds.upper[3]);
  out.kappa = std::clamp(std::exp((invariant - out.gamma) / params.d), bounds.lower[2], bounds.upper[2]);
  return out;
}

FitResult fit(std::span<const CurveData> curves, const FitOptions& options) {
  const auto data = prepare(curves);
  if (data.n_points < 4) throw InvalidArgument("fit: need at least 4 measurements");

  const auto& b = options.bounds;
  auto objective = [&](std::span<const double> u) { return prepared_mse(from_unit(u, b), data); };
  NelderMeadOptions nm;
  nm.diameter_tol = options.diameter_tol;
  nm.max_iterations = options.max_iterations;
  nm.initial_step = 0.1;
  nm.lower.assign(4, 0.0);
  nm.upper.assign(4, 1.0);

  const auto starts = latin_hypercube(options.starts, 4, options.seed);
  NelderMeadResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    auto r = nelder_mead(objective, start, nm);
    // Strict comparison: ties keep the earlier start.
    if (r.value < best.value) best = std::move(r);
  }

  FitResult result;
  result.params = from_unit(best.x, b);
  if (options.canonical_kappa) result.params = canonicalize(result.params, b);
  result.mse = prepared_mse(result.params, data);
  result.starts_tried = options.starts;
  result.n_points = data.n_points;
  for (const auto& c : curves) {
    std::vector<double> measured, fitted;
    for (const auto& [t, r] : c.points) {
      measured.push_back(r);
      fitted.push_back(retention_hat(result.params, c.practice, t));
    }
    try {
      result.per_curve_pearson.emplace_back(pearson(measured, fitted));
    } catch (const std::exception&) {
      result.per_curve_pearson.emplace_back(std::nullopt);
    }
  }
  return result;
}

nlohmann::json to_json(const FitResult& r, const std::string& method, const HumanReference& reference) {
  nlohmann::json pearson = nlohmann::json::array();
  for (const auto& p : r.per_curve_pearson) pearson.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  const double d2 = hrs_md(r.params, reference);
  return {{"method", method},         {"d", r.params.d},         {"s", r.params.s},
          {"kappa", r.params.kappa},  {"gamma", r.params.gamma}, {"mse", r.mse},
          {"pearson", pearson},       {"hrs_md", d2},            {"hrs_score", hrs_score(d2)},
          {"starts_tried", r.starts_tried}, {"n_points", r.n_points}};
}

}  // namespace iccl::actr
