#include "iccl/metric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "iccl/error.hpp"

namespace iccl {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidArgument("Distribution: empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("Distribution: entries must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("Distribution: entries must sum to 1");
}

Distribution Distribution::uniform(int n_states) {
  if (n_states < 1) throw InvalidArgument("Distribution::uniform: n_states must be >= 1");
  return Distribution(std::vector<double>(static_cast<std::size_t>(n_states), 1.0 / n_states));
}

int Distribution::argmax() const {
  return static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

double bhattacharyya_coefficient(const Distribution& p, const Distribution& q, double epsilon) {
  if (p.size() != q.size()) throw InvalidArgument("bhattacharyya: length mismatch");
  const double norm = 1.0 + epsilon * static_cast<double>(p.size());
  double bc = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) {
    const double ps = (p[y] + epsilon) / norm;
    const double qs = (q[y] + epsilon) / norm;
    bc += std::sqrt(ps * qs);
  }
  return bc;
}

double bhattacharyya(const Distribution& p, const Distribution& q, double epsilon) {
  // Clamp rounding noise so that identical inputs give exactly 0.
  return std::max(0.0, -std::log(bhattacharyya_coefficient(p, q, epsilon)));
}

namespace {

// exp(D(p*,p*) - D(a, p*)) reduces to a ratio of Bhattacharyya
// coefficients, which keeps the anchors exact: R(p*, p*) == 1 and
// R(uniform, p*) == 0 bit-for-bit.
struct Anchors {
  double bc_hat;
  double bc_self;
  double bc_uniform;
};

Anchors anchors(const Distribution& p_hat, const Distribution& p_star) {
  if (p_hat.size() != p_star.size()) throw InvalidArgument("normalized_performance: length mismatch");
  const auto uniform = Distribution::uniform(static_cast<int>(p_star.size()));
  Anchors a{bhattacharyya_coefficient(p_hat, p_star), bhattacharyya_coefficient(p_star, p_star),
            bhattacharyya_coefficient(uniform, p_star)};
  if (std::abs(a.bc_self - a.bc_uniform) <= 1e-12 * a.bc_self)
    throw DegenerateReference("normalized_performance: reference distribution is uniform");
  return a;
}

}  // namespace

double normalized_performance(const Distribution& p_hat, const Distribution& p_star) {
  const auto a = anchors(p_hat, p_star);
  return (a.bc_hat - a.bc_uniform) / (a.bc_self - a.bc_uniform);
}

double normalized_performance_literal(const Distribution& p_hat, const Distribution& p_star) {
  const auto a = anchors(p_hat, p_star);
  return (a.bc_hat / a.bc_self - 1.0) / (a.bc_uniform / a.bc_self - 1.0);
}

Distribution one_hot(StateIndex y, int n_states) {
  if (y < 0 || y >= n_states) throw InvalidArgument("one_hot: state out of range");
  std::vector<double> v(static_cast<std::size_t>(n_states), 0.0);
  v[static_cast<std::size_t>(y)] = 1.0;
  return Distribution(std::move(v));
}

std::vector<double> stationary_distribution(const TaskSpec& task) {
  const int n = task.n_states();
  std::vector<double> pi(static_cast<std::size_t>(n), 1.0 / n), next(static_cast<std::size_t>(n));
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int x = 0; x < n; ++x)
      for (int y = 0; y < n; ++y) next[y] += pi[x] * task.prob(x, y);
    double delta = 0.0;
    for (int y = 0; y < n; ++y) delta = std::max(delta, std::abs(next[y] - pi[y]));
    // Lazy step avoids oscillation on periodic chains.
    for (int y = 0; y < n; ++y) pi[y] = 0.5 * (pi[y] + next[y]);
    if (delta < 1e-14) break;
  }
  return pi;
}

double retention(std::span<const std::pair<StateIndex, Distribution>> predictions, const TaskSpec& target,
                 StateWeighting weighting) {
  const int n = target.n_states();
  std::vector<const Distribution*> by_state(static_cast<std::size_t>(n), nullptr);
  for (const auto& [x, dist] : predictions) {
    if (x < 0 || x >= n) throw InvalidArgument("retention: state out of range");
    if (by_state[x]) throw InvalidArgument("retention: duplicate prediction for a state");
    by_state[x] = &dist;
  }
  std::vector<double> weights(static_cast<std::size_t>(n), 1.0 / n);
  if (weighting == StateWeighting::Stationary) weights = stationary_distribution(target);
  double total = 0.0;
  for (int x = 0; x < n; ++x) {
    if (!by_state[x]) throw InvalidArgument("retention: missing prediction for state " + std::to_string(x));
    total += weights[x] * normalized_performance(*by_state[x], Distribution(ground_truth_row(target, x)));
  }
  return total;
}

double student_t975(double dof) {
  boost::math::students_t dist(dof);
  return boost::math::quantile(dist, 0.975);
}

CurveSummary aggregate(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw InsufficientSamples("aggregate: need at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, student_t975(static_cast<double>(n - 1)) * sd / std::sqrt(static_cast<double>(n)), n};
}

double average_retention(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("average_retention: empty curve");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double average_retention(std::span<const RetentionMeasurement> curve) {
  std::vector<double> values;
  values.reserve(curve.size());
  for (const auto& m : curve) values.push_back(m.value);
  return average_retention(values);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
  if (a.size() < 2) throw InvalidArgument("pearson: need at least 2 points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation("pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double sign_test_p(int wins, int n) {
  if (n < 0 || wins < 0 || wins > n) throw InvalidArgument("sign_test_p: need 0 <= wins <= n");
  double p = 0.0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

std::string format_real(double v) { return fmt::format("{:.9g}", v); }

std::string to_csv_row(const RetentionMeasurement& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{}", m.method, m.n_states, to_string(m.schedule),
                     m.with_identifiers ? 1 : 0, m.phi, m.k, m.phi_i, m.phi_d, m.t_eval, m.seed, format_real(m.value));
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::vector<RetentionMeasurement> parse_measurements_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("results csv: empty file");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  const char* required[] = {"method", "n_states", "schedule", "with_identifiers", "phi", "K",
                            "phi_i",  "phi_d",    "t_eval",   "seed",             "retention"};
  for (const char* name : required)
    if (!col.contains(name)) throw SchemaError(std::string("results csv: missing column '") + name + "'");

  std::vector<RetentionMeasurement> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw SchemaError("results csv: ragged row: " + line);
    RetentionMeasurement m;
    m.method = f[col["method"]];
    m.n_states = std::stoi(f[col["n_states"]]);
    m.schedule = schedule_kind_from_string(f[col["schedule"]]);
    const auto& ids = f[col["with_identifiers"]];
    m.with_identifiers = ids == "1" || ids == "true";
    m.phi = std::stoi(f[col["phi"]]);
    m.k = std::stoi(f[col["K"]]);
    m.phi_i = std::stoi(f[col["phi_i"]]);
    m.phi_d = std::stoi(f[col["phi_d"]]);
    m.t_eval = std::stol(f[col["t_eval"]]);
    m.seed = std::stoull(f[col["seed"]]);
    m.value = std::stod(f[col["retention"]]);
    rows.push_back(std::move(m));
  }
  return rows;
}

std::vector<RetentionMeasurement> read_measurements_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open results file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_measurements_csv(buf.str());
}

}  // namespace iccl
