#include "propensity/logistic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace propensity::lr {
namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 60;

double softplus(double m) { return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

std::vector<double> margins(const DenseMatrix& z, std::span<const double> w, double b) {
  std::vector<double> m(z.rows(), b);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    for (std::size_t j = 0; j < w.size(); ++j) m[i] += w[j] * row[j];
  }
  return m;
}

double l1_norm(std::span<const double> w) {
  return std::accumulate(w.begin(), w.end(), 0.0, [](double s, double v) { return s + std::abs(v); });
}

double full_objective(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b,
                      const Penalty& pen) {
  return smooth_objective(z, y, w, b, pen.l2) + pen.l1 * l1_norm(w);
}

double norm(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

std::vector<double> LrModel::standardize(std::span<const double> x) const {
  if (x.size() != w.size()) throw Error("logistic model: expected " + std::to_string(w.size()) + " inputs");
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - means[j]) / scales[j];
  return z;
}

double LrModel::predict_margin(std::span<const double> x) const {
  const auto z = standardize(x);
  return std::inner_product(z.begin(), z.end(), w.begin(), b);
}

double LrModel::predict_proba(std::span<const double> x) const { return sigmoid(predict_margin(x)); }

double smooth_objective(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b, double l2) {
  const auto m = margins(z, w, b);
  double loss = 0;
  for (std::size_t i = 0; i < m.size(); ++i) loss += softplus(m[i]) - (y[i] != 0 ? m[i] : 0.0);
  if (!m.empty()) loss /= static_cast<double>(m.size());
  return loss + 0.5 * l2 * std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
}

std::vector<double> smooth_gradient(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b,
                                    double l2) {
  const auto m = margins(z, w, b);
  const std::size_t d = w.size();
  std::vector<double> g(d + 1, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double r = sigmoid(m[i]) - (y[i] != 0 ? 1.0 : 0.0);
    const auto row = z.row(i);
    for (std::size_t j = 0; j < d; ++j) g[j] += r * row[j];
    g[d] += r;
  }
  const double n = std::max<double>(1.0, static_cast<double>(m.size()));
  for (auto& v : g) v /= n;
  for (std::size_t j = 0; j < d; ++j) g[j] += l2 * w[j];
  return g;
}

std::vector<double> pseudo_gradient(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b,
                                    const Penalty& penalty) {
  auto g = smooth_gradient(z, y, w, b, penalty.l2);
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] != 0) {
      g[j] += penalty.l1 * sign(w[j]);
    } else if (g[j] + penalty.l1 < 0) {
      g[j] += penalty.l1;
    } else if (g[j] - penalty.l1 > 0) {
      g[j] -= penalty.l1;
    } else {
      g[j] = 0;
    }
  }
  return g;
}

LrModel fit(const DenseMatrix& x, std::span<const int> y, const FitOptions& options,
            std::vector<std::string> feature_names, FitTrace* trace) {
  const Penalty& pen = options.penalty;
  if (!(pen.l1 >= 0) || !(pen.l2 >= 0)) throw Error("logistic: penalty strengths must be non-negative");
  if (!(options.tolerance > 0)) throw Error("logistic: tolerance must be positive");
  if (y.size() != x.rows()) throw Error("logistic: labels do not match rows");
  const auto n_pos = std::count_if(y.begin(), y.end(), [](int v) { return v != 0; });
  if (n_pos == 0 || static_cast<std::size_t>(n_pos) == y.size()) throw Error("logistic: both classes are required");
  for (double v : x.values())
    if (!std::isfinite(v)) throw Error("logistic: inputs must be finite");
  if (!feature_names.empty() && feature_names.size() != x.cols())
    throw Error("logistic: feature names do not match columns");

  const std::size_t n = x.rows(), d = x.cols();
  LrModel model;
  model.penalty = pen;
  model.feature_names = std::move(feature_names);
  model.means.assign(d, 0.0);
  model.scales.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (x(i, j) - mean) * (x(i, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    model.means[j] = mean;
    model.scales[j] = sd > 1e-12 * (1.0 + std::abs(mean)) ? sd : 1.0;
  }
  DenseMatrix z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z(i, j) = (x(i, j) - model.means[j]) / model.scales[j];

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  double f = full_objective(z, y, w, b, pen);
  FitTrace local;
  local.objective.push_back(f);

  for (int it = 0; it < options.max_iterations; ++it) {
    const auto pg = pseudo_gradient(z, y, w, b, pen);
    local.gradient_norm = norm(pg);
    if (local.gradient_norm < options.tolerance) {
      local.converged = true;
      break;
    }

    // Free coordinates: nonzero weights, zero weights the pseudo-gradient
    // would move, and the bias.
    std::vector<std::size_t> free;
    for (std::size_t j = 0; j < d; ++j)
      if (w[j] != 0 || pg[j] != 0) free.push_back(j);
    free.push_back(d);
    const auto nf = static_cast<Eigen::Index>(free.size());

    const auto m = margins(z, w, b);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nf, nf);
    Eigen::VectorXd zi(nf);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(m[i]);
      const double wt = p * (1 - p);
      for (Eigen::Index a = 0; a < nf; ++a) zi(a) = free[static_cast<std::size_t>(a)] == d ? 1.0 : z(i, free[static_cast<std::size_t>(a)]);
      h.selfadjointView<Eigen::Lower>().rankUpdate(zi, wt);
    }
    h = h.selfadjointView<Eigen::Lower>();
    h /= static_cast<double>(n);
    for (Eigen::Index a = 0; a + 1 < nf; ++a) h(a, a) += pen.l2;

    Eigen::VectorXd rhs(nf);
    for (Eigen::Index a = 0; a < nf; ++a) rhs(a) = -pg[free[static_cast<std::size_t>(a)]];
    Eigen::VectorXd step;
    double ridge = 0.0;
    const double scale = 1.0 + h.diagonal().cwiseAbs().maxCoeff();
    for (int attempt = 0; attempt < 20; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(h + ridge * Eigen::MatrixXd::Identity(nf, nf));
      if (llt.info() == Eigen::Success) {
        step = llt.solve(rhs);
        if (step.allFinite()) break;
      }
      ridge = ridge == 0 ? 1e-12 * scale : ridge * 10;
      step.resize(0);
    }

    std::vector<double> dir(d + 1, 0.0);
    if (step.size() == nf) {
      for (Eigen::Index a = 0; a < nf; ++a) dir[free[static_cast<std::size_t>(a)]] = step(a);
    } else {
      for (std::size_t j = 0; j <= d; ++j) dir[j] = -pg[j];
    }
    // Keep only coordinates moving against the pseudo-gradient.
    for (std::size_t j = 0; j < d; ++j)
      if (dir[j] * pg[j] >= 0) dir[j] = 0;
    if (std::inner_product(dir.begin(), dir.end(), pg.begin(), 0.0) >= 0)
      for (std::size_t j = 0; j <= d; ++j) dir[j] = -pg[j];

    std::vector<double> orthant(d);
    for (std::size_t j = 0; j < d; ++j) orthant[j] = w[j] != 0 ? sign(w[j]) : -sign(pg[j]);

    bool accepted = false;
    double t = 1.0;
    std::vector<double> w_new(d);
    for (int k = 0; k < kMaxHalvings; ++k, t /= 2) {
      for (std::size_t j = 0; j < d; ++j) {
        w_new[j] = w[j] + t * dir[j];
        if (sign(w_new[j]) != orthant[j]) w_new[j] = 0;
      }
      const double b_new = b + t * dir[d];
      double decrease = pg[d] * (b_new - b);
      for (std::size_t j = 0; j < d; ++j) decrease += pg[j] * (w_new[j] - w[j]);
      const double f_new = full_objective(z, y, w_new, b_new, pen);
      if (f_new <= f + kArmijo * decrease) {
        w = w_new;
        b = b_new;
        f = f_new;
        accepted = true;
        break;
      }
    }
    local.iterations = it + 1;
    if (!accepted) break;
    local.objective.push_back(f);
  }
  if (!local.converged) {
    const auto pg = pseudo_gradient(z, y, w, b, pen);
    local.gradient_norm = norm(pg);
    local.converged = local.gradient_norm < options.tolerance;
  }

  if (pen.l1 == 0 && pen.l2 == 0) {
    const auto m = margins(z, w, b);
    bool separated = true;
    for (std::size_t i = 0; i < n && separated; ++i) separated = (y[i] != 0) ? m[i] > 0 : m[i] < 0;
    if (separated)
      throw Error("logistic: training data is perfectly separable; use a nonzero l2_strength");
  }

  model.w = std::move(w);
  model.b = b;
  if (trace) *trace = std::move(local);
  return model;
}

nlohmann::json to_json(const LrModel& m) {
  return {{"w", m.w},           {"b", m.b},         {"means", m.means},
          {"scales", m.scales}, {"l1", m.penalty.l1}, {"l2", m.penalty.l2},
          {"feature_names", m.feature_names}};
}

LrModel model_from_json(const nlohmann::json& j) {
  LrModel m;
  m.w = j.at("w").get<std::vector<double>>();
  m.b = j.at("b").get<double>();
  m.means = j.at("means").get<std::vector<double>>();
  m.scales = j.at("scales").get<std::vector<double>>();
  m.penalty.l1 = j.value("l1", 0.0);
  m.penalty.l2 = j.value("l2", 0.0);
  m.feature_names = j.value("feature_names", std::vector<std::string>{});
  if (m.means.size() != m.w.size() || m.scales.size() != m.w.size())
    throw Error("logistic model: w, means and scales differ in length");
  for (double s : m.scales)
    if (!(s > 0)) throw Error("logistic model: scales must be positive");
  return m;
}

}  // namespace propensity::lr
