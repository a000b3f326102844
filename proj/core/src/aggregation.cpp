#include "nsda/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace nsda::agg {

using nlohmann::json;

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double clamp_unit(double v) { return std::clamp(v, kDsClamp, 1.0 - kDsClamp); }

// log a_i and log b_i: per-instance label likelihood under truth 1 / 0.
void ds_log_ab(const LabelMatrix& y, const DsTheta& theta, std::vector<double>& la,
               std::vector<double>& lb) {
  const std::size_t n = y.n, r = y.r;
  std::vector<double> log_a1(r), log_a0(r), log_b1(r), log_b0(r);
  for (std::size_t j = 0; j < r; ++j) {
    const double a = clamp_unit(theta.alpha[j]);
    const double b = clamp_unit(theta.beta[j]);
    log_a1[j] = std::log(a);
    log_a0[j] = std::log1p(-a);
    log_b0[j] = std::log(b);
    log_b1[j] = std::log1p(-b);
  }
  la.assign(n, 0.0);
  lb.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      if (y.at(i, j)) {
        sa += log_a1[j];
        sb += log_b1[j];
      } else {
        sa += log_a0[j];
        sb += log_b0[j];
      }
    }
    la[i] = sa;
    lb[i] = sb;
  }
}

double log_sum_exp(double x, double y) {
  const double hi = std::max(x, y);
  return hi + std::log(std::exp(x - hi) + std::exp(y - hi));
}

void check_nonempty(const PredictionMatrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw std::invalid_argument("empty prediction matrix");
}

}  // namespace

std::vector<int> threshold_labels(std::span<const double> scores, double tau) {
  std::vector<int> labels(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) labels[i] = scores[i] >= tau ? 1 : 0;
  return labels;
}

std::vector<double> majority_vote(const PredictionMatrix& matrix) {
  check_nonempty(matrix);
  const std::size_t n = matrix.rows(), r = matrix.cols();
  std::vector<double> mu(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double votes = 0.0;
    for (std::size_t j = 0; j < r; ++j) votes += matrix.hard_label(i, j);
    mu[i] = votes / static_cast<double>(r);
  }
  return mu;
}

std::vector<double> mean_aggregate(const PredictionMatrix& matrix) {
  check_nonempty(matrix);
  const std::size_t n = matrix.rows(), r = matrix.cols();
  std::vector<double> mu(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < r; ++j) total += matrix.at(i, j);
    mu[i] = total / static_cast<double>(r);
  }
  return mu;
}

std::vector<double> weighted_mean(const PredictionMatrix& matrix, const StackingModel& stacking) {
  check_nonempty(matrix);
  if (stacking.weights.size() != matrix.cols())
    throw std::invalid_argument("stacking weight count does not match detector count");
  const std::size_t n = matrix.rows(), r = matrix.cols();
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = stacking.intercept;
    for (std::size_t j = 0; j < r; ++j) z += stacking.weights[j] * matrix.at(i, j);
    mu[i] = sigmoid(z);
  }
  return mu;
}

StackingModel fit_stacking(const PredictionMatrix& matrix, const std::vector<int>& labels,
                           double l2, double grad_tol) {
  check_nonempty(matrix);
  const std::size_t n = matrix.rows(), r = matrix.cols();
  if (labels.size() != n) throw std::invalid_argument("label count mismatch");
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_pos || !has_neg) throw DataError("stacking labels are single-class");

  // Parameters: [w_0..w_{r-1}, intercept]. Objective: sum of logistic losses
  // plus (l2/2)||w||^2, intercept unpenalized.
  const std::size_t dim = r + 1;
  std::vector<double> theta(dim, 0.0);

  auto objective = [&](const std::vector<double>& th) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = th[r];
      for (std::size_t j = 0; j < r; ++j) z += th[j] * matrix.at(i, j);
      // softplus(z) - y z
      f += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) -
           static_cast<double>(labels[i]) * z;
    }
    for (std::size_t j = 0; j < r; ++j) f += 0.5 * l2 * th[j] * th[j];
    return f;
  };

  std::vector<double> grad(dim), step(dim);
  std::vector<double> hess(dim * dim);

  for (int iter = 0; iter < 200; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = theta[r];
      for (std::size_t j = 0; j < r; ++j) z += theta[j] * matrix.at(i, j);
      const double p = sigmoid(z);
      const double resid = p - static_cast<double>(labels[i]);
      const double s = std::max(p * (1.0 - p), 1e-12);
      for (std::size_t j = 0; j <= r; ++j) {
        const double xj = j < r ? matrix.at(i, j) : 1.0;
        grad[j] += resid * xj;
        for (std::size_t l = j; l <= r; ++l) {
          const double xl = l < r ? matrix.at(i, l) : 1.0;
          hess[j * dim + l] += s * xj * xl;
        }
      }
    }
    for (std::size_t j = 0; j < r; ++j) {
      grad[j] += l2 * theta[j];
      hess[j * dim + j] += l2;
    }
    for (std::size_t j = 0; j < dim; ++j)
      for (std::size_t l = 0; l < j; ++l) hess[j * dim + l] = hess[l * dim + j];

    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    if (gmax < grad_tol) break;

    // Cholesky solve of H step = grad, with a small ridge fallback.
    auto solve = [&](double ridge) {
      std::vector<double> chol = hess;
      for (std::size_t j = 0; j < dim; ++j) chol[j * dim + j] += ridge;
      for (std::size_t c = 0; c < dim; ++c) {
        double d = chol[c * dim + c];
        for (std::size_t k2 = 0; k2 < c; ++k2) d -= chol[c * dim + k2] * chol[c * dim + k2];
        if (d <= 0.0) return false;
        const double root = std::sqrt(d);
        chol[c * dim + c] = root;
        for (std::size_t rr = c + 1; rr < dim; ++rr) {
          double v = chol[rr * dim + c];
          for (std::size_t k2 = 0; k2 < c; ++k2) v -= chol[rr * dim + k2] * chol[c * dim + k2];
          chol[rr * dim + c] = v / root;
        }
      }
      for (std::size_t rr = 0; rr < dim; ++rr) {
        double v = grad[rr];
        for (std::size_t k2 = 0; k2 < rr; ++k2) v -= chol[rr * dim + k2] * step[k2];
        step[rr] = v / chol[rr * dim + rr];
      }
      for (std::size_t rr = dim; rr-- > 0;) {
        double v = step[rr];
        for (std::size_t k2 = rr + 1; k2 < dim; ++k2) v -= chol[k2 * dim + rr] * step[k2];
        step[rr] = v / chol[rr * dim + rr];
      }
      return true;
    };
    if (!solve(0.0) && !solve(1e-8)) solve(1e-4);

    // Backtracking to keep the objective decreasing.
    const double f0 = objective(theta);
    double scale = 1.0;
    std::vector<double> trial(dim);
    for (int bt = 0; bt < 40; ++bt) {
      for (std::size_t j = 0; j < dim; ++j) trial[j] = theta[j] - scale * step[j];
      if (objective(trial) <= f0) break;
      scale *= 0.5;
    }
    for (std::size_t j = 0; j < dim; ++j) theta[j] -= scale * step[j];
  }

  StackingModel model;
  model.weights.assign(theta.begin(), theta.begin() + r);
  model.intercept = theta[r];
  return model;
}

std::string StackingModel::to_json() const {
  json j = {{"weights", weights},
            {"intercept", intercept},
            {"trained_on_detector_id", trained_on_detector_id}};
  return j.dump(2);
}

StackingModel StackingModel::from_json(const std::string& text) {
  StackingModel m;
  try {
    json j = json::parse(text);
    m.weights = j.at("weights").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<double>();
    m.trained_on_detector_id = j.value("trained_on_detector_id", "");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed stacking model json: ") + e.what());
  }
  return m;
}

double ds_log_likelihood(const LabelMatrix& labels, const DsTheta& theta) {
  std::vector<double> la, lb;
  ds_log_ab(labels, theta, la, lb);
  const double t = clamp_unit(theta.t);
  const double log_t = std::log(t), log_1mt = std::log1p(-t);
  double ll = 0.0;
  for (std::size_t i = 0; i < labels.n; ++i) ll += log_sum_exp(la[i] + log_t, lb[i] + log_1mt);
  return ll;
}

std::vector<double> ds_e_step(const LabelMatrix& labels, const DsTheta& theta) {
  std::vector<double> la, lb;
  ds_log_ab(labels, theta, la, lb);
  const double t = clamp_unit(theta.t);
  const double log_t = std::log(t), log_1mt = std::log1p(-t);
  std::vector<double> mu(labels.n);
  for (std::size_t i = 0; i < labels.n; ++i) {
    const double num = la[i] + log_t;
    mu[i] = std::exp(num - log_sum_exp(num, lb[i] + log_1mt));
  }
  return mu;
}

DsTheta ds_m_step(const LabelMatrix& labels, std::span<const double> mu) {
  const std::size_t n = labels.n, r = labels.r;
  if (mu.size() != n) throw std::invalid_argument("mu length mismatch");

  DsTheta theta;
  double mu_sum = 0.0;
  for (double m : mu) mu_sum += m;
  theta.t = n > 0 ? mu_sum / static_cast<double>(n) : 0.5;
  const double co_sum = static_cast<double>(n) - mu_sum;

  theta.alpha.assign(r, 0.5);
  theta.beta.assign(r, 0.5);
  for (std::size_t j = 0; j < r; ++j) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels.at(i, j))
        pos += mu[i];
      else
        neg += 1.0 - mu[i];
    }
    // Degenerate denominators fall back to the uninformative 0.5.
    if (mu_sum > 0.0) theta.alpha[j] = pos / mu_sum;
    if (co_sum > 0.0) theta.beta[j] = neg / co_sum;
  }
  return theta;
}

DawidSkeneState dawid_skene(const PredictionMatrix& matrix, double eps, int k_max) {
  check_nonempty(matrix);
  const LabelMatrix y = matrix.hard_labels();

  DawidSkeneState state;
  state.mu = mean_aggregate(matrix);
  state.theta = ds_m_step(y, state.mu);
  double prev_ll = ds_log_likelihood(y, state.theta);
  state.log_likelihood.push_back(prev_ll);

  for (int k = 1; k <= k_max; ++k) {
    state.iterations = k;
    state.mu = ds_e_step(y, state.theta);
    state.theta = ds_m_step(y, state.mu);
    const double ll = ds_log_likelihood(y, state.theta);
    state.log_likelihood.push_back(ll);
    if (std::abs(ll - prev_ll) < eps) break;
    prev_ll = ll;
  }
  return state;
}

}  // namespace nsda::agg
