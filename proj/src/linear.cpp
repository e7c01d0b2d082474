#include <cmath>

#include <Eigen/Cholesky>

#include "models_internal.hpp"
#include "slumeval/features.hpp"

namespace slumeval::detail {

namespace {

class LinearImpl final : public LinearModel {
 public:
  LinearImpl(Task task, Eigen::Index dim, Eigen::VectorXd w, double b)
      : LinearModel(task, Family::linear, dim), w_(std::move(w)), b_(b) {}

  Eigen::VectorXd raw_weights() const override { return w_; }
  double raw_intercept() const override { return b_; }

 protected:
  Eigen::VectorXd raw_score(const Eigen::MatrixXd& rows) const override {
    return (rows * w_).array() + b_;
  }

  void save_state(std::ostream& os) const override {
    put_matrix(os, w_);
    put(os, b_);
  }

 private:
  Eigen::VectorXd w_;
  double b_;
};

// Penalised logistic regression, 0.5|w|^2 + C * sum(logloss), intercept free.
// Damped Newton on the scaled design.
std::pair<Eigen::VectorXd, double> fit_logistic(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y,
                                                const LinearParams& p) {
  const Eigen::Index n = xs.rows();
  const Eigen::Index d = xs.cols();
  Eigen::MatrixXd a(n, d + 1);
  a.leftCols(d) = xs;
  a.col(d).setOnes();

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = a * beta;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + exp(-s z)) with s = 2y - 1, computed stably
      const double m = (2.0 * y[i] - 1.0) * z[i];
      loss += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
    }
    return p.c * loss + 0.5 * beta.head(d).squaredNorm();
  };

  const double prior = y.mean();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  beta[d] = std::log(prior / (1.0 - prior));
  double f = objective(beta);

  for (int it = 0; it < p.max_iter; ++it) {
    const Eigen::VectorXd z = a * beta;
    Eigen::VectorXd prob(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = sigmoid(z[i]);
      s[i] = prob[i] * (1.0 - prob[i]);
    }
    Eigen::VectorXd grad = p.c * (a.transpose() * (prob - y));
    grad.head(d) += beta.head(d);
    if (grad.lpNorm<Eigen::Infinity>() < p.tol) break;

    Eigen::MatrixXd h = p.c * (a.transpose() * s.asDiagonal() * a);
    h.diagonal().head(d).array() += 1.0;
    h.diagonal()[d] += 1e-12;
    const Eigen::VectorXd step = h.ldlt().solve(grad);

    double t = 1.0;
    const double slope = grad.dot(step);
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = beta - t * step;
      const double fc = objective(cand);
      if (fc <= f - 1e-4 * t * slope) {
        beta = cand;
        f = fc;
        break;
      }
      t *= 0.5;
    }
    if (t < 1e-16) break;
  }
  return {beta.head(d), beta[d]};
}

std::pair<Eigen::VectorXd, double> fit_ridge(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y,
                                             const LinearParams& p) {
  const Eigen::RowVectorXd mu = xs.colwise().mean();
  const Eigen::MatrixXd xc = xs.rowwise() - mu;
  const double ybar = y.mean();
  Eigen::MatrixXd g = xc.transpose() * xc;
  g.diagonal().array() += p.alpha;
  const Eigen::VectorXd w = g.ldlt().solve(xc.transpose() * (y.array() - ybar).matrix());
  return {w, ybar - mu.dot(w)};
}

}  // namespace

std::unique_ptr<TrainedModel> train_linear(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const RobustScaleParams scale = fit_robust_scale(x);
  const Eigen::MatrixXd xs = scale.apply(x);
  auto [ws, bs] = spec.task == Task::cls ? fit_logistic(xs, y, spec.linear) : fit_ridge(xs, y, spec.linear);

  // Fold the scaler back into raw-space coefficients.
  Eigen::VectorXd w(ws.size());
  double b = bs;
  for (Eigen::Index j = 0; j < ws.size(); ++j) {
    const double s = scale.iqr[j] == 0.0 ? 1.0 : scale.iqr[j];
    w[j] = ws[j] / s;
    b -= w[j] * scale.median[j];
  }
  return std::make_unique<LinearImpl>(spec.task, x.cols(), std::move(w), b);
}

std::unique_ptr<TrainedModel> load_linear(Task task, Eigen::Index dim, std::istream& is) {
  auto w = get_matrix<Eigen::VectorXd>(is);
  const auto b = get<double>(is);
  if (w.size() != dim) throw std::runtime_error("model blob: weight length mismatch");
  return std::make_unique<LinearImpl>(task, dim, std::move(w), b);
}

}  // namespace slumeval::detail
