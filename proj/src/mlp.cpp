#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "models_internal.hpp"
#include "slumeval/random.hpp"

namespace slumeval::detail {

namespace {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

struct Layer {
  Mat w;  // out x in
  Vec b;
  // Normalisation (hidden layers only).
  Vec gamma, beta, run_mean, run_var;
};

struct Net {
  std::vector<Layer> hidden;
  Layer out;  // 1 x last

  void zero_like(const Net& o) {
    hidden.resize(o.hidden.size());
    for (std::size_t l = 0; l < o.hidden.size(); ++l) {
      hidden[l].w = Mat::Zero(o.hidden[l].w.rows(), o.hidden[l].w.cols());
      hidden[l].b = Vec::Zero(o.hidden[l].b.size());
      hidden[l].gamma = Vec::Zero(o.hidden[l].gamma.size());
      hidden[l].beta = Vec::Zero(o.hidden[l].beta.size());
    }
    out.w = Mat::Zero(o.out.w.rows(), o.out.w.cols());
    out.b = Vec::Zero(o.out.b.size());
  }

  /// Trainable tensors in a fixed order.
  std::vector<Eigen::Map<Vec>> params() {
    std::vector<Eigen::Map<Vec>> ps;
    auto add = [&](auto& t) { ps.emplace_back(t.data(), t.size()); };
    for (auto& l : hidden) {
      add(l.w);
      add(l.b);
      add(l.gamma);
      add(l.beta);
    }
    add(out.w);
    add(out.b);
    return ps;
  }

  /// Inference-mode forward pass: columns are samples.
  Eigen::RowVectorXf forward_eval(const Mat& x) const {
    Mat a = x;
    for (const auto& l : hidden) {
      Mat z = (l.w * a).colwise() + l.b;
      const Vec scale = l.gamma.array() / (l.run_var.array() + kBnEps).sqrt();
      const Vec shift = l.beta.array() - l.run_mean.array() * scale.array();
      a = ((z.array().colwise() * scale.array()).colwise() + shift.array()).max(0.0f).matrix();
    }
    return ((out.w * a).array() + out.b[0]).matrix();
  }
};

void init_layer(Layer& l, Eigen::Index in, Eigen::Index outd, bool norm, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  auto draw = [&] { return static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound); };
  l.w.resize(outd, in);
  for (Eigen::Index j = 0; j < in; ++j) {
    for (Eigen::Index i = 0; i < outd; ++i) l.w(i, j) = draw();
  }
  l.b.resize(outd);
  for (Eigen::Index i = 0; i < outd; ++i) l.b[i] = draw();
  if (norm) {
    l.gamma = Vec::Ones(outd);
    l.beta = Vec::Zero(outd);
    l.run_mean = Vec::Zero(outd);
    l.run_var = Vec::Ones(outd);
  }
}

struct Loss {
  bool cls = true;
  float pos_weight = 1.0f;
  float delta = 10.0f;

  /// Mean loss and d(loss)/d(output) for one batch.
  float eval(const Eigen::RowVectorXf& out, const Eigen::RowVectorXf& y, Eigen::RowVectorXf* grad) const {
    const auto m = static_cast<float>(out.size());
    double total = 0.0;
    if (grad) grad->resize(out.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      const float z = out[i];
      float l, g;
      if (cls) {
        const float sp_neg = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));  // softplus(z)
        const float sp_pos = sp_neg - z;                                                      // softplus(-z)
        const float p = static_cast<float>(sigmoid(z));
        l = pos_weight * y[i] * sp_pos + (1.0f - y[i]) * sp_neg;
        g = (1.0f - y[i]) * p - pos_weight * y[i] * (1.0f - p);
      } else {
        const float r = z - y[i];
        const float a = std::abs(r);
        l = a <= delta ? 0.5f * r * r : delta * (a - 0.5f * delta);
        g = std::clamp(r, -delta, delta);
      }
      total += l;
      if (grad) (*grad)[i] = g / m;
    }
    return static_cast<float>(total / m);
  }
};

class Trainer {
 public:
  Trainer(Net& net, const Loss& loss, float lr) : net_(net), loss_(loss), lr_(lr) {
    grads_.zero_like(net_);
    for (auto& p : net_.params()) {
      m_.push_back(Vec::Zero(p.size()));
      v_.push_back(Vec::Zero(p.size()));
    }
  }

  void step(const Mat& x, const Eigen::RowVectorXf& y) {
    const Eigen::Index m = x.cols();
    const std::size_t depth = net_.hidden.size();
    std::vector<Mat> act(depth + 1), xhat(depth), pre(depth);
    std::vector<Vec> inv_std(depth);
    act[0] = x;
    for (std::size_t k = 0; k < depth; ++k) {
      Layer& l = net_.hidden[k];
      Mat z = (l.w * act[k]).colwise() + l.b;
      const Vec mu = z.rowwise().mean();
      z.colwise() -= mu;
      const Vec var = z.array().square().rowwise().mean();
      inv_std[k] = (var.array() + kBnEps).rsqrt();
      xhat[k] = z.array().colwise() * inv_std[k].array();
      pre[k] = (xhat[k].array().colwise() * l.gamma.array()).colwise() + l.beta.array();
      act[k + 1] = pre[k].array().max(0.0f);
      const float unbias = static_cast<float>(m) / static_cast<float>(m - 1);
      l.run_mean = (1.0f - kBnMomentum) * l.run_mean + kBnMomentum * mu;
      l.run_var = (1.0f - kBnMomentum) * l.run_var + kBnMomentum * unbias * var;
    }
    const Eigen::RowVectorXf out = ((net_.out.w * act[depth]).array() + net_.out.b[0]).matrix();
    Eigen::RowVectorXf dout;
    loss_.eval(out, y, &dout);

    grads_.out.w = dout * act[depth].transpose();
    grads_.out.b[0] = dout.sum();
    Mat da = net_.out.w.transpose() * dout;
    for (std::size_t k = depth; k-- > 0;) {
      const Layer& l = net_.hidden[k];
      Layer& g = grads_.hidden[k];
      const Mat dh = (pre[k].array() > 0.0f).select(da, 0.0f);
      g.gamma = (dh.array() * xhat[k].array()).rowwise().sum();
      g.beta = dh.rowwise().sum();
      const Mat dxhat = dh.array().colwise() * l.gamma.array();
      const Vec s1 = dxhat.rowwise().sum();
      const Vec s2 = (dxhat.array() * xhat[k].array()).rowwise().sum();
      const float mf = static_cast<float>(m);
      const Mat dz = ((mf * dxhat.array() - xhat[k].array().colwise() * s2.array()).colwise() - s1.array()).colwise() *
                     (inv_std[k].array() / mf);
      g.w = dz * act[k].transpose();
      g.b = dz.rowwise().sum();
      if (k > 0) da = l.w.transpose() * dz;
    }
    adam();
  }

 private:
  void adam() {
    constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    ++t_;
    const float c1 = 1.0f - std::pow(b1, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(b2, static_cast<float>(t_));
    auto ps = net_.params();
    auto gs = grads_.params();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      m_[k] = b1 * m_[k] + (1.0f - b1) * gs[k];
      v_[k] = b2 * v_[k] + (1.0f - b2) * gs[k].cwiseProduct(gs[k]);
      ps[k].array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps);
    }
  }

  Net& net_;
  Net grads_;
  const Loss& loss_;
  float lr_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

class MlpImpl final : public TrainedModel {
 public:
  MlpImpl(Task task, Eigen::Index dim, Net net, double y_mean, double y_scale)
      : TrainedModel(task, Family::mlp, dim), net_(std::move(net)), y_mean_(y_mean), y_scale_(y_scale) {}

 protected:
  Eigen::VectorXd raw_score(const Eigen::MatrixXd& rows) const override {
    Eigen::VectorXd out(rows.rows());
    constexpr Eigen::Index kChunk = 8192;
    for (Eigen::Index s = 0; s < rows.rows(); s += kChunk) {
      const Eigen::Index len = std::min(kChunk, rows.rows() - s);
      const Mat x = rows.middleRows(s, len).transpose().cast<float>();
      const Eigen::RowVectorXf o = net_.forward_eval(x);
      for (Eigen::Index i = 0; i < len; ++i) out[s + i] = y_mean_ + y_scale_ * static_cast<double>(o[i]);
    }
    return out;
  }

  void save_state(std::ostream& os) const override {
    put(os, y_mean_);
    put(os, y_scale_);
    put<std::uint64_t>(os, net_.hidden.size());
    for (const auto& l : net_.hidden) {
      put_matrix(os, l.w);
      put_matrix(os, l.b);
      put_matrix(os, l.gamma);
      put_matrix(os, l.beta);
      put_matrix(os, l.run_mean);
      put_matrix(os, l.run_var);
    }
    put_matrix(os, net_.out.w);
    put_matrix(os, net_.out.b);
  }

 private:
  Net net_;
  double y_mean_;
  double y_scale_;
};

}  // namespace

std::unique_ptr<TrainedModel> train_mlp(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const MlpParams& p = spec.mlp;
  if (p.batch_size < 2) throw std::invalid_argument("mlp batch_size must be at least 2");
  for (int h : p.hidden) {
    if (h < 1) throw std::invalid_argument("mlp hidden widths must be positive");
  }
  const bool cls = spec.task == Task::cls;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();

  double y_mean = 0.0, y_scale = 1.0;
  Loss loss;
  loss.cls = cls;
  if (cls) {
    const double pos = y.sum();
    loss.pos_weight = p.pos_weight ? static_cast<float>((static_cast<double>(n) - pos) / pos) : 1.0f;
  } else {
    y_mean = y.mean();
    const double sd = std::sqrt((y.array() - y_mean).square().mean());
    y_scale = sd > 0.0 ? sd : 1.0;
    loss.delta = static_cast<float>(p.huber_delta / y_scale);
  }

  // Train / validation carve-out.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng split_rng(derive_seed(spec.seed, 2));
  shuffle(order.begin(), order.end(), split_rng);
  Eigen::Index n_val = 0;
  if (n >= 10 && p.validation_fraction > 0.0) {
    n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::floor(p.validation_fraction * static_cast<double>(n))));
  }
  const Eigen::Index n_fit = n - n_val;

  auto gather = [&](Eigen::Index from, Eigen::Index count, Mat& xs, Eigen::RowVectorXf& ys) {
    xs.resize(d, count);
    ys.resize(count);
    for (Eigen::Index k = 0; k < count; ++k) {
      const Eigen::Index r = order[static_cast<std::size_t>(from + k)];
      xs.col(k) = x.row(r).transpose().cast<float>();
      ys[k] = static_cast<float>((y[r] - y_mean) / y_scale);
    }
  };
  Mat x_fit, x_val;
  Eigen::RowVectorXf y_fit, y_val;
  gather(n_val, n_fit, x_fit, y_fit);
  gather(0, n_val, x_val, y_val);

  Net net;
  Rng init_rng(derive_seed(spec.seed, 1));
  Eigen::Index in = d;
  for (int h : p.hidden) {
    net.hidden.emplace_back();
    init_layer(net.hidden.back(), in, h, true, init_rng);
    in = h;
  }
  init_layer(net.out, in, 1, false, init_rng);

  Trainer trainer(net, loss, static_cast<float>(p.learning_rate));
  Rng batch_rng(derive_seed(spec.seed, 3));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_fit));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  const Eigen::Index batch = std::min<Eigen::Index>(p.batch_size, n_fit);

  Net best = net;
  float best_val = std::numeric_limits<float>::infinity();
  int stale = 0;
  Mat xb;
  Eigen::RowVectorXf yb;
  for (int epoch = 0; epoch < p.max_epochs; ++epoch) {
    shuffle(perm.begin(), perm.end(), batch_rng);
    for (Eigen::Index s = 0; s < n_fit; s += batch) {
      const Eigen::Index len = std::min(batch, n_fit - s);
      if (len < 2) continue;
      xb.resize(d, len);
      yb.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        const Eigen::Index c = perm[static_cast<std::size_t>(s + k)];
        xb.col(k) = x_fit.col(c);
        yb[k] = y_fit[c];
      }
      trainer.step(xb, yb);
    }
    if (n_val == 0) continue;
    const float val = loss.eval(net.forward_eval(x_val), y_val, nullptr);
    if (val < best_val) {
      best_val = val;
      best = net;
      stale = 0;
    } else if (++stale >= p.patience) {
      break;
    }
  }
  if (n_val > 0) net = std::move(best);
  return std::make_unique<MlpImpl>(spec.task, d, std::move(net), y_mean, y_scale);
}

std::unique_ptr<TrainedModel> load_mlp(Task task, Eigen::Index dim, std::istream& is) {
  const auto y_mean = get<double>(is);
  const auto y_scale = get<double>(is);
  const auto depth = get<std::uint64_t>(is);
  if (depth > 64) throw std::runtime_error("model blob corrupt");
  Net net;
  Eigen::Index in = dim;
  for (std::uint64_t k = 0; k < depth; ++k) {
    Layer l;
    l.w = get_matrix<Mat>(is);
    l.b = get_matrix<Vec>(is);
    l.gamma = get_matrix<Vec>(is);
    l.beta = get_matrix<Vec>(is);
    l.run_mean = get_matrix<Vec>(is);
    l.run_var = get_matrix<Vec>(is);
    const Eigen::Index w = l.w.rows();
    if (l.w.cols() != in || l.b.size() != w || l.gamma.size() != w || l.beta.size() != w || l.run_mean.size() != w ||
        l.run_var.size() != w) {
      throw std::runtime_error("model blob: mlp layer shape mismatch");
    }
    in = w;
    net.hidden.push_back(std::move(l));
  }
  net.out.w = get_matrix<Mat>(is);
  net.out.b = get_matrix<Vec>(is);
  if (net.out.w.rows() != 1 || net.out.w.cols() != in || net.out.b.size() != 1) {
    throw std::runtime_error("model blob: mlp output shape mismatch");
  }
  return std::make_unique<MlpImpl>(task, dim, std::move(net), y_mean, y_scale);
}

}  // namespace slumeval::detail
