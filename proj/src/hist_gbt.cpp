#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "models_internal.hpp"

namespace slumeval::detail {

namespace {

struct BinStat {
  double g = 0.0;
  double h = 0.0;
  std::uint32_t n = 0;
};

using Histogram = std::vector<BinStat>;  // feature-major, kBins slots per feature

constexpr std::size_t kBins = 256;

struct SplitChoice {
  double gain = -std::numeric_limits<double>::infinity();
  int feature = -1;
  int bin = -1;
};

struct Leaf {
  std::int32_t node = 0;
  int depth = 0;
  std::vector<std::uint32_t> rows;
  double g = 0.0;
  double h = 0.0;
  Histogram hist;
  SplitChoice split;
};

class GrowContext {
 public:
  GrowContext(const std::vector<std::uint8_t>& codes, std::size_t n, std::size_t d, const FeatureBinner& binner,
              const HistGbtParams& p)
      : codes_(codes), n_(n), d_(d), binner_(binner), p_(p) {}

  /// Grows one tree on (grad, hess); returns the node list and the rows of
  /// each leaf (indexed by node id).
  std::vector<TreeNode> grow(const std::vector<double>& grad, const std::vector<double>& hess,
                             std::vector<std::vector<std::uint32_t>>& leaf_rows) const {
    std::vector<TreeNode> tree(1);
    std::vector<Leaf> open;

    Leaf root;
    root.rows.resize(n_);
    std::iota(root.rows.begin(), root.rows.end(), 0u);
    for (std::size_t i = 0; i < n_; ++i) {
      root.g += grad[i];
      root.h += hess[i];
    }
    root.hist = build(root.rows, grad, hess);
    evaluate(root);
    open.push_back(std::move(root));
    std::size_t n_leaves = 1;

    while (n_leaves < static_cast<std::size_t>(p_.max_leaf_nodes)) {
      auto best = std::max_element(open.begin(), open.end(),
                                   [](const Leaf& a, const Leaf& b) { return a.split.gain < b.split.gain; });
      if (best == open.end() || !(best->split.gain > 0.0)) break;
      Leaf parent = std::move(*best);
      open.erase(best);

      const auto f = static_cast<std::size_t>(parent.split.feature);
      const auto b = static_cast<std::uint8_t>(parent.split.bin);
      const std::uint8_t* col = codes_.data() + f * n_;
      Leaf left, right;
      for (auto r : parent.rows) {
        Leaf& dst = col[r] <= b ? left : right;
        dst.rows.push_back(r);
        dst.g += grad[r];
        dst.h += hess[r];
      }
      left.depth = right.depth = parent.depth + 1;

      // Build the smaller child and derive the larger by subtraction.
      Leaf& small = left.rows.size() <= right.rows.size() ? left : right;
      Leaf& large = &small == &left ? right : left;
      small.hist = build(small.rows, grad, hess);
      large.hist = std::move(parent.hist);
      for (std::size_t k = 0; k < large.hist.size(); ++k) {
        large.hist[k].g -= small.hist[k].g;
        large.hist[k].h -= small.hist[k].h;
        large.hist[k].n -= small.hist[k].n;
      }

      auto& node = tree[static_cast<std::size_t>(parent.node)];
      node.feature = static_cast<std::int32_t>(f);
      node.threshold = binner_.edges[f][b];
      node.left = static_cast<std::int32_t>(tree.size());
      node.right = node.left + 1;
      left.node = node.left;
      right.node = node.right;
      tree.emplace_back();
      tree.emplace_back();

      parent.rows.clear();
      for (Leaf* child : {&left, &right}) {
        evaluate(*child);
        open.push_back(std::move(*child));
      }
      ++n_leaves;
    }

    leaf_rows.assign(tree.size(), {});
    for (auto& l : open) leaf_rows[static_cast<std::size_t>(l.node)] = std::move(l.rows);
    return tree;
  }

 private:
  Histogram build(const std::vector<std::uint32_t>& rows, const std::vector<double>& grad,
                  const std::vector<double>& hess) const {
    Histogram hist(d_ * kBins);
    for (std::size_t f = 0; f < d_; ++f) {
      const std::uint8_t* col = codes_.data() + f * n_;
      BinStat* hf = hist.data() + f * kBins;
      for (auto r : rows) {
        BinStat& s = hf[col[r]];
        s.g += grad[r];
        s.h += hess[r];
        ++s.n;
      }
    }
    return hist;
  }

  void evaluate(Leaf& leaf) const {
    leaf.split = {};
    const auto n_rows = leaf.rows.size();
    if (leaf.depth >= p_.max_depth) return;
    const auto min_leaf = static_cast<std::size_t>(std::max(1, p_.min_samples_leaf));
    if (n_rows < 2 * min_leaf) return;
    const double lambda = p_.l2_regularization;
    const double parent_score = leaf.g * leaf.g / (leaf.h + lambda);
    constexpr double kMinHess = 1e-3;

    for (std::size_t f = 0; f < d_; ++f) {
      const std::size_t nb = binner_.edges[f].size();
      const BinStat* hf = leaf.hist.data() + f * kBins;
      double gl = 0.0, hl = 0.0;
      std::size_t nl = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        gl += hf[b].g;
        hl += hf[b].h;
        nl += hf[b].n;
        if (nl < min_leaf) continue;
        const std::size_t nr = n_rows - nl;
        if (nr < min_leaf) break;
        const double gr = leaf.g - gl;
        const double hr = leaf.h - hl;
        if (hl < kMinHess || hr < kMinHess) continue;
        const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score;
        if (gain > leaf.split.gain) leaf.split = {gain, static_cast<int>(f), static_cast<int>(b)};
      }
    }
  }

  const std::vector<std::uint8_t>& codes_;
  std::size_t n_;
  std::size_t d_;
  const FeatureBinner& binner_;
  const HistGbtParams& p_;
};

double median_of(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

class HistGbtImpl final : public TrainedModel {
 public:
  HistGbtImpl(Task task, Eigen::Index dim, double init, std::vector<std::vector<TreeNode>> trees)
      : TrainedModel(task, Family::hist_gbt, dim), init_(init), trees_(std::move(trees)) {}

 protected:
  Eigen::VectorXd raw_score(const Eigen::MatrixXd& rows) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(rows.rows(), init_);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const double* row = rows.data() + i;
      for (const auto& t : trees_) out[i] += predict_tree(t, row, rows.rows());
    }
    return out;
  }

  void save_state(std::ostream& os) const override {
    put(os, init_);
    put<std::uint64_t>(os, trees_.size());
    for (const auto& t : trees_) put_tree(os, t);
  }

 private:
  double init_;
  std::vector<std::vector<TreeNode>> trees_;
};

}  // namespace

std::unique_ptr<TrainedModel> train_hist_gbt(const ModelSpec& spec, const Eigen::MatrixXd& x,
                                             const Eigen::VectorXd& y) {
  const HistGbtParams& p = spec.gbt;
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const FeatureBinner binner = FeatureBinner::fit(x, p.max_bins);
  const std::vector<std::uint8_t> codes = binner.transform(x);
  const GrowContext ctx(codes, n, d, binner, p);
  const bool cls = spec.task == Task::cls;

  double init;
  if (cls) {
    const double prior = y.mean();
    init = std::log(prior / (1.0 - prior));
  } else {
    init = median_of(std::vector<double>(y.data(), y.data() + n));
  }

  std::vector<double> raw(n, init), grad(n), hess(n, 1.0);
  std::vector<std::vector<TreeNode>> trees;
  std::vector<std::vector<std::uint32_t>> leaf_rows;
  const double delta = p.huber_delta;

  for (int it = 0; it < p.max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      if (cls) {
        const double pr = sigmoid(raw[i]);
        grad[i] = pr - y[static_cast<Eigen::Index>(i)];
        hess[i] = pr * (1.0 - pr);
      } else {
        grad[i] = -std::clamp(y[static_cast<Eigen::Index>(i)] - raw[i], -delta, delta);
      }
    }
    auto tree = ctx.grow(grad, hess, leaf_rows);

    for (std::size_t k = 0; k < tree.size(); ++k) {
      if (tree[k].feature >= 0) continue;
      const auto& rows = leaf_rows[k];
      double value = 0.0;
      if (cls) {
        double g = 0.0, h = 0.0;
        for (auto r : rows) {
          g += grad[r];
          h += hess[r];
        }
        value = -g / (h + p.l2_regularization + 1e-12);
      } else if (!rows.empty()) {
        std::vector<double> res(rows.size());
        for (std::size_t j = 0; j < rows.size(); ++j) res[j] = y[rows[j]] - raw[rows[j]];
        const double med = median_of(res);
        double adj = 0.0;
        for (double r : res) adj += std::clamp(r - med, -delta, delta);
        value = med + adj / static_cast<double>(res.size());
      }
      tree[k].value = p.learning_rate * value;
      for (auto r : rows) raw[r] += tree[k].value;
    }
    const bool stump = tree.size() == 1;
    trees.push_back(std::move(tree));
    if (stump && cls) break;
  }
  return std::make_unique<HistGbtImpl>(spec.task, x.cols(), init, std::move(trees));
}

std::unique_ptr<TrainedModel> load_hist_gbt(Task task, Eigen::Index dim, std::istream& is) {
  const auto init = get<double>(is);
  const auto count = get<std::uint64_t>(is);
  if (count > 1'000'000) throw std::runtime_error("model blob corrupt");
  std::vector<std::vector<TreeNode>> trees;
  trees.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    auto t = get_tree(is);
    for (const auto& node : t) {
      if (node.feature >= dim) throw std::runtime_error("model blob: tree references missing feature");
    }
    trees.push_back(std::move(t));
  }
  return std::make_unique<HistGbtImpl>(task, dim, init, std::move(trees));
}

}  // namespace slumeval::detail
