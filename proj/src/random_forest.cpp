#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "models_internal.hpp"
#include "slumeval/random.hpp"

namespace slumeval::detail {

namespace {

// Weighted sufficient statistics per bin: total weight, weighted sum of y,
// weighted sum of y^2 (classification only needs the first two).
struct Moments {
  double w = 0.0;
  double wy = 0.0;
  double wyy = 0.0;
};

/// Impurity times node weight: Gini for 0/1 targets, squared error otherwise.
double weighted_impurity(const Moments& m, bool cls) {
  if (m.w <= 0.0) return 0.0;
  if (cls) {
    const double p = m.wy / m.w;
    return m.w * 2.0 * p * (1.0 - p);
  }
  return std::max(0.0, m.wyy - m.wy * m.wy / m.w);
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::uint8_t>& codes, std::size_t n, const FeatureBinner& binner,
              const Eigen::VectorXd& y, const ForestParams& p, bool cls, std::size_t mtry)
      : codes_(codes), n_(n), binner_(binner), y_(y), p_(p), cls_(cls), mtry_(mtry) {}

  std::vector<TreeNode> build(const std::vector<double>& weight, Rng& rng) const {
    std::vector<TreeNode> tree;
    std::vector<std::uint32_t> rows;
    for (std::size_t i = 0; i < n_; ++i) {
      if (weight[i] > 0.0) rows.push_back(static_cast<std::uint32_t>(i));
    }
    grow(tree, rows, weight, 0, rng);
    return tree;
  }

 private:
  std::int32_t grow(std::vector<TreeNode>& tree, std::vector<std::uint32_t>& rows, const std::vector<double>& weight,
                    int depth, Rng& rng) const {
    const auto id = static_cast<std::int32_t>(tree.size());
    tree.emplace_back();
    Moments total;
    for (auto r : rows) {
      const double yv = y_[r];
      total.w += weight[r];
      total.wy += weight[r] * yv;
      total.wyy += weight[r] * yv * yv;
    }
    tree[static_cast<std::size_t>(id)].value = total.wy / total.w;

    const double min_leaf = p_.min_samples_leaf;
    const double parent_imp = weighted_impurity(total, cls_);
    if (depth >= p_.max_depth || total.w < 2.0 * min_leaf || parent_imp <= 1e-12) return id;

    std::vector<std::size_t> features(binner_.edges.size());
    std::iota(features.begin(), features.end(), 0);
    shuffle(features.begin(), features.end(), rng);

    double best_gain = 1e-12;
    int best_feature = -1;
    int best_bin = -1;
    std::vector<Moments> hist;
    std::size_t visited = 0;
    for (std::size_t f : features) {
      // Keep drawing beyond mtry until one usable split has been seen.
      if (visited >= mtry_ && best_feature >= 0) break;
      ++visited;
      const std::size_t nb = binner_.edges[f].size();
      if (nb < 2) continue;
      hist.assign(nb, {});
      const std::uint8_t* col = codes_.data() + f * n_;
      for (auto r : rows) {
        Moments& m = hist[col[r]];
        const double yv = y_[r];
        m.w += weight[r];
        m.wy += weight[r] * yv;
        m.wyy += weight[r] * yv * yv;
      }
      Moments left;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        left.w += hist[b].w;
        left.wy += hist[b].wy;
        left.wyy += hist[b].wyy;
        if (hist[b].w == 0.0 || left.w < min_leaf) continue;
        const Moments right{total.w - left.w, total.wy - left.wy, total.wyy - left.wyy};
        if (right.w < min_leaf) break;
        const double gain = parent_imp - weighted_impurity(left, cls_) - weighted_impurity(right, cls_);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_bin = static_cast<int>(b);
        }
      }
    }
    if (best_feature < 0) return id;

    const auto f = static_cast<std::size_t>(best_feature);
    const std::uint8_t* col = codes_.data() + f * n_;
    std::vector<std::uint32_t> left_rows, right_rows;
    for (auto r : rows) (col[r] <= best_bin ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const auto l = grow(tree, left_rows, weight, depth + 1, rng);
    const auto r = grow(tree, right_rows, weight, depth + 1, rng);
    auto& node = tree[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = binner_.edges[f][static_cast<std::size_t>(best_bin)];
    node.left = l;
    node.right = r;
    return id;
  }

  const std::vector<std::uint8_t>& codes_;
  std::size_t n_;
  const FeatureBinner& binner_;
  const Eigen::VectorXd& y_;
  const ForestParams& p_;
  bool cls_;
  std::size_t mtry_;
};

class ForestImpl final : public TrainedModel {
 public:
  ForestImpl(Task task, Eigen::Index dim, std::vector<std::vector<TreeNode>> trees)
      : TrainedModel(task, Family::random_forest, dim), trees_(std::move(trees)) {}

 protected:
  Eigen::VectorXd raw_score(const Eigen::MatrixXd& rows) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const double* row = rows.data() + i;
      double s = 0.0;
      for (const auto& t : trees_) s += predict_tree(t, row, rows.rows());
      out[i] = s / static_cast<double>(trees_.size());
    }
    return out;
  }

  bool score_is_logit() const override { return false; }

  void save_state(std::ostream& os) const override {
    put<std::uint64_t>(os, trees_.size());
    for (const auto& t : trees_) put_tree(os, t);
  }

 private:
  std::vector<std::vector<TreeNode>> trees_;
};

}  // namespace

std::unique_ptr<TrainedModel> train_forest(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const ForestParams& p = spec.forest;
  if (p.n_estimators < 1) throw std::invalid_argument("random forest needs at least one tree");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const bool cls = spec.task == Task::cls;
  const FeatureBinner binner = FeatureBinner::fit(x, p.max_bins);
  const std::vector<std::uint8_t> codes = binner.transform(x);

  std::size_t mtry = cls ? static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d))))
                         : d / 3;
  mtry = std::clamp<std::size_t>(mtry, 1, d);
  const TreeBuilder builder(codes, n, binner, y, p, cls, mtry);

  std::vector<std::vector<TreeNode>> trees;
  trees.reserve(static_cast<std::size_t>(p.n_estimators));
  std::vector<double> weight(n);
  for (int t = 0; t < p.n_estimators; ++t) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(t)));
    std::fill(weight.begin(), weight.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) weight[uniform_index(rng, n)] += 1.0;
    trees.push_back(builder.build(weight, rng));
  }
  return std::make_unique<ForestImpl>(spec.task, x.cols(), std::move(trees));
}

std::unique_ptr<TrainedModel> load_forest(Task task, Eigen::Index dim, std::istream& is) {
  const auto count = get<std::uint64_t>(is);
  if (count == 0 || count > 1'000'000) throw std::runtime_error("model blob corrupt");
  std::vector<std::vector<TreeNode>> trees;
  trees.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    auto t = get_tree(is);
    for (const auto& node : t) {
      if (node.feature >= dim) throw std::runtime_error("model blob: tree references missing feature");
    }
    trees.push_back(std::move(t));
  }
  return std::make_unique<ForestImpl>(task, dim, std::move(trees));
}

}  // namespace slumeval::detail
