#include "slumeval/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "models_internal.hpp"

namespace slumeval {

namespace {
constexpr char kMagic[4] = {'S', 'L', 'M', 'D'};
constexpr std::uint32_t kBlobVersion = 1;
}  // namespace

std::string_view task_name(Task t) { return t == Task::cls ? "cls" : "reg"; }

Task parse_task(std::string_view s) {
  if (s == "cls") return Task::cls;
  if (s == "reg") return Task::reg;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::hist_gbt: return "hist-gbt";
    case Family::random_forest: return "random-forest";
    case Family::mlp: return "mlp";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  for (auto f : {Family::linear, Family::hist_gbt, Family::random_forest, Family::mlp}) {
    if (family_name(f) == s) return f;
  }
  throw std::invalid_argument("unknown model family '" + std::string(s) + "'");
}

nlohmann::json spec_to_json(const ModelSpec& s) {
  return {
      {"task", task_name(s.task)},
      {"family", family_name(s.family)},
      {"seed", s.seed},
      {"linear", {{"c", s.linear.c}, {"alpha", s.linear.alpha}, {"max_iter", s.linear.max_iter}, {"tol", s.linear.tol}}},
      {"hist_gbt",
       {{"max_iter", s.gbt.max_iter},
        {"max_depth", s.gbt.max_depth},
        {"learning_rate", s.gbt.learning_rate},
        {"huber_delta", s.gbt.huber_delta},
        {"max_bins", s.gbt.max_bins},
        {"max_leaf_nodes", s.gbt.max_leaf_nodes},
        {"min_samples_leaf", s.gbt.min_samples_leaf},
        {"l2_regularization", s.gbt.l2_regularization}}},
      {"random_forest",
       {{"n_estimators", s.forest.n_estimators},
        {"max_depth", s.forest.max_depth},
        {"min_samples_leaf", s.forest.min_samples_leaf},
        {"max_bins", s.forest.max_bins}}},
      {"mlp",
       {{"hidden", s.mlp.hidden},
        {"learning_rate", s.mlp.learning_rate},
        {"patience", s.mlp.patience},
        {"max_epochs", s.mlp.max_epochs},
        {"batch_size", s.mlp.batch_size},
        {"huber_delta", s.mlp.huber_delta},
        {"validation_fraction", s.mlp.validation_fraction},
        {"pos_weight", s.mlp.pos_weight}}},
  };
}

namespace {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelSpec spec_from_json(const nlohmann::json& j, ModelSpec s) {
  if (j.contains("task")) s.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
  maybe(j, "seed", s.seed);
  if (j.contains("linear")) {
    const auto& l = j.at("linear");
    maybe(l, "c", s.linear.c);
    maybe(l, "alpha", s.linear.alpha);
    maybe(l, "max_iter", s.linear.max_iter);
    maybe(l, "tol", s.linear.tol);
  }
  if (j.contains("hist_gbt")) {
    const auto& g = j.at("hist_gbt");
    maybe(g, "max_iter", s.gbt.max_iter);
    maybe(g, "max_depth", s.gbt.max_depth);
    maybe(g, "learning_rate", s.gbt.learning_rate);
    maybe(g, "huber_delta", s.gbt.huber_delta);
    maybe(g, "max_bins", s.gbt.max_bins);
    maybe(g, "max_leaf_nodes", s.gbt.max_leaf_nodes);
    maybe(g, "min_samples_leaf", s.gbt.min_samples_leaf);
    maybe(g, "l2_regularization", s.gbt.l2_regularization);
  }
  if (j.contains("random_forest")) {
    const auto& f = j.at("random_forest");
    maybe(f, "n_estimators", s.forest.n_estimators);
    maybe(f, "max_depth", s.forest.max_depth);
    maybe(f, "min_samples_leaf", s.forest.min_samples_leaf);
    maybe(f, "max_bins", s.forest.max_bins);
  }
  if (j.contains("mlp")) {
    const auto& m = j.at("mlp");
    maybe(m, "hidden", s.mlp.hidden);
    maybe(m, "learning_rate", s.mlp.learning_rate);
    maybe(m, "patience", s.mlp.patience);
    maybe(m, "max_epochs", s.mlp.max_epochs);
    maybe(m, "batch_size", s.mlp.batch_size);
    maybe(m, "huber_delta", s.mlp.huber_delta);
    maybe(m, "validation_fraction", s.mlp.validation_fraction);
    maybe(m, "pos_weight", s.mlp.pos_weight);
  }
  if (s.gbt.max_bins < 2 || s.gbt.max_bins > 256 || s.forest.max_bins < 2 || s.forest.max_bins > 256) {
    throw std::invalid_argument("max_bins must lie in [2, 256]");
  }
  return s;
}

double huber_loss(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

void TrainedModel::check_input(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != input_dim_) {
    throw std::invalid_argument("model expects " + std::to_string(input_dim_) + " features, got " +
                                std::to_string(rows.cols()));
  }
}

Eigen::VectorXd TrainedModel::predict_proba(const Eigen::MatrixXd& rows) const {
  if (task_ != Task::cls) throw std::logic_error("predict_proba called on a regression model");
  check_input(rows);
  Eigen::VectorXd s = raw_score(rows);
  if (score_is_logit()) s = s.unaryExpr([](double z) { return detail::sigmoid(z); });
  return s;
}

Eigen::VectorXd TrainedModel::predict_density(const Eigen::MatrixXd& rows) const {
  if (task_ != Task::reg) throw std::logic_error("predict_density called on a classification model");
  check_input(rows);
  return raw_score(rows);
}

Eigen::VectorXd TrainedModel::score(const Eigen::MatrixXd& rows) const {
  check_input(rows);
  return raw_score(rows);
}

void TrainedModel::save(std::ostream& os) const {
  os.write(kMagic, 4);
  detail::put<std::uint32_t>(os, kBlobVersion);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(task_));
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(family_));
  detail::put<std::int64_t>(os, input_dim_);
  save_state(os);
  if (!os) throw std::runtime_error("failed to write model blob");
}

std::unique_ptr<TrainedModel> load_model(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a model blob");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kBlobVersion) throw std::runtime_error("unsupported model blob version " + std::to_string(version));
  const auto task = static_cast<Task>(detail::get<std::uint8_t>(is));
  const auto family = static_cast<Family>(detail::get<std::uint8_t>(is));
  const auto dim = static_cast<Eigen::Index>(detail::get<std::int64_t>(is));
  switch (family) {
    case Family::linear: return detail::load_linear(task, dim, is);
    case Family::hist_gbt: return detail::load_hist_gbt(task, dim, is);
    case Family::random_forest: return detail::load_forest(task, dim, is);
    case Family::mlp: return detail::load_mlp(task, dim, is);
  }
  throw std::runtime_error("model blob has unknown family");
}

std::unique_ptr<TrainedModel> train(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) throw std::invalid_argument("train: feature rows and targets differ in length");
  if (x.rows() < 2) throw std::invalid_argument("train: need at least 2 rows");
  if (!x.allFinite()) throw std::invalid_argument("train: non-finite feature values");
  if (!y.allFinite()) throw std::invalid_argument("train: non-finite targets");
  if (spec.task == Task::cls) {
    Eigen::Index pos = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) throw std::invalid_argument("train: classification labels must be 0/1");
      pos += y[i] == 1.0;
    }
    if (pos == 0 || pos == y.size()) throw std::invalid_argument("train: classification target has a single class");
  }
  switch (spec.family) {
    case Family::linear: return detail::train_linear(spec, x, y);
    case Family::hist_gbt: return detail::train_hist_gbt(spec, x, y);
    case Family::random_forest: return detail::train_forest(spec, x, y);
    case Family::mlp: return detail::train_mlp(spec, x, y);
  }
  throw std::invalid_argument("train: unknown family");
}

// ---- shared tree machinery ----------------------------------------------

namespace detail {

FeatureBinner FeatureBinner::fit(const Eigen::MatrixXd& x, int max_bins) {
  FeatureBinner b;
  b.edges.resize(static_cast<std::size_t>(x.cols()));
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<double> col(n);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = x(static_cast<Eigen::Index>(i), j);
    std::sort(col.begin(), col.end());
    auto& e = b.edges[static_cast<std::size_t>(j)];
    std::vector<double> uniq;
    std::unique_copy(col.begin(), col.end(), std::back_inserter(uniq));
    if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
      e = std::move(uniq);
      continue;
    }
    for (int k = 1; k <= max_bins; ++k) {
      const std::size_t pos = (static_cast<std::size_t>(k) * n + static_cast<std::size_t>(max_bins) - 1) /
                                  static_cast<std::size_t>(max_bins) - 1;
      const double v = col[std::min(pos, n - 1)];
      if (e.empty() || v > e.back()) e.push_back(v);
    }
  }
  return b;
}

std::vector<std::uint8_t> FeatureBinner::transform(const Eigen::MatrixXd& x) const {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::uint8_t> codes(n * edges.size());
  for (std::size_t j = 0; j < edges.size(); ++j) {
    const auto& e = edges[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      auto it = std::lower_bound(e.begin(), e.end(), v);
      std::size_t bin = static_cast<std::size_t>(it - e.begin());
      if (bin >= e.size()) bin = e.size() - 1;
      codes[j * n + i] = static_cast<std::uint8_t>(bin);
    }
  }
  return codes;
}

double predict_tree(const std::vector<TreeNode>& tree, const double* row, Eigen::Index stride) {
  std::int32_t k = 0;
  while (tree[static_cast<std::size_t>(k)].feature >= 0) {
    const auto& node = tree[static_cast<std::size_t>(k)];
    k = row[node.feature * stride] <= node.threshold ? node.left : node.right;
  }
  return tree[static_cast<std::size_t>(k)].value;
}

void put_tree(std::ostream& os, const std::vector<TreeNode>& tree) { put_vector(os, tree); }

std::vector<TreeNode> get_tree(std::istream& is) {
  auto tree = get_vector<TreeNode>(is);
  for (const auto& n : tree) {
    if (n.feature >= 0 && (n.left < 0 || n.right < 0 || static_cast<std::size_t>(n.left) >= tree.size() ||
                           static_cast<std::size_t>(n.right) >= tree.size())) {
      throw std::runtime_error("model blob has a malformed tree");
    }
  }
  if (tree.empty()) throw std::runtime_error("model blob has an empty tree");
  return tree;
}

}  // namespace detail
}  // namespace slumeval
