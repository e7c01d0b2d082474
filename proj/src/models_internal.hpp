#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "slumeval/models.hpp"

namespace slumeval::detail {

// ---- binary blob helpers -------------------------------------------------

template <class T>
  requires std::is_trivially_copyable_v<T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
  requires std::is_trivially_copyable_v<T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("model blob truncated");
  return v;
}

template <class Derived>
void put_matrix(std::ostream& os, const Eigen::PlainObjectBase<Derived>& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(typename Derived::Scalar) * m.size()));
}

template <class M>
M get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) throw std::runtime_error("model blob corrupt");
  M m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(typename M::Scalar) * m.size()));
  if (!is) throw std::runtime_error("model blob truncated");
  return m;
}

template <class T>
void put_vector(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * v.size()));
}

template <class T>
std::vector<T> get_vector(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (std::uint64_t{1} << 32)) throw std::runtime_error("model blob corrupt");
  std::vector<T> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * n));
  if (!is) throw std::runtime_error("model blob truncated");
  return v;
}

// ---- quantile binning shared by the tree learners ------------------------

/// Per-feature bin edges taken from observed training values, so a split
/// "bin <= b" is exactly "x <= edges[b]" and survives any strictly monotone
/// transform of the feature.
struct FeatureBinner {
  std::vector<std::vector<double>> edges;

  static FeatureBinner fit(const Eigen::MatrixXd& x, int max_bins);
  /// Column-major n x d bin codes.
  std::vector<std::uint8_t> transform(const Eigen::MatrixXd& x) const;
};

/// Binary tree with "go left when x[feature] <= threshold" nodes.
struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

double predict_tree(const std::vector<TreeNode>& tree, const double* row, Eigen::Index stride);
void put_tree(std::ostream& os, const std::vector<TreeNode>& tree);
std::vector<TreeNode> get_tree(std::istream& is);

// ---- per-family entry points --------------------------------------------

std::unique_ptr<TrainedModel> train_linear(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
std::unique_ptr<TrainedModel> train_hist_gbt(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
std::unique_ptr<TrainedModel> train_forest(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
std::unique_ptr<TrainedModel> train_mlp(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

std::unique_ptr<TrainedModel> load_linear(Task task, Eigen::Index dim, std::istream& is);
std::unique_ptr<TrainedModel> load_hist_gbt(Task task, Eigen::Index dim, std::istream& is);
std::unique_ptr<TrainedModel> load_forest(Task task, Eigen::Index dim, std::istream& is);
std::unique_ptr<TrainedModel> load_mlp(Task task, Eigen::Index dim, std::istream& is);

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace slumeval::detail
