#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "slumeval/metrics.hpp"
#include "slumeval/models.hpp"
#include "slumeval/splits.hpp"

namespace slumeval {

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // one orthonormal component per row, descending variance
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd evr;
  Eigen::Index rank = 0;
  bool rank_deficient = false;

  Eigen::Index dim() const noexcept { return mean.size(); }
  /// Centered projection onto the first k components.
  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows, Eigen::Index k) const;
  /// Maps k-dim scores back to input space.
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& scores) const;
  Eigen::VectorXd cumulative_evr() const;
};

/// Eigen-decomposition of the sample covariance. The largest-magnitude entry
/// of every component is made positive so fits are reproducible.
PcaModel pca_fit(const Eigen::MatrixXd& rows);

inline const std::vector<int> kDefaultKGrid{8, 16, 24, 32, 38, 48, 56, 64};

/// Smallest k whose value reaches 95% of the curve maximum; none when the
/// maximum is not positive.
std::optional<int> saturation_point(std::span<const int> k_grid, std::span<const double> values,
                                    double fraction = 0.95);

struct AblationConfig {
  std::vector<int> k_grid = kDefaultKGrid;
  std::vector<ModelSpec> models;  // cls and/or reg specs
  std::vector<Protocol> protocols{Protocol::random, Protocol::spatial};
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

struct AblationRow {
  std::string model;
  std::string protocol;
  std::string task;
  std::string metric;
  int k = 0;
  std::size_t samples = 0;
  double median = 0.0;                // across (city, year) fold medians
  std::optional<double> pct_of_full;  // median(k) / median(k_max) * 100
  double median_delta = 0.0;          // median over samples of value(k) - value(k_max)
  double wilcoxon_p = 1.0;
};

struct AblationResult {
  std::vector<EvalRecord> records;  // combo field reads "PCA<k>"
  std::vector<AblationRow> rows;
};

/// S1 ablation: per target, split and fold, PCA is fit on the AEF columns of
/// the training rows and each model is retrained on the first k components.
AblationResult ablation_run(const Corpus& corpus, const AblationConfig& config);

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

// ---- attribution ------------------------------------------------------------

struct Attribution {
  Eigen::MatrixXd phi;        // explain rows x features
  Eigen::VectorXd mean_abs;   // per feature
  double baseline_score = 0;  // f(background mean)
  bool exact = false;         // closed form (linear) or Monte-Carlo
};

/// Attributions of model.score() relative to the background mean. Linear
/// models use phi_j = w_j (x_j - mean_j); others use permutation Shapley over
/// `n_orderings` sampled feature orders (seeded per row and ordering).
Attribution attribute(const TrainedModel& model, const Eigen::MatrixXd& background, const Eigen::MatrixXd& explain,
                      int n_orderings, std::uint64_t seed);

struct ImportanceInput {
  std::string city;
  std::string model;
  std::vector<double> importance;  // mean |phi| per dimension
};

struct ImportanceTable {
  std::vector<std::string> models;
  std::vector<std::string> cities;
  std::size_t dims = 0;
  int top = 10;
  // Indexed [model][dim].
  std::vector<std::vector<double>> mean_importance;  // cross-city mean
  std::vector<std::vector<double>> mean_rank;        // cross-city mean rank, 1 = most important
  std::vector<std::vector<double>> p_value;          // lower-tail add-one permutation p
  std::vector<std::vector<std::uint8_t>> in_top;     // dim among the model's `top` best mean ranks
  // Indexed [dim].
  std::vector<int> consensus;
  std::vector<double> pooled_mean_rank;
  std::vector<double> pooled_p;
};

/// Ranks each (city, model) importance vector (descending, ties by index),
/// averages ranks across cities and tests them against uniformly permuted
/// rank vectors.
ImportanceTable consensus_and_significance(std::span<const ImportanceInput> inputs, int n_perm, std::uint64_t seed,
                                           int top = 10);

/// Rank 1 = largest value; ties broken by position, so ranks are a permutation.
std::vector<int> importance_ranks(std::span<const double> importance);

void write_importance_csv(std::ostream& os, const ImportanceTable& table);
nlohmann::json consensus_grid_json(const ImportanceTable& table);

}  // namespace slumeval
