#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace slumeval {

enum class Task { cls, reg };
enum class Family { linear, hist_gbt, random_forest, mlp };

std::string_view task_name(Task t);
Task parse_task(std::string_view s);
std::string_view family_name(Family f);
Family parse_family(std::string_view s);

// Defaults are the baseline configuration; every field can be overridden from
// a run manifest.

struct LinearParams {
  double c = 1.0;         // inverse L2 strength, logistic classifier
  double alpha = 1.0;     // ridge penalty
  int max_iter = 1000;
  double tol = 1e-6;      // gradient-norm stop
};

struct HistGbtParams {
  int max_iter = 200;
  int max_depth = 6;
  double learning_rate = 0.1;
  double huber_delta = 10.0;
  int max_bins = 256;
  int max_leaf_nodes = 31;
  int min_samples_leaf = 20;
  double l2_regularization = 0.0;
};

struct ForestParams {
  int n_estimators = 200;
  int max_depth = 12;
  int min_samples_leaf = 5;
  int max_bins = 256;
};

struct MlpParams {
  std::vector<int> hidden{512, 256, 128, 64};
  double learning_rate = 1e-3;
  int patience = 20;
  int max_epochs = 500;
  int batch_size = 4096;
  double huber_delta = 10.0;
  double validation_fraction = 0.1;
  bool pos_weight = true;
};

struct ModelSpec {
  Task task = Task::cls;
  Family family = Family::linear;
  std::uint64_t seed = 0;
  LinearParams linear;
  HistGbtParams gbt;
  ForestParams forest;
  MlpParams mlp;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
/// Starts from `base` and applies every key present in `j`.
ModelSpec spec_from_json(const nlohmann::json& j, ModelSpec base = {});

/// A fitted predictor. Immutable after training; safe to share across threads.
class TrainedModel {
 public:
  virtual ~TrainedModel() = default;

  Task task() const noexcept { return task_; }
  Family family() const noexcept { return family_; }
  Eigen::Index input_dim() const noexcept { return input_dim_; }

  /// Positive-class probability (cls models only).
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& rows) const;
  /// Raw density prediction in sub-pixel count units (reg models only).
  Eigen::VectorXd predict_density(const Eigen::MatrixXd& rows) const;
  /// The quantity explained by attribution: logit for cls models with a
  /// logistic link, probability for forests, the prediction for reg models.
  Eigen::VectorXd score(const Eigen::MatrixXd& rows) const;

  void save(std::ostream& os) const;

 protected:
  TrainedModel(Task task, Family family, Eigen::Index input_dim)
      : task_(task), family_(family), input_dim_(input_dim) {}

  virtual Eigen::VectorXd raw_score(const Eigen::MatrixXd& rows) const = 0;
  virtual bool score_is_logit() const { return task_ == Task::cls; }
  virtual void save_state(std::ostream& os) const = 0;

 private:
  void check_input(const Eigen::MatrixXd& rows) const;

  Task task_;
  Family family_;
  Eigen::Index input_dim_;
};

/// Trains a model. `y` holds 0/1 labels (cls) or sub-pixel counts (reg).
/// Throws on fewer than 2 rows, non-finite features, or a single-class
/// classification target.
std::unique_ptr<TrainedModel> train(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

std::unique_ptr<TrainedModel> load_model(std::istream& is);

/// Huber loss with threshold delta.
double huber_loss(double residual, double delta);

/// Linear predictors expose their weights in raw input space:
/// score(x) = weights . x + intercept.
class LinearModel : public TrainedModel {
 public:
  virtual Eigen::VectorXd raw_weights() const = 0;
  virtual double raw_intercept() const = 0;

 protected:
  using TrainedModel::TrainedModel;
};

}  // namespace slumeval
