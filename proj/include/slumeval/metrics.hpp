#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace slumeval {

inline std::span<const double> as_span(const Eigen::VectorXd& v) noexcept { return {v.data(), static_cast<std::size_t>(v.size())}; }

struct ClsMetrics {
  double f1 = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc_roc;  // empty when y holds a single class
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double threshold = 0.5;
};

/// Ratios with a zero denominator are reported as 0.
ClsMetrics cls_metrics(std::span<const double> y, std::span<const double> proba, double threshold = 0.5);

/// Rank-statistic AUC with average ranks for tied scores; empty for one class.
std::optional<double> auc_roc(std::span<const double> y, std::span<const double> score);

struct RegMetrics {
  std::optional<double> r2;        // empty when var(y) == 0
  bool r2_unstable = false;        // fewer than kStableMinPositives positive targets
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape_pos;  // percent, over y > 0; empty without positives
  std::size_t n_pos = 0;
};

inline constexpr std::size_t kStableMinPositives = 5;

RegMetrics reg_metrics(std::span<const double> y, std::span<const double> pred);

/// 1 - SS_res / SS_tot, empty when SS_tot == 0.
std::optional<double> r_squared(std::span<const double> y, std::span<const double> pred);

struct Decomposition {
  std::optional<double> single_r2;
  std::optional<double> two_stage_gain;
  std::optional<double> oracle_gain;
  std::optional<double> pos_r2;  // needs >= 2 positives with distinct targets
};

Decomposition decompose_r2(std::span<const double> y, std::span<const double> reg_pred,
                           std::span<const double> cls_pred, std::span<const double> y_cls);

/// Median with the midpoint convention for even counts. Throws on empty input.
double median(std::span<const double> v);
/// Population standard deviation.
double stddev(std::span<const double> v);

// ---- evaluation records ------------------------------------------------------

inline constexpr int kRecordSchemaVersion = 1;

struct EvalRecord {
  std::string city;
  int year = 0;
  std::string strategy;
  std::string combo;
  std::string model;
  std::string protocol;
  int fold = 0;
  std::uint64_t seed = 0;
  std::string task;  // "cls" | "reg"
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::optional<ClsMetrics> cls;
  std::optional<RegMetrics> reg;
  std::optional<Decomposition> decomp;
  std::string provenance;  // manifest hash and cell key, when produced by a run
};

enum class Metric {
  f1, iou, precision, recall, accuracy, auc_roc,
  r2, mae, rmse, mape_pos,
  single_r2, two_stage_gain, oracle_gain, pos_r2,
};

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view s);
std::optional<double> metric_value(const EvalRecord& r, Metric m);

/// Lower-is-better metrics (errors) rank inversely.
bool higher_is_better(Metric m);

void write_records_csv(std::ostream& os, std::span<const EvalRecord> records);
/// Nested city -> strategy -> list of records.
nlohmann::json records_to_json(std::span<const EvalRecord> records);
nlohmann::json record_to_json(const EvalRecord& r);
EvalRecord record_from_json(const nlohmann::json& j);

/// Fixed-point formatting used for every reported float.
std::string format_value(double v, int decimals = 6);
std::string format_optional(const std::optional<double>& v, int decimals = 6);

// ---- aggregation -------------------------------------------------------------

/// A (city, year) sample within one experimental configuration.
struct SampleKey {
  std::string city;
  int year = 0;
  std::string strategy;
  std::string combo;
  std::string model;
  std::string protocol;
  std::string task;
  auto operator<=>(const SampleKey&) const = default;
};

SampleKey sample_key(const EvalRecord& r);

struct FoldSummary {
  double median = 0.0;
  double sd = 0.0;  // across folds (F1_std for f1)
  std::size_t folds = 0;
};

/// Median across folds of each sample; records without the metric are skipped.
std::map<SampleKey, FoldSummary> fold_median(std::span<const EvalRecord> records, Metric m);

struct Ranking {
  std::vector<std::string> models;
  std::vector<double> avg_rank;
  std::vector<int> wins;  // shared-first: every tied leader scores a win
  std::size_t samples = 0;
};

/// scores[s][k] is model k's metric on sample s. Rank 1 is best; ties share
/// the average rank.
Ranking rank_models(std::span<const std::string> models, std::span<const std::vector<double>> scores,
                    bool higher_better = true);

struct MarginalGain {
  SampleKey key;     // combo is the non-baseline combination
  std::optional<double> d_f1;
  std::optional<double> d_iou;
  std::optional<double> d_r2;
};

struct MarginalGains {
  std::vector<MarginalGain> gains;
  std::size_t unmatched = 0;  // records without a baseline partner
};

/// Per-fold differences against matched baseline records (same city, year,
/// strategy, model, protocol, task, fold), fold-median aggregated.
MarginalGains marginal_gain(std::span<const EvalRecord> records, std::string_view baseline = "C0");

enum class Usability { both, cls_only, reg_only, neither };
std::string_view usability_name(Usability u);

inline constexpr double kUsableF1 = 0.5;
inline constexpr double kUsableR2 = 0.3;

Usability usability_gate(double f1, double r2);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // non-zero differences
  bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 12;

/// Signed-rank test on a - b. Exact null distribution for n <= 12, normal
/// approximation with tie and continuity correction otherwise.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> v);

}  // namespace slumeval
