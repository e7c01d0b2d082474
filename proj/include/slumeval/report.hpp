#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "slumeval/dims.hpp"
#include "slumeval/metrics.hpp"
#include "slumeval/pipeline.hpp"

namespace slumeval {

/// Strategy, model, protocol and combo of the per-city tables, resolved
/// against what the records contain.
struct ReportView {
  std::string strategy;
  std::string model;
  std::string protocol;
  std::string combo;
};

ReportView resolve_view(std::span<const EvalRecord> records, const ReportSettings& settings);

struct DecompositionRow {
  std::string city;
  std::size_t n_yr = 0;
  std::optional<double> cls_f1;  // cross-year median
  std::optional<double> single_r2;
  std::optional<double> two_stage_gain;
  std::optional<double> oracle_gain;
  std::optional<double> pos_r2;
};

/// One row per city (sorted by descending single R²) under `view`.
std::vector<DecompositionRow> decomposition_rows(std::span<const EvalRecord> records, const ReportView& view);
/// Header: city,n_yr,cls_f1,single_r2,two_stage_gain,oracle_gain,pos_r2; a
/// final Median row carries the cross-city medians of the three diagnostics.
void write_decomposition_csv(std::ostream& os, std::span<const DecompositionRow> rows);

struct UsabilityRow {
  std::string city;
  std::optional<double> f1_c0;
  std::optional<double> f1_best;  // best non-baseline combo
  std::string f1_best_combo;
  std::optional<double> r2_c0;
  std::optional<double> r2_best;
  std::string r2_best_combo;
};

/// Cross-year medians per city and combo under the view's strategy, model and
/// protocol; the best value is taken over the non-baseline combos.
std::vector<UsabilityRow> usability_rows(std::span<const EvalRecord> records, const ReportView& view,
                                         const std::string& baseline = "C0");
/// The gate is applied to the best values (the baseline when no other combo ran).
Usability row_usability(const UsabilityRow& row);
void write_usability_csv(std::ostream& os, std::span<const UsabilityRow> rows);

void write_strategy_comparison_csv(std::ostream& os, std::span<const EvalRecord> records);
void write_model_ranking_csv(std::ostream& os, std::span<const EvalRecord> records);
void write_per_city_csv(std::ostream& os, std::span<const EvalRecord> records);
void write_marginal_gains_csv(std::ostream& os, std::span<const EvalRecord> records, const std::string& baseline);
/// Per-city rows plus a Mean row.
void write_spatial_validation_csv(std::ostream& os, std::span<const SpatialValidation> rows);

struct ReportInputs {
  std::vector<EvalRecord> records;
  std::vector<SpatialValidation> spatial;
  std::optional<AblationResult> ablation;
  std::optional<ImportanceTable> importance;
  std::vector<CellFailure> failures;
  std::string manifest_hash;
};

/// Writes every table family into `dir`. Tables without input are written
/// with headers only.
void emit_report(const ReportInputs& inputs, const ReportSettings& settings, const std::filesystem::path& dir);

}  // namespace slumeval
