#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "slumeval/grid.hpp"

namespace slumeval {

/// Feature categories in their fixed concatenation order.
enum class Category { aef, ntl, rs, spatial, poi };

inline constexpr std::array<Category, 5> kAllCategories{Category::aef, Category::ntl, Category::rs,
                                                        Category::spatial, Category::poi};

constexpr int category_dim(Category c) {
  switch (c) {
    case Category::aef: return 64;
    case Category::ntl: return 18;
    case Category::rs: return 3;
    case Category::spatial: return 9;
    case Category::poi: return 24;
  }
  return 0;
}

std::string_view category_name(Category c);
Category parse_category(std::string_view name);

/// `dim` bands of one category, all sharing one geometry.
struct FeatureBlock {
  Category category = Category::aef;
  std::vector<Grid> bands;
};

enum class ComboCode { c0, c1, c2, c3, c4, c5 };

inline constexpr std::array<ComboCode, 6> kAllCombos{ComboCode::c0, ComboCode::c1, ComboCode::c2,
                                                     ComboCode::c3, ComboCode::c4, ComboCode::c5};

struct Combo {
  ComboCode code = ComboCode::c0;
  std::vector<Category> categories;
  int total_dim = 0;
};

Combo combo(ComboCode code);
std::string_view combo_name(ComboCode code);
ComboCode parse_combo(std::string_view name);

/// Cells where every band of the requested categories holds a non-sentinel value.
std::vector<std::size_t> stackable_cells(std::span<const FeatureBlock> blocks, ComboCode code);

/// Per-cell feature rows, AEF | NTL | RS | Spatial | POI restricted to the
/// combo's categories. Throws on a missing category, mismatched geometry or
/// a sentinel inside a requested cell.
Eigen::MatrixXd stack(std::span<const FeatureBlock> blocks, ComboCode code,
                      std::span<const std::size_t> cells);

/// Linear-interpolation quantile of sorted values (q in [0,1]).
double quantile_sorted(std::span<const double> sorted, double q);

struct RobustScaleParams {
  Eigen::VectorXd median;
  Eigen::VectorXd iqr;

  /// (x - median) / iqr, with iqr == 0 treated as 1.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

RobustScaleParams fit_robust_scale(const Eigen::MatrixXd& train);

/// Population SD of city-level means divided by their mean.
double cross_city_cv(std::span<const double> city_means);

// Feature manifest: {"AEF": ["aef_00.bif", ...], "NTL": [...], ...}; relative
// paths resolve against the manifest's directory.
using FeatureManifest = std::map<Category, std::vector<std::filesystem::path>>;

FeatureManifest read_feature_manifest(const std::filesystem::path& path);
void write_feature_manifest(const FeatureManifest& manifest, const std::filesystem::path& path);
std::vector<FeatureBlock> load_feature_blocks(const FeatureManifest& manifest);

}  // namespace slumeval
