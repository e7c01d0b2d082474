#include "slumeval/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace slumeval {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::aef: return "AEF";
    case Category::ntl: return "NTL";
    case Category::rs: return "RS";
    case Category::spatial: return "Spatial";
    case Category::poi: return "POI";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  for (auto c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  throw std::invalid_argument("unknown feature category '" + std::string(name) + "'");
}

Combo combo(ComboCode code) {
  Combo c;
  c.code = code;
  c.categories.push_back(Category::aef);
  switch (code) {
    case ComboCode::c0: break;
    case ComboCode::c1: c.categories.push_back(Category::ntl); break;
    case ComboCode::c2: c.categories.push_back(Category::rs); break;
    case ComboCode::c3: c.categories.push_back(Category::spatial); break;
    case ComboCode::c4: c.categories.push_back(Category::poi); break;
    case ComboCode::c5:
      c.categories.insert(c.categories.end(),
                          {Category::ntl, Category::rs, Category::spatial, Category::poi});
      break;
  }
  for (auto cat : c.categories) c.total_dim += category_dim(cat);
  return c;
}

std::string_view combo_name(ComboCode code) {
  static constexpr std::array<std::string_view, 6> names{"C0", "C1", "C2", "C3", "C4", "C5"};
  return names[static_cast<std::size_t>(code)];
}

ComboCode parse_combo(std::string_view name) {
  for (auto c : kAllCombos) {
    if (combo_name(c) == name) return c;
  }
  throw std::invalid_argument("unknown combination code '" + std::string(name) + "'");
}

namespace {

const FeatureBlock& find_block(std::span<const FeatureBlock> blocks, Category cat) {
  for (const auto& b : blocks) {
    if (b.category == cat) {
      if (static_cast<int>(b.bands.size()) != category_dim(cat)) {
        throw std::invalid_argument(std::string(category_name(cat)) + " block has " +
                                    std::to_string(b.bands.size()) + " bands, expected " +
                                    std::to_string(category_dim(cat)));
      }
      return b;
    }
  }
  throw std::invalid_argument("feature category " + std::string(category_name(cat)) + " is missing");
}

std::vector<const Grid*> combo_bands(std::span<const FeatureBlock> blocks, ComboCode code) {
  std::vector<const Grid*> bands;
  for (auto cat : combo(code).categories) {
    for (const auto& g : find_block(blocks, cat).bands) bands.push_back(&g);
  }
  for (const auto* g : bands) {
    if (!g->same_geometry(*bands.front())) throw std::invalid_argument("feature bands differ in geometry");
  }
  return bands;
}

}  // namespace

std::vector<std::size_t> stackable_cells(std::span<const FeatureBlock> blocks, ComboCode code) {
  const auto bands = combo_bands(blocks, code);
  std::vector<std::size_t> cells;
  const std::size_t n = bands.front()->size();
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (const auto* g : bands) {
      if (!g->is_valid(i)) {
        ok = false;
        break;
      }
    }
    if (ok) cells.push_back(i);
  }
  return cells;
}

Eigen::MatrixXd stack(std::span<const FeatureBlock> blocks, ComboCode code,
                      std::span<const std::size_t> cells) {
  const auto bands = combo_bands(blocks, code);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(bands.size()));
  for (std::size_t j = 0; j < bands.size(); ++j) {
    const Grid& g = *bands[j];
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const std::size_t cell = cells[r];
      if (cell >= g.size()) throw std::out_of_range("stack: cell index outside grid");
      const float v = g.values[cell];
      if (v == g.nodata) {
        throw std::invalid_argument("stack: sentinel value in band " + g.band_name + " at cell " +
                                    std::to_string(cell));
      }
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return x;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

RobustScaleParams fit_robust_scale(const Eigen::MatrixXd& train) {
  if (train.rows() < 2) throw std::invalid_argument("fit_robust_scale: need at least 2 training rows");
  RobustScaleParams p;
  p.median.resize(train.cols());
  p.iqr.resize(train.cols());
  std::vector<double> col(static_cast<std::size_t>(train.rows()));
  for (Eigen::Index j = 0; j < train.cols(); ++j) {
    for (Eigen::Index i = 0; i < train.rows(); ++i) col[static_cast<std::size_t>(i)] = train(i, j);
    std::sort(col.begin(), col.end());
    p.median[j] = quantile_sorted(col, 0.5);
    p.iqr[j] = quantile_sorted(col, 0.75) - quantile_sorted(col, 0.25);
  }
  return p;
}

Eigen::MatrixXd RobustScaleParams::apply(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != median.size()) throw std::invalid_argument("robust scale: column count mismatch");
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double div = iqr[j] > 0.0 ? iqr[j] : 1.0;
    out.col(j) = (rows.col(j).array() - median[j]) / div;
  }
  return out;
}

double cross_city_cv(std::span<const double> city_means) {
  if (city_means.size() < 2) throw std::invalid_argument("cross_city_cv: need at least 2 cities");
  const double n = static_cast<double>(city_means.size());
  const double mean = std::accumulate(city_means.begin(), city_means.end(), 0.0) / n;
  if (mean == 0.0) throw std::invalid_argument("cross_city_cv: global mean is zero");
  double ss = 0.0;
  for (double m : city_means) ss += (m - mean) * (m - mean);
  return std::sqrt(ss / n) / mean;
}

FeatureManifest read_feature_manifest(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  const auto dir = path.parent_path();
  FeatureManifest m;
  for (const auto& [key, val] : j.items()) {
    const Category cat = parse_category(key);
    std::vector<std::filesystem::path> files;
    for (const auto& f : val) {
      std::filesystem::path p = f.get<std::string>();
      files.push_back(p.is_absolute() ? p : dir / p);
    }
    if (static_cast<int>(files.size()) != category_dim(cat)) {
      throw std::runtime_error(path.string() + ": category " + key + " lists " +
                               std::to_string(files.size()) + " bands, expected " +
                               std::to_string(category_dim(cat)));
    }
    m[cat] = std::move(files);
  }
  if (!m.contains(Category::aef)) throw std::runtime_error(path.string() + ": AEF bands missing");
  return m;
}

void write_feature_manifest(const FeatureManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::object();
  const auto dir = path.parent_path();
  for (const auto& [cat, files] : manifest) {
    auto& arr = j[std::string(category_name(cat))] = nlohmann::json::array();
    for (const auto& f : files) arr.push_back(std::filesystem::relative(f, dir).generic_string());
  }
  write_json_file(path, j);
}

std::vector<FeatureBlock> load_feature_blocks(const FeatureManifest& manifest) {
  std::vector<FeatureBlock> blocks;
  for (auto cat : kAllCategories) {
    auto it = manifest.find(cat);
    if (it == manifest.end()) continue;
    FeatureBlock b;
    b.category = cat;
    for (const auto& f : it->second) b.bands.push_back(read_bif(f));
    blocks.push_back(std::move(b));
  }
  return blocks;
}

}  // namespace slumeval
