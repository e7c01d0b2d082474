#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "slumeval/features.hpp"
#include "slumeval/random.hpp"

using namespace slumeval;

namespace {

std::vector<FeatureBlock> random_blocks(std::size_t w, std::size_t h, std::uint64_t seed,
                                        std::vector<Category> cats = {kAllCategories.begin(), kAllCategories.end()}) {
  Rng rng(seed);
  std::vector<FeatureBlock> blocks;
  for (auto cat : cats) {
    FeatureBlock b;
    b.category = cat;
    for (int j = 0; j < category_dim(cat); ++j) {
      Grid g(w, h);
      g.band_name = std::string(category_name(cat)) + "_" + std::to_string(j);
      for (auto& v : g.values) v = static_cast<float>(standard_normal(rng));
      b.bands.push_back(std::move(g));
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::vector<std::size_t> all_cells(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("combo widths") {
  const int widths[] = {64, 82, 67, 73, 88, 118};
  for (std::size_t i = 0; i < kAllCombos.size(); ++i) CHECK(combo(kAllCombos[i]).total_dim == widths[i]);
  const auto blocks = random_blocks(4, 3, 1);
  for (std::size_t i = 0; i < kAllCombos.size(); ++i) {
    CHECK(stack(blocks, kAllCombos[i], all_cells(12)).cols() == widths[i]);
  }
  CHECK(parse_combo("C5") == ComboCode::c5);
  CHECK(combo_name(ComboCode::c3) == "C3");
  CHECK_THROWS(parse_combo("C9"));
}

TEST_CASE("stack follows the fixed category order and C5 extends C0") {
  const auto blocks = random_blocks(5, 4, 2);
  const auto cells = all_cells(20);
  const Eigen::MatrixXd c0 = stack(blocks, ComboCode::c0, cells);
  const Eigen::MatrixXd c5 = stack(blocks, ComboCode::c5, cells);
  CHECK(c5.leftCols(64) == c0);
  // RS block sits right after NTL in C5.
  CHECK(c5(7, 64 + 18) == static_cast<double>(blocks[2].bands[0].values[7]));
  CHECK(stack(blocks, ComboCode::c2, cells)(3, 64) == static_cast<double>(blocks[2].bands[0].values[3]));
}

TEST_CASE("stack requires the combo's categories") {
  const auto blocks = random_blocks(3, 3, 3, {Category::aef, Category::ntl});
  CHECK_NOTHROW(stack(blocks, ComboCode::c1, all_cells(9)));
  CHECK_THROWS(stack(blocks, ComboCode::c2, all_cells(9)));
}

TEST_CASE("stackable_cells drops cells with a sentinel in a requested band") {
  auto blocks = random_blocks(3, 3, 4);
  blocks[0].bands[10].values[4] = kNoData;  // AEF
  blocks[3].bands[0].values[2] = kNoData;   // Spatial
  CHECK(stackable_cells(blocks, ComboCode::c0).size() == 8);
  CHECK(stackable_cells(blocks, ComboCode::c1).size() == 8);
  CHECK(stackable_cells(blocks, ComboCode::c3).size() == 7);
  CHECK_THROWS(stack(blocks, ComboCode::c0, all_cells(9)));
}

TEST_CASE("robust scaling arithmetic") {
  Eigen::MatrixXd x(5, 2);
  x << 1, 5, 2, 5, 3, 5, 4, 5, 100, 5;
  const auto p = fit_robust_scale(x);
  CHECK(p.median[0] == 3.0);
  CHECK(p.iqr[0] == 2.0);
  Eigen::MatrixXd probe(1, 2);
  probe << 100, 5;
  const Eigen::MatrixXd s = p.apply(probe);
  CHECK(s(0, 0) == 48.5);
  CHECK(s(0, 1) == 0.0);
  Eigen::MatrixXd med(1, 2);
  med << 3, 5;
  CHECK(p.apply(med).norm() == 0.0);
}

TEST_CASE("robust scaling centres and preserves order") {
  Rng rng(5);
  Eigen::MatrixXd x(101, 6);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = std::exp(standard_normal(rng)) * static_cast<double>(j + 1);
  }
  const auto p = fit_robust_scale(x);
  const Eigen::MatrixXd s = p.apply(x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> col(s.col(j).data(), s.col(j).data() + s.rows());
    std::sort(col.begin(), col.end());
    CHECK(std::abs(quantile_sorted(col, 0.5)) < 1e-12);
    for (Eigen::Index i = 1; i < x.rows(); ++i) {
      CHECK((x(i, j) < x(i - 1, j)) == (s(i, j) < s(i - 1, j)));
    }
  }
}

TEST_CASE("cross_city_cv") {
  const std::vector<double> same{2, 2, 2};
  CHECK(cross_city_cv(same) == 0.0);
  const std::vector<double> two{1, 3};
  CHECK(cross_city_cv(two) == doctest::Approx(0.5));
  const std::vector<double> one{1};
  CHECK_THROWS(cross_city_cv(one));
}

TEST_CASE("feature manifest round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "slumeval_features";
  std::filesystem::remove_all(dir);
  const auto blocks = random_blocks(4, 4, 6, {Category::aef, Category::rs});
  FeatureManifest manifest;
  for (const auto& b : blocks) {
    for (const auto& g : b.bands) {
      const auto p = dir / "bands" / (g.band_name + ".bif");
      write_bif(g, p);
      manifest[b.category].push_back(p);
    }
  }
  write_feature_manifest(manifest, dir / "features.json");
  const auto back = load_feature_blocks(read_feature_manifest(dir / "features.json"));
  REQUIRE(back.size() == 2);
  CHECK(back[1].category == Category::rs);
  CHECK(back[0].bands[63].values == blocks[0].bands[63].values);
  CHECK(stack(back, ComboCode::c2, all_cells(16)) == stack(blocks, ComboCode::c2, all_cells(16)));
}
