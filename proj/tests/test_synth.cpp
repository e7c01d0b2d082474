#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "slumeval/features.hpp"
#include "slumeval/metrics.hpp"
#include "slumeval/models.hpp"
#include "slumeval/sample_table.hpp"
#include "slumeval/splits.hpp"
#include "slumeval/synth.hpp"

using namespace slumeval;

namespace {

SyntheticWorldSpec small_spec() {
  SyntheticWorldSpec s;
  s.seed = 5;
  s.cities = 2;
  s.years = {2019, 2021};
  s.width = 24;
  s.height = 24;
  s.clusters = 6;
  s.cluster_radius = 2.5;
  return s;
}

std::vector<std::size_t> all_cells(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double pooled_share(const SyntheticWorld& w, std::size_t bin) {
  double hit = 0, total = 0;
  for (const auto& item : w.items) {
    if (!item.labels) continue;
    const auto shares = density_histogram(*item.labels, all_cells(item.labels->size()));
    hit += shares[bin] * static_cast<double>(item.labels->size());
    total += static_cast<double>(item.labels->size());
  }
  return hit / total;
}

double correlation(const std::vector<float>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("same seed gives identical worlds") {
  const auto a = synth_world(small_spec());
  const auto b = synth_world(small_spec());
  REQUIRE(a.items.size() == 4);
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].key == b.items[i].key);
    CHECK(a.items[i].mask->bits == b.items[i].mask->bits);
    for (std::size_t c = 0; c < a.items[i].blocks.size(); ++c) {
      for (std::size_t j = 0; j < a.items[i].blocks[c].bands.size(); ++j) {
        CHECK(a.items[i].blocks[c].bands[j].values == b.items[i].blocks[c].bands[j].values);
      }
    }
  }
  auto other = small_spec();
  other.seed = 6;
  CHECK(synth_world(other).items[0].blocks[0].bands[0].values != a.items[0].blocks[0].bands[0].values);
  std::set<std::string> cities;
  for (const auto& item : a.items) cities.insert(item.key.city);
  CHECK(cities == std::set<std::string>{synthetic_city_code(0), synthetic_city_code(1)});
  CHECK(std::is_sorted(a.items.begin(), a.items.end(), [](const auto& x, const auto& y) { return x.key < y.key; }));
}

TEST_CASE("zero share and density histogram targets") {
  auto s = small_spec();
  s.cities = 3;
  s.width = s.height = 36;
  s.zero_share = 0.893;
  CHECK(std::abs(pooled_share(synth_world(s), 0) - 0.893) <= 0.01);

  s.high_density_share = 0.086;
  CHECK_THROWS(synth_world(s));

  auto bimodal = small_spec();
  bimodal.cities = 2;
  bimodal.width = bimodal.height = 72;
  bimodal.clusters = 1;
  bimodal.cluster_radius = 12.0;
  bimodal.zero_share = 0.893;
  bimodal.high_density_share = 0.086;
  const auto w = synth_world(bimodal);
  CHECK(std::abs(pooled_share(w, 0) - 0.893) <= 0.005);
  CHECK(std::abs(pooled_share(w, 4) - 0.086) <= 0.005);

  s.high_density_share.reset();
  s.clusters = 0;
  s.zero_share = 0.5;
  CHECK_THROWS(synth_world(s));
}

TEST_CASE("noiseless world is linearly identifiable") {
  auto s = small_spec();
  s.noise_sd = 0.0;
  s.correlated_noise_sd = 0.0;
  s.field_sd = 0.0;
  s.city_drift = 0.0;
  s.year_drift = 0.0;
  const auto w = synth_world(s);
  std::vector<SampleTable> parts;
  for (const auto& item : w.items) parts.push_back(build_sample_table(item.key, item.blocks, *item.labels, ComboCode::c0));
  const SampleTable t = concat(parts);
  const Split split = random_split(t, 1);
  const SampleTable tr = t.take(split.train), te = t.take(split.test);
  ModelSpec spec;
  spec.task = Task::reg;
  const auto m = train(spec, tr.x, tr.reg_target());
  const Eigen::VectorXd y = te.reg_target();
  const Eigen::VectorXd p = m->predict_density(te.x);
  CHECK(*r_squared(as_span(y), as_span(p)) >= 0.99);
}

TEST_CASE("auxiliary categories correlate with density as designed") {
  const auto w = synth_world(small_spec());
  const auto& item = w.items[0];
  const auto& rho = item.labels->density;
  CHECK(correlation(item.blocks[1].bands[2].values, rho) > 0.2);   // NTL
  CHECK(correlation(item.blocks[4].bands[0].values, rho) < -0.2);  // POI
  CHECK(item.blocks.size() == kAllCategories.size());
  CHECK(item.blocks[1].bands.size() == 18);
  CHECK(item.blocks[2].bands.size() == 3);
}

TEST_CASE("NTL growth band reaches the requested cross-city CV") {
  SyntheticWorldSpec s;
  s.cities = 12;
  s.years = {2020};
  s.width = s.height = 12;
  s.clusters = 3;
  s.cluster_radius = 1.5;
  s.zero_share.reset();
  s.ntl_growth_cv = 3.01;
  const auto w = synth_world(s);
  std::vector<double> means;
  for (const auto& item : w.items) {
    const auto& v = item.blocks[1].bands[0].values;
    double m = 0;
    for (float x : v) m += x;
    means.push_back(m / static_cast<double>(v.size()));
  }
  CHECK(std::abs(cross_city_cv(means) - 3.0) <= 0.3);
  s.cities = 9;
  CHECK_THROWS(synth_world(s));
}

TEST_CASE("static years repeat their inputs") {
  auto s = small_spec();
  s.static_years = true;
  s.growth_per_year = 0.0;
  const auto w = synth_world(s);
  CHECK(w.items[0].blocks[0].bands[5].values == w.items[1].blocks[0].bands[5].values);
  CHECK(w.items[0].labels->count == w.items[1].labels->count);
}

TEST_CASE("unlabelled years carry features only") {
  auto s = small_spec();
  s.unlabeled_years = {2020};
  const auto w = synth_world(s);
  REQUIRE(w.items.size() == 6);
  CHECK(w.items[1].key.year == 2020);
  CHECK(!w.items[1].labels);
  CHECK(!w.items[1].mask);
  CHECK(!w.items[1].blocks.empty());
}

TEST_CASE("spec validation and json") {
  const auto s = small_spec();
  CHECK(synth_spec_to_json(synth_spec_from_json(synth_spec_to_json(s))) == synth_spec_to_json(s));
  auto j = synth_spec_to_json(s);
  j["bogus"] = 1;
  CHECK_THROWS(synth_spec_from_json(j));
  auto bad = s;
  bad.width = 2;
  CHECK_THROWS(synth_world(bad));
  bad = s;
  bad.zero_share = 1.5;
  CHECK_THROWS(synth_world(bad));
  bad = s;
  bad.years.clear();
  CHECK_THROWS(synth_world(bad));
}

TEST_CASE("world files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "slumeval_world";
  std::filesystem::remove_all(dir);
  const auto w = synth_world(small_spec());
  write_world(w, dir);
  const auto back = load_world(dir / "world.json");
  REQUIRE(back.size() == w.items.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].key == w.items[i].key);
    CHECK(back[i].labels->count == w.items[i].labels->count);
    CHECK(back[i].blocks[3].bands[1].values == w.items[i].blocks[3].bands[1].values);
  }
}
