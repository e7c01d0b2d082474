#include <doctest.h>

#include <cmath>

#include "slumeval/random.hpp"
#include "slumeval/spatial.hpp"

#include "oracles.hpp"

using namespace slumeval;

namespace {

Grid random_grid(std::size_t w, std::size_t h, Rng& rng, double nodata_share = 0.0) {
  Grid g(w, h);
  for (auto& v : g.values) v = uniform01(rng) < nodata_share ? kNoData : static_cast<float>(standard_normal(rng));
  return g;
}

Grid binary_grid(std::size_t w, std::size_t h, Rng& rng, double p) {
  Grid g(w, h);
  for (auto& v : g.values) v = uniform01(rng) < p ? 1.0f : 0.0f;
  return g;
}

}  // namespace

TEST_CASE("queen weights") {
  const Grid g(3, 3, 1.0f);
  const auto w = queen_weights(g);
  CHECK(w.n() == 9);
  CHECK(w.degree(4) == 8);
  for (std::size_t k = w.offsets[4]; k < w.offsets[5]; ++k) CHECK(w.weights[k] == 0.125);
  CHECK(w.degree(0) == 3);
  CHECK(w.weights[w.offsets[0]] == doctest::Approx(1.0 / 3.0));
  CHECK(w.row_sum(8) == doctest::Approx(1.0));

  Grid iso(3, 3, kNoData);
  iso.at(1, 1) = 1.0f;
  iso.at(0, 0) = kNoData;
  const auto wi = queen_weights(iso);
  REQUIRE(wi.n() == 1);
  CHECK(wi.isolate[0] == 1);
  CHECK(wi.row_sum(0) == 0.0);

  const auto raw = queen_weights(g, false);
  CHECK(raw.s0() == doctest::Approx(40.0));
}

TEST_CASE("Moran's I matches the dense oracle") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Grid g = random_grid(3 + uniform_index(rng, 15), 3 + uniform_index(rng, 15), rng, 0.15);
    const auto w = queen_weights(g);
    const auto v = node_values(g, w);
    CHECK(std::abs(morans_i(v, w, 0, 1).i - oracle::dense_moran(g)) < 1e-9);
  }
}

TEST_CASE("Moran's I on structured fields") {
  Grid halves(50, 50);
  for (std::size_t r = 0; r < 50; ++r) {
    for (std::size_t c = 25; c < 50; ++c) halves.at(r, c) = 1.0f;
  }
  const auto wh = queen_weights(halves);
  const auto mh = morans_i(node_values(halves, wh), wh, 49, 2);
  CHECK(mh.i > 0.9);
  CHECK(mh.i == doctest::Approx(oracle::dense_moran(halves)).epsilon(1e-12));
  CHECK(mh.p_perm == doctest::Approx(1.0 / 50.0));

  Grid checker(4, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) checker.at(r, c) = static_cast<float>((r + c) % 2);
  }
  const auto wc = queen_weights(checker);
  const double ic = morans_i(node_values(checker, wc), wc, 0, 3).i;
  CHECK(ic < 0);
  CHECK(ic == doctest::Approx(oracle::dense_moran(checker)).epsilon(1e-12));

  const Grid flat(5, 5, 2.0f);
  const auto wf = queen_weights(flat);
  CHECK_THROWS(morans_i(node_values(flat, wf), wf, 9, 1));
}

TEST_CASE("Moran permutation mean approaches the randomisation expectation") {
  Rng rng(4);
  const Grid g = random_grid(20, 20, rng);
  const auto w = queen_weights(g);
  const auto r = morans_i(node_values(g, w), w, 999, 5);
  CHECK(r.expected == doctest::Approx(-1.0 / 399.0));
  CHECK(std::abs(r.perm_mean - r.expected) < 3.0 * r.perm_sd / std::sqrt(999.0));
  const auto again = morans_i(node_values(g, w), w, 999, 5);
  CHECK(again.p_perm == r.p_perm);
  CHECK(again.perm_mean == r.perm_mean);
}

TEST_CASE("residual Moran") {
  Rng rng(6);
  Grid gt(30, 30), noisy(30, 30), shifted(30, 30);
  for (std::size_t r = 0; r < 30; ++r) {
    for (std::size_t c = 0; c < 30; ++c) {
      gt.at(r, c) = static_cast<float>(std::sin(0.3 * static_cast<double>(r)) + std::cos(0.2 * static_cast<double>(c)));
      noisy.at(r, c) = gt.at(r, c) + static_cast<float>(0.1 * standard_normal(rng));
      shifted.at(r, c) = gt.at(r, c) + (r < 10 && c < 10 ? 1.0f : 0.0f) + static_cast<float>(0.05 * standard_normal(rng));
    }
  }
  const auto w = queen_weights(gt);
  const auto g = node_values(gt, w);
  const auto iid = residual_moran(g, node_values(noisy, w), w, 199, 7);
  CHECK(std::abs(iid.i - iid.expected) < 3.0 * iid.perm_sd);
  const auto block = residual_moran(g, node_values(shifted, w), w, 199, 7);
  CHECK(block.i > 0.5);
  CHECK(block.p_perm <= 0.01);
}

TEST_CASE("LISA planted clusters") {
  Rng rng(8);
  Grid g(60, 60);
  auto inside = [](std::size_t r, std::size_t c, std::size_t r0, std::size_t c0) {
    return r >= r0 && r < r0 + 12 && c >= c0 && c < c0 + 12;
  };
  for (std::size_t r = 0; r < 60; ++r) {
    for (std::size_t c = 0; c < 60; ++c) {
      const bool hot = inside(r, c, 8, 8) || inside(r, c, 38, 36);
      g.at(r, c) = (hot ? 1.0f : 0.0f) + static_cast<float>(0.05 * uniform01(rng));
    }
  }
  const auto w = queen_weights(g);
  const auto map = lisa(node_values(g, w), w, 99, 9);
  auto hot_at = [&](long r, long c) {
    return r >= 0 && c >= 0 && (inside(r, c, 8, 8) || inside(r, c, 38, 36));
  };
  // Core: the whole 3x3 neighbourhood is hot. Far background: no hot cell within two steps.
  auto count_hot = [&](std::size_t r, std::size_t c, long reach) {
    int n = 0;
    for (long dr = -reach; dr <= reach; ++dr) {
      for (long dc = -reach; dc <= reach; ++dc) n += hot_at(static_cast<long>(r) + dr, static_cast<long>(c) + dc);
    }
    return n;
  };
  std::size_t bad_core = 0, bad_bg = 0, cores = 0;
  for (std::size_t r = 1; r + 1 < 60; ++r) {
    for (std::size_t c = 1; c + 1 < 60; ++c) {
      const Quadrant q = map.quadrant[r * 60 + c];
      if (count_hot(r, c, 1) == 9) {
        ++cores;
        bad_core += q != Quadrant::hh;
      } else if (count_hot(r, c, 2) == 0) {
        bad_bg += q != Quadrant::ll && q != Quadrant::ns;
      }
    }
  }
  CHECK(cores == 200);
  CHECK(bad_core == 0);
  CHECK(bad_bg == 0);

  Grid spike(15, 15);
  for (auto& v : spike.values) v = static_cast<float>(0.01 * uniform01(rng));
  spike.at(7, 7) = 5.0f;
  const auto ws = queen_weights(spike);
  const auto ms = lisa(node_values(spike, ws), ws, 99, 10);
  const Quadrant q = ms.quadrant[7 * 15 + 7];
  CHECK((q == Quadrant::hl || q == Quadrant::ns));

  const Grid flat(5, 5, 1.0f);
  const auto wf = queen_weights(flat);
  CHECK_THROWS(lisa(node_values(flat, wf), wf, 9, 1));

  const Grid codes = lisa_grid(map, w, g);
  CHECK(codes.same_geometry(g));
}

TEST_CASE("SSIM") {
  Rng rng(11);
  const Grid a = binary_grid(20, 17, rng, 0.3), b = binary_grid(20, 17, rng, 0.3);
  CHECK(ssim_binary(a, a) == 1.0);
  CHECK(std::abs(ssim_binary(a, b) - ssim_binary(b, a)) <= 1e-12);
  CHECK(ssim_binary(a, b) == doctest::Approx(oracle::direct_ssim(a, b)).epsilon(1e-12));
  const double c1 = kSsimK1 * kSsimK1;
  CHECK(std::abs(ssim_binary(Grid(12, 12, 0.0f), Grid(12, 12, 1.0f)) - c1 / (1.0 + c1)) < 1e-7);
  const Grid s1 = binary_grid(5, 9, rng, 0.5), s2 = binary_grid(5, 9, rng, 0.5);
  CHECK(ssim_binary(s1, s2) == doctest::Approx(oracle::direct_ssim(s1, s2)).epsilon(1e-12));

  Grid holed = a;
  for (std::size_t c = 0; c < 20; ++c) holed.at(0, c) = kNoData;
  Grid a_cut(20, 16), b_cut(20, 16);
  for (std::size_t r = 1; r < 17; ++r) {
    for (std::size_t c = 0; c < 20; ++c) {
      a_cut.at(r - 1, c) = a.at(r, c);
      b_cut.at(r - 1, c) = b.at(r, c);
    }
  }
  CHECK(ssim_binary(holed, b) == doctest::Approx(oracle::direct_ssim(a_cut, b_cut)).epsilon(1e-12));
}

TEST_CASE("area error") {
  Grid gt(10, 10), pred(10, 10);
  for (std::size_t i = 0; i < 20; ++i) gt.values[i] = 1.0f;
  for (std::size_t i = 80; i < 100; ++i) pred.values[i] = 1.0f;
  CHECK(area_pct_err(gt, pred) == 0.0);
  for (std::size_t i = 60; i < 70; ++i) pred.values[i] = 1.0f;
  CHECK(area_pct_err(gt, pred) == doctest::Approx(50.0));
  pred.values[60] = kNoData;
  gt.values[0] = kNoData;
  CHECK(area_pct_err(gt, pred) == doctest::Approx(100.0 * (29.0 - 19.0) / 19.0));
}
