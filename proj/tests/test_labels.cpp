#include <doctest.h>

#include <filesystem>

#include "slumeval/labels.hpp"
#include "slumeval/random.hpp"

#include "oracles.hpp"

using namespace slumeval;

namespace {

SubpixelMask random_mask(std::size_t cells_h, std::size_t cells_w, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> bits(cells_h * kSubfactor * cells_w * kSubfactor);
  for (auto& b : bits) b = uniform01(rng) < p ? 1 : 0;
  return SubpixelMask::from_bits(cells_h * kSubfactor, cells_w * kSubfactor, kSubfactor, std::move(bits));
}

SubpixelMask one_cell(int set) {
  std::vector<std::uint8_t> bits(kSubpixels, 0);
  for (int i = 0; i < set; ++i) bits[static_cast<std::size_t>(i)] = 1;
  return SubpixelMask::from_bits(kSubfactor, kSubfactor, kSubfactor, std::move(bits));
}

LabelPair from_counts(std::vector<std::uint16_t> counts) {
  const std::size_t n = counts.size();
  std::vector<std::uint8_t> bits(n * kSubpixels, 0);
  // cells laid out in one row
  for (std::size_t c = 0; c < n; ++c) {
    for (int k = 0; k < counts[c]; ++k) {
      const std::size_t r = static_cast<std::size_t>(k) / kSubfactor, s = static_cast<std::size_t>(k) % kSubfactor;
      bits[r * n * kSubfactor + c * kSubfactor + s] = 1;
    }
  }
  return aggregate(SubpixelMask::from_bits(kSubfactor, n * kSubfactor, kSubfactor, std::move(bits)));
}

}  // namespace

TEST_CASE("aggregate: worked cell counts") {
  const LabelPair full = aggregate(one_cell(289));
  CHECK(full.count[0] == 289);
  CHECK(full.density[0] == 1.0);
  CHECK(full.cls[0] == 1);
  const LabelPair empty = aggregate(one_cell(0));
  CHECK(empty.count[0] == 0);
  CHECK(empty.density[0] == 0.0);
  CHECK(empty.cls[0] == 0);
  const LabelPair half = aggregate(one_cell(145));
  CHECK(half.density[0] == doctest::Approx(0.50173).epsilon(1e-5));
  CHECK(half.cls[0] == 1);
}

TEST_CASE("aggregate equals brute-force sub-pixel counting") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SubpixelMask m = random_mask(6, 9, 0.02 + 0.1 * static_cast<double>(seed), seed);
    const LabelPair l = aggregate(m);
    const std::vector<int> counts = oracle::subpixel_counts(m);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      REQUIRE(l.count[i] == counts[i]);
      REQUIRE(l.density[i] == static_cast<double>(counts[i]) / 289.0);
      REQUIRE(l.cls[i] == (counts[i] > 0 ? 1 : 0));
    }
  }
}

TEST_CASE("from_bits rejects extents that are not multiples of the subfactor") {
  CHECK_THROWS(SubpixelMask::from_bits(18, 17, 17, std::vector<std::uint8_t>(18 * 17)));
  CHECK_THROWS(SubpixelMask::from_bits(17, 17, 17, std::vector<std::uint8_t>(10)));
}

TEST_CASE("merge_overlap takes the per-cell maximum") {
  const LabelPair a = from_counts({0, 200, 7});
  const LabelPair b = from_counts({100, 150, 0});
  const LabelPair m = merge_overlap(a, b);
  CHECK(m.count == std::vector<std::uint16_t>{100, 200, 7});
  CHECK(m.cls == std::vector<std::uint8_t>{1, 1, 1});
  const LabelPair self = merge_overlap(a, a);
  CHECK(self.count == a.count);
  CHECK(self.density == a.density);
  CHECK(self.cls == a.cls);
  CHECK_THROWS(merge_overlap(a, from_counts({1, 2})));
}

TEST_CASE("merge then threshold equals threshold then max") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LabelPair a = aggregate(random_mask(3, 3, 0.001, seed));
    const LabelPair b = aggregate(random_mask(3, 3, 0.001, seed + 100));
    const LabelPair m = merge_overlap(a, b);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m.cls[i] == std::max(a.cls[i], b.cls[i]));
  }
}

TEST_CASE("density_histogram bins") {
  const LabelPair zeros = from_counts({0, 0, 0});
  const std::vector<std::size_t> all3{0, 1, 2};
  const auto z = density_histogram(zeros, all3);
  CHECK(z[0] == 1.0);
  CHECK(z[4] == 0.0);

  const LabelPair l = from_counts({0, 0, 0, 289});
  const std::vector<std::size_t> all4{0, 1, 2, 3};
  const auto h = density_histogram(l, all4);
  CHECK(h[0] == doctest::Approx(0.75));
  CHECK(h[1] == 0.0);
  CHECK(h[4] == doctest::Approx(0.25));

  // (0,0.3] (0.3,0.6] (0.6,0.9] (0.9,1]
  const LabelPair edges = from_counts({1, 86, 87, 173, 174, 260, 261});
  const std::vector<std::size_t> all7{0, 1, 2, 3, 4, 5, 6};
  const auto e = density_histogram(edges, all7);
  CHECK(e[1] == doctest::Approx(2.0 / 7));  // 1/289, 86/289 = 0.2976
  CHECK(e[2] == doctest::Approx(2.0 / 7));  // 87/289 = 0.301, 173/289 = 0.599
  CHECK(e[3] == doctest::Approx(2.0 / 7));  // 174/289 = 0.602, 260/289 = 0.8997
  CHECK(e[4] == doctest::Approx(1.0 / 7));  // 261/289 = 0.903
}

TEST_CASE("mask file round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "slumeval_mask";
  std::filesystem::remove_all(dir);
  SubpixelMask m = random_mask(4, 5, 0.3, 9);
  m.city_code = "KEN";
  m.year = 2020;
  write_mask(m, dir / "m.bin");
  const SubpixelMask back = read_mask(dir / "m.bin");
  CHECK(back.bits == m.bits);
  CHECK(back.width == 5);
  CHECK(back.height == 4);
  CHECK(back.city_code == "KEN");
  CHECK(back.year == 2020);
  CHECK(std::filesystem::file_size(dir / "m.bin") == (m.bits.size() + 7) / 8);
}
