#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slumeval/features.hpp"
#include "slumeval/labels.hpp"
#include "slumeval/sample_table.hpp"

namespace slumeval {

/// Parameters of a synthetic multi-city world. Lengths are in cells.
struct SyntheticWorldSpec {
  std::uint64_t seed = 0;
  int cities = 3;
  std::vector<int> years{2019, 2022};
  std::vector<int> unlabeled_years;  // features only, no mask
  std::size_t width = 48;
  std::size_t height = 48;

  // Planted clusters: disks with sub-pixel density 1 inside core_fraction*R,
  // falling linearly to 0 at R.
  int clusters = 10;
  double cluster_radius = 3.5;
  double core_fraction = 0.4;
  double growth_per_year = 0.03;          // relative radius growth per year index
  std::optional<double> zero_share = 0.85;  // target share of cells without slum sub-pixels
  std::optional<double> high_density_share;  // target share of cells with density > 0.9

  // AEF-like embedding: L (A f(rho) + field + drift) + noise, L 64 x rank orthonormal.
  int signal_rank = 8;
  double signal_scale = 2.0;
  double field_sd = 0.5;
  double field_cycles = 1.0;       // spatial frequency of the smooth field
  double city_drift = 1.0;
  double year_drift = 0.2;
  double city_map_jitter = 0.0;    // relative per-city perturbation of A
  double noise_sd = 0.3;
  double correlated_noise_sd = 0.3;
  int correlated_noise_radius = 2;
  double aux_noise_sd = 0.5;
  std::optional<double> ntl_growth_cv;  // needs sqrt(cities - 1) > cv
  bool static_years = false;            // identical inputs in every year
};

nlohmann::json synth_spec_to_json(const SyntheticWorldSpec& spec);
SyntheticWorldSpec synth_spec_from_json(const nlohmann::json& j);

/// City codes in generation order: twelve reference cities, then C13, C14, ...
std::string synthetic_city_code(int index);

struct CityYearData {
  CityYear key;
  std::vector<FeatureBlock> blocks;
  std::optional<SubpixelMask> mask;
  std::optional<LabelPair> labels;
};

struct SyntheticWorld {
  SyntheticWorldSpec spec;
  std::vector<CityYearData> items;  // sorted by (city, year)
};

/// Deterministic per seed. Throws when a share target cannot be met.
SyntheticWorld synth_world(const SyntheticWorldSpec& spec);

/// Writes <dir>/world.json plus, per city-year, a mask, label grids and the
/// feature bands with their manifest.
void write_world(const SyntheticWorld& world, const std::filesystem::path& dir);

/// Reads a world index written by write_world (or hand-made in the same shape).
std::vector<CityYearData> load_world(const std::filesystem::path& index_path);

}  // namespace slumeval
