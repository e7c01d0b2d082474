#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace slumeval {

inline constexpr float kNoData = -9999.0f;

/// Single-band raster. Row-major values; cells equal to `nodata` are
/// excluded from every statistic.
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  double cell_size_m = 10.0;
  float nodata = kNoData;
  std::string city_code;
  int year = 0;
  std::string band_name;
  std::vector<float> values;

  Grid() = default;
  Grid(std::size_t width, std::size_t height, float fill = 0.0f);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t index(std::size_t row, std::size_t col) const noexcept { return row * width + col; }
  float at(std::size_t row, std::size_t col) const { return values[index(row, col)]; }
  float& at(std::size_t row, std::size_t col) { return values[index(row, col)]; }
  bool is_valid(std::size_t i) const noexcept { return values[i] != nodata; }

  bool same_geometry(const Grid& other) const noexcept {
    return width == other.width && height == other.height;
  }

  /// Copies every field except the values, which are refilled.
  Grid like(float fill = 0.0f) const;
};

/// Position in the 3x3 spatial block partition.
struct BlockId {
  int row_band = 0;
  int col_band = 0;
  int index() const noexcept { return row_band * 3 + col_band; }
  friend bool operator==(const BlockId&, const BlockId&) = default;
};

/// Indices of all cells whose value is not the sentinel (exact comparison).
std::vector<std::size_t> mask_nodata(const Grid& grid);

/// Band b covers rows [floor(b*height/3), floor((b+1)*height/3)).
BlockId block_of(std::size_t row, std::size_t col, std::size_t height, std::size_t width);

enum class Reducer { mean, max };

/// Non-overlapping factor x factor windows; edge windows are partial.
/// Sentinel inputs are skipped; an all-sentinel window yields the sentinel.
Grid downsample(const Grid& grid, int factor, Reducer reducer);

/// Smallest f >= 1 with ceil(n_valid / f^2) <= cap, clamped to [1, 8].
int adaptive_factor(std::size_t n_valid, std::size_t cap);

inline constexpr std::size_t kMoranCellCap = 600'000;
inline constexpr std::size_t kLisaCellCap = 250'000;

// ---- BIF container -------------------------------------------------------
//
// <name>.bif  little-endian float32, row-major, width*height values
// <name>.json {width, height, cell_size_m, nodata, band_name, city_code, year}
//             plus any extra keys the writer supplies.

std::filesystem::path sidecar_path(const std::filesystem::path& bif_path);

nlohmann::json grid_sidecar(const Grid& grid);

void write_bif(const Grid& grid, const std::filesystem::path& bif_path,
               const nlohmann::json& extra = nlohmann::json::object());

Grid read_bif(const std::filesystem::path& bif_path);

nlohmann::json read_sidecar(const std::filesystem::path& bif_path);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace slumeval
