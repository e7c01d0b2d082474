#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slumeval/grid.hpp"

namespace slumeval {

inline constexpr int kSubfactor = 17;
inline constexpr int kSubpixels = kSubfactor * kSubfactor;  // 289

/// Binary sub-pixel slum mask aligned to a cell grid. `bits` holds one byte
/// (0/1) per sub-pixel, row-major over (height*subfactor) x (width*subfactor).
struct SubpixelMask {
  std::size_t width = 0;   // cells
  std::size_t height = 0;  // cells
  int subfactor = kSubfactor;
  double cell_size_m = 10.0;
  float nodata = kNoData;
  std::string city_code;
  int year = 0;
  std::vector<std::uint8_t> bits;

  std::size_t sub_width() const noexcept { return width * static_cast<std::size_t>(subfactor); }
  std::size_t sub_height() const noexcept { return height * static_cast<std::size_t>(subfactor); }

  /// Wraps a raw sub-pixel raster; throws when its extent is not an exact
  /// multiple of the subfactor.
  static SubpixelMask from_bits(std::size_t sub_height, std::size_t sub_width, int subfactor,
                                std::vector<std::uint8_t> bits);
};

/// Paired supervision for one city-year: per-cell count s_i of set
/// sub-pixels, density s_i / N_i and the presence label (count > 0).
struct LabelPair {
  std::size_t width = 0;
  std::size_t height = 0;
  int subpixels = kSubpixels;
  std::string city_code;
  int year = 0;
  std::vector<std::uint8_t> cls;
  std::vector<std::uint16_t> count;
  std::vector<double> density;

  std::size_t size() const noexcept { return count.size(); }

  Grid cls_grid() const;
  Grid count_grid() const;
  Grid density_grid() const;
};

LabelPair aggregate(const SubpixelMask& mask);

/// Overlapping annotations: per-cell maximum of both labels.
LabelPair merge_overlap(const LabelPair& a, const LabelPair& b);

/// Shares over density bins {0}, (0,0.3], (0.3,0.6], (0.6,0.9], (0.9,1].
using DensityShares = std::array<double, 5>;
inline constexpr std::array<double, 4> kDensityBinEdges{0.0, 0.3, 0.6, 0.9};

DensityShares density_histogram(const LabelPair& labels, std::span<const std::size_t> valid);

// Bit-packed mask file: LSB-first within each byte, row-major sub-pixels,
// plus the BIF sidecar schema with "subfactor" added.
void write_mask(const SubpixelMask& mask, const std::filesystem::path& path);
SubpixelMask read_mask(const std::filesystem::path& path);

}  // namespace slumeval
