#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slumeval/features.hpp"
#include "slumeval/labels.hpp"

namespace slumeval {

struct CityYear {
  std::string city;
  int year = 0;

  auto operator<=>(const CityYear&) const = default;
  std::string str() const { return city + "_" + std::to_string(year); }
};

/// Flattened pixel records. Every row knows its source city-year (through
/// `key_of`), grid cell and 3x3 block, so provenance survives concatenation.
struct SampleTable {
  std::vector<CityYear> keys;
  std::vector<std::uint32_t> key_of;
  std::vector<std::uint32_t> cell;
  std::vector<std::uint8_t> block;
  std::vector<std::uint8_t> y_cls;
  std::vector<std::uint16_t> y_reg;
  Eigen::MatrixXd x;

  std::size_t rows() const noexcept { return cell.size(); }
  std::size_t dims() const noexcept { return static_cast<std::size_t>(x.cols()); }
  const CityYear& key(std::size_t row) const { return keys[key_of[row]]; }

  SampleTable take(std::span<const std::size_t> row_ids) const;
  Eigen::VectorXd cls_target() const;
  Eigen::VectorXd reg_target() const;

  /// Throws when columns disagree in length or labels are inconsistent.
  void validate() const;
};

/// One row per cell that is stackable for `code`. Label geometry must match
/// the feature bands.
SampleTable build_sample_table(const CityYear& key, std::span<const FeatureBlock> blocks,
                               const LabelPair& labels, ComboCode code);

SampleTable concat(std::span<const SampleTable> parts);

}  // namespace slumeval
