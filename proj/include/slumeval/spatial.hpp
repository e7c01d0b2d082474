#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "slumeval/grid.hpp"

namespace slumeval {

/// Sparse contiguity weights over the valid cells of a grid. Node k is grid
/// cell `cells[k]`; its neighbours are neighbors[offsets[k] .. offsets[k+1]).
struct SpatialWeights {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::size_t> cells;
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> neighbors;
  std::vector<double> weights;
  std::vector<std::uint8_t> isolate;

  std::size_t n() const noexcept { return cells.size(); }
  std::size_t degree(std::size_t k) const noexcept { return offsets[k + 1] - offsets[k]; }
  double row_sum(std::size_t k) const;
  /// Sum of all weights.
  double s0() const;
};

/// 8-neighbourhood contiguity among `valid` cells (sorted grid indices).
/// Rows are standardised to sum to 1 unless `standardize` is false, in which
/// case every link has weight 1.
SpatialWeights queen_weights(std::size_t height, std::size_t width, std::span<const std::size_t> valid,
                             bool standardize = true);
/// Weights over the non-sentinel cells of `grid`.
SpatialWeights queen_weights(const Grid& grid, bool standardize = true);

/// Divides each non-isolate row by its sum.
void row_standardize(SpatialWeights& w);

/// Node values of `grid` in weight order.
std::vector<double> node_values(const Grid& grid, const SpatialWeights& w);

struct MoranResult {
  double i = 0.0;
  double expected = 0.0;  // -1 / (n - 1)
  double p_perm = 1.0;
  int n_perm = 0;
  double perm_mean = 0.0;
  double perm_sd = 0.0;
};

/// Global Moran's I with a random-relabelling permutation test. Replicate r
/// uses seed derive_seed(seed, r). Throws on n < 3 or a constant field.
MoranResult morans_i(std::span<const double> values, const SpatialWeights& w, int n_perm, std::uint64_t seed);

/// Moran's I of pred - gt.
MoranResult residual_moran(std::span<const double> gt, std::span<const double> pred, const SpatialWeights& w,
                           int n_perm, std::uint64_t seed);

enum class Quadrant : std::uint8_t { ns = 0, hh = 1, ll = 2, hl = 3, lh = 4 };

struct LisaMap {
  std::vector<double> local_i;
  std::vector<double> p_values;
  std::vector<Quadrant> quadrant;

  std::size_t count(Quadrant q) const;
};

/// Local Moran's I_i = z_i * sum_j w_ij z_j with z standardised by the
/// population SD. Conditional permutation: node i keeps its value and its
/// neighbour slots are refilled with distinct other nodes (seed derived from
/// (seed, i)). Folded pseudo p-value; isolates are NS.
LisaMap lisa(std::span<const double> values, const SpatialWeights& w, int n_perm, std::uint64_t seed,
             double alpha = 0.05);

/// Quadrant codes as a grid band (sentinel outside the weights' cells).
Grid lisa_grid(const LisaMap& map, const SpatialWeights& w, const Grid& like);

inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean SSIM over all 7x7 windows (stride 1, no padding) with L = 1 and
/// sample covariance. Windows touching a sentinel in either map are skipped;
/// grids narrower than 7 use a window equal to the smaller side.
double ssim_binary(const Grid& gt, const Grid& pred);

/// |pred area - gt area| / gt area * 100 over cells valid in both maps.
double area_pct_err(const Grid& gt, const Grid& pred);

}  // namespace slumeval
