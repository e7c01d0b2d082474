#include "slumeval/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slumeval/random.hpp"

namespace slumeval {

double SpatialWeights::row_sum(std::size_t k) const {
  double s = 0.0;
  for (std::size_t e = offsets[k]; e < offsets[k + 1]; ++e) s += weights[e];
  return s;
}

double SpatialWeights::s0() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

void row_standardize(SpatialWeights& w) {
  for (std::size_t k = 0; k < w.n(); ++k) {
    const double s = w.row_sum(k);
    if (s <= 0.0) continue;
    for (std::size_t e = w.offsets[k]; e < w.offsets[k + 1]; ++e) w.weights[e] /= s;
  }
}

SpatialWeights queen_weights(std::size_t height, std::size_t width, std::span<const std::size_t> valid,
                             bool standardize) {
  SpatialWeights w;
  w.width = width;
  w.height = height;
  w.cells.assign(valid.begin(), valid.end());
  if (!std::is_sorted(w.cells.begin(), w.cells.end())) throw std::invalid_argument("queen_weights: unsorted cells");

  constexpr std::uint32_t kNone = ~std::uint32_t{0};
  std::vector<std::uint32_t> node_of(width * height, kNone);
  for (std::size_t k = 0; k < w.cells.size(); ++k) {
    if (w.cells[k] >= node_of.size()) throw std::out_of_range("queen_weights: cell outside grid");
    node_of[w.cells[k]] = static_cast<std::uint32_t>(k);
  }

  w.offsets.reserve(w.cells.size() + 1);
  w.offsets.push_back(0);
  for (std::size_t cell : w.cells) {
    const auto r = static_cast<long>(cell / width);
    const auto c = static_cast<long>(cell % width);
    for (long dr = -1; dr <= 1; ++dr) {
      for (long dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const long rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(height) || cc >= static_cast<long>(width)) continue;
        const auto j = node_of[static_cast<std::size_t>(rr) * width + static_cast<std::size_t>(cc)];
        if (j == kNone) continue;
        w.neighbors.push_back(j);
        w.weights.push_back(1.0);
      }
    }
    w.offsets.push_back(w.neighbors.size());
  }
  w.isolate.resize(w.cells.size());
  for (std::size_t k = 0; k < w.cells.size(); ++k) w.isolate[k] = w.degree(k) == 0;
  if (standardize) row_standardize(w);
  return w;
}

SpatialWeights queen_weights(const Grid& grid, bool standardize) {
  const auto valid = mask_nodata(grid);
  return queen_weights(grid.height, grid.width, valid, standardize);
}

std::vector<double> node_values(const Grid& grid, const SpatialWeights& w) {
  if (grid.width != w.width || grid.height != w.height) throw std::invalid_argument("node_values: geometry mismatch");
  std::vector<double> v(w.n());
  for (std::size_t k = 0; k < w.n(); ++k) v[k] = grid.values[w.cells[k]];
  return v;
}

namespace {

std::vector<double> centered(std::span<const double> values, const SpatialWeights& w, double& ss) {
  if (values.size() != w.n()) throw std::invalid_argument("spatial statistic: value count does not match weights");
  if (values.size() < 3) throw std::invalid_argument("spatial statistic: need at least 3 cells");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::vector<double> z(values.size());
  ss = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    z[k] = values[k] - mean;
    ss += z[k] * z[k];
  }
  if (!(ss > 0.0)) throw std::invalid_argument("spatial statistic: constant field");
  return z;
}

double cross_product(const std::vector<double>& z, const SpatialWeights& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < w.n(); ++k) {
    double lag = 0.0;
    for (std::size_t e = w.offsets[k]; e < w.offsets[k + 1]; ++e) lag += w.weights[e] * z[w.neighbors[e]];
    s += z[k] * lag;
  }
  return s;
}

}  // namespace

MoranResult morans_i(std::span<const double> values, const SpatialWeights& w, int n_perm, std::uint64_t seed) {
  double ss = 0.0;
  std::vector<double> z = centered(values, w, ss);
  const double s0 = w.s0();
  if (!(s0 > 0.0)) throw std::invalid_argument("morans_i: no neighbour links");
  const auto n = static_cast<double>(z.size());
  const double scale = n / (s0 * ss);

  MoranResult res;
  res.i = scale * cross_product(z, w);
  res.expected = -1.0 / (n - 1.0);
  res.n_perm = std::max(0, n_perm);
  if (res.n_perm == 0) return res;

  std::vector<double> perm(z.size());
  std::size_t extreme = 0;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < res.n_perm; ++r) {
    perm = z;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    shuffle(perm.begin(), perm.end(), rng);
    const double ip = scale * cross_product(perm, w);
    sum += ip;
    sum_sq += ip * ip;
    if (std::abs(ip) >= std::abs(res.i)) ++extreme;
  }
  const double m = static_cast<double>(res.n_perm);
  res.p_perm = static_cast<double>(extreme + 1) / (m + 1.0);
  res.perm_mean = sum / m;
  res.perm_sd = res.n_perm > 1 ? std::sqrt(std::max(0.0, (sum_sq - m * res.perm_mean * res.perm_mean) / (m - 1.0))) : 0.0;
  return res;
}

MoranResult residual_moran(std::span<const double> gt, std::span<const double> pred, const SpatialWeights& w,
                           int n_perm, std::uint64_t seed) {
  if (gt.size() != pred.size()) throw std::invalid_argument("residual_moran: inputs differ in length");
  std::vector<double> res(gt.size());
  for (std::size_t k = 0; k < gt.size(); ++k) res[k] = pred[k] - gt[k];
  return morans_i(res, w, n_perm, seed);
}

std::size_t LisaMap::count(Quadrant q) const { return static_cast<std::size_t>(std::count(quadrant.begin(), quadrant.end(), q)); }

LisaMap lisa(std::span<const double> values, const SpatialWeights& w, int n_perm, std::uint64_t seed, double alpha) {
  double ss = 0.0;
  std::vector<double> z = centered(values, w, ss);
  const std::size_t n = z.size();
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (double& v : z) v /= sd;

  LisaMap out;
  out.local_i.assign(n, 0.0);
  out.p_values.assign(n, 1.0);
  out.quadrant.assign(n, Quadrant::ns);
  std::vector<std::uint32_t> draw;
  for (std::size_t k = 0; k < n; ++k) {
    if (w.isolate[k]) continue;
    const std::size_t b = w.offsets[k], e = w.offsets[k + 1];
    double lag = 0.0;
    for (std::size_t t = b; t < e; ++t) lag += w.weights[t] * z[w.neighbors[t]];
    const double ii = z[k] * lag;
    out.local_i[k] = ii;
    if (n_perm <= 0) continue;

    Rng rng(derive_seed(seed, k));
    const std::size_t deg = e - b;
    std::size_t larger = 0;
    for (int r = 0; r < n_perm; ++r) {
      draw.clear();
      while (draw.size() < deg) {
        auto j = static_cast<std::uint32_t>(uniform_index(rng, n - 1));
        if (j >= k) ++j;
        if (std::find(draw.begin(), draw.end(), j) == draw.end()) draw.push_back(j);
      }
      double lp = 0.0;
      for (std::size_t t = 0; t < deg; ++t) lp += w.weights[b + t] * z[draw[t]];
      if (z[k] * lp >= ii) ++larger;
    }
    const auto np = static_cast<std::size_t>(n_perm);
    if (np - larger < larger) larger = np - larger;
    const double p = static_cast<double>(larger + 1) / static_cast<double>(np + 1);
    out.p_values[k] = p;
    if (p < alpha) {
      const bool high = z[k] > 0.0;
      const bool lag_high = lag > 0.0;
      out.quadrant[k] = high ? (lag_high ? Quadrant::hh : Quadrant::hl) : (lag_high ? Quadrant::lh : Quadrant::ll);
    }
  }
  return out;
}

Grid lisa_grid(const LisaMap& map, const SpatialWeights& w, const Grid& like) {
  if (like.width != w.width || like.height != w.height) throw std::invalid_argument("lisa_grid: geometry mismatch");
  Grid g = like.like(like.nodata);
  g.band_name = "lisa_quadrant";
  for (std::size_t k = 0; k < w.n(); ++k) g.values[w.cells[k]] = static_cast<float>(map.quadrant[k]);
  return g;
}

double ssim_binary(const Grid& gt, const Grid& pred) {
  if (!gt.same_geometry(pred)) throw std::invalid_argument("ssim_binary: geometry mismatch");
  const std::size_t win = std::min<std::size_t>({static_cast<std::size_t>(kSsimWindow), gt.height, gt.width});
  if (win == 0) throw std::invalid_argument("ssim_binary: empty grid");
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const auto np = static_cast<double>(win * win);
  const double cov_norm = win * win > 1 ? np / (np - 1.0) : 1.0;

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r0 = 0; r0 + win <= gt.height; ++r0) {
    for (std::size_t c0 = 0; c0 + win <= gt.width; ++c0) {
      double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      bool skip = false;
      for (std::size_t r = r0; r < r0 + win && !skip; ++r) {
        for (std::size_t c = c0; c < c0 + win; ++c) {
          const std::size_t i = gt.index(r, c);
          if (!gt.is_valid(i) || !pred.is_valid(i)) {
            skip = true;
            break;
          }
          const double x = gt.values[i], y = pred.values[i];
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
      }
      if (skip) continue;
      const double mx = sx / np, my = sy / np;
      const double vx = cov_norm * (sxx / np - mx * mx);
      const double vy = cov_norm * (syy / np - my * my);
      const double cxy = cov_norm * (sxy / np - mx * my);
      const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++windows;
    }
  }
  if (windows == 0) throw std::invalid_argument("ssim_binary: no window free of sentinels");
  return total / static_cast<double>(windows);
}

double area_pct_err(const Grid& gt, const Grid& pred) {
  if (!gt.same_geometry(pred)) throw std::invalid_argument("area_pct_err: geometry mismatch");
  double a_gt = 0.0, a_pred = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.is_valid(i) || !pred.is_valid(i)) continue;
    a_gt += gt.values[i] != 0.0f;
    a_pred += pred.values[i] != 0.0f;
  }
  if (a_gt == 0.0) throw std::invalid_argument("area_pct_err: ground truth has zero area");
  return std::abs(a_pred - a_gt) / a_gt * 100.0;
}

}  // namespace slumeval
