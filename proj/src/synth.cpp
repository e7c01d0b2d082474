#include "slumeval/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/QR>

#include "slumeval/random.hpp"

namespace slumeval {

namespace {

constexpr const char* kReferenceCodes[] = {"PAK", "HTI", "EGY", "BFA", "HON", "IND",
                                           "COL", "KEN", "VEN", "BRA", "ZAF", "LKA"};

double hash_uniform(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(mix64(seed ^ mix64(index)) >> 11) * 0x1.0p-53;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = standard_normal(rng);
  }
  return m;
}

/// Mean over a (2r+1)^2 window clipped at the edges.
std::vector<double> box_blur(const std::vector<double>& v, std::size_t h, std::size_t w, int r) {
  std::vector<double> tmp(v.size()), out(v.size());
  const auto sr = static_cast<std::ptrdiff_t>(r);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      int n = 0;
      for (std::ptrdiff_t dx = -sr; dx <= sr; ++dx) {
        const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
        s += v[y * w + static_cast<std::size_t>(xx)];
        ++n;
      }
      tmp[y * w + x] = s / n;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      int n = 0;
      for (std::ptrdiff_t dy = -sr; dy <= sr; ++dy) {
        const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        s += tmp[static_cast<std::size_t>(yy) * w + x];
        ++n;
      }
      out[y * w + x] = s / n;
    }
  }
  return out;
}

constexpr double kShareTolerance = 0.005;

struct Cluster {
  double cx, cy, r;
};

class CityRaster {
 public:
  CityRaster(const SyntheticWorldSpec& spec, std::uint64_t city_seed, std::vector<Cluster> clusters)
      : spec_(spec), seed_(city_seed), clusters_(std::move(clusters)),
        sub_w_(spec.width * kSubfactor), sub_h_(spec.height * kSubfactor), prob_(sub_w_ * sub_h_) {}

  /// Per-cell counts for radius multiplier `scale`, core fraction `core` and
  /// growth step `t`; fills `bits` when given.
  std::vector<std::uint16_t> counts(double scale, double core, int t, std::vector<std::uint8_t>* bits) {
    std::fill(prob_.begin(), prob_.end(), 0.0f);
    const double grow = 1.0 + spec_.growth_per_year * t;
    const double sf = kSubfactor;
    for (const auto& c : clusters_) {
      const double radius = c.r * scale * grow;
      if (radius <= 0) continue;
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor((c.cx - radius) * sf));
      const auto x1 = static_cast<std::ptrdiff_t>(std::ceil((c.cx + radius) * sf));
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor((c.cy - radius) * sf));
      const auto y1 = static_cast<std::ptrdiff_t>(std::ceil((c.cy + radius) * sf));
      for (auto sy = std::max<std::ptrdiff_t>(0, y0); sy < std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(sub_h_)); ++sy) {
        const double py = (static_cast<double>(sy) + 0.5) / sf - c.cy;
        for (auto sx = std::max<std::ptrdiff_t>(0, x0); sx < std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(sub_w_)); ++sx) {
          const double px = (static_cast<double>(sx) + 0.5) / sf - c.cx;
          const double u = std::sqrt(px * px + py * py) / radius;
          double p = 0.0;
          if (u <= core) p = 1.0;
          else if (u < 1.0) p = (1.0 - u) / (1.0 - core);
          float& dst = prob_[static_cast<std::size_t>(sy) * sub_w_ + static_cast<std::size_t>(sx)];
          dst = std::max(dst, static_cast<float>(p));
        }
      }
    }
    std::vector<std::uint16_t> count(spec_.width * spec_.height, 0);
    if (bits) bits->assign(prob_.size(), 0);
    for (std::size_t sy = 0; sy < sub_h_; ++sy) {
      for (std::size_t sx = 0; sx < sub_w_; ++sx) {
        const std::size_t k = sy * sub_w_ + sx;
        if (prob_[k] <= 0.0f) continue;
        if (hash_uniform(seed_, k) < prob_[k]) {
          ++count[(sy / kSubfactor) * spec_.width + sx / kSubfactor];
          if (bits) (*bits)[k] = 1;
        }
      }
    }
    return count;
  }

  /// Share of zero cells and of cells above density 0.9, averaged over years.
  std::pair<double, double> shares(double scale, double core, const std::vector<int>& steps) {
    double zero = 0.0, high = 0.0;
    for (int t : steps) {
      const auto c = counts(scale, core, t, nullptr);
      for (auto v : c) {
        zero += v == 0;
        high += static_cast<double>(v) / kSubpixels > 0.9;
      }
    }
    const double n = static_cast<double>(steps.size() * spec_.width * spec_.height);
    return {zero / n, high / n};
  }

 private:
  const SyntheticWorldSpec& spec_;
  std::uint64_t seed_;
  std::vector<Cluster> clusters_;
  std::size_t sub_w_, sub_h_;
  std::vector<float> prob_;
};

/// Radius multiplier whose zero share is closest to the target.
double fit_scale(CityRaster& raster, double core, double target, const std::vector<int>& steps) {
  double lo = 1e-3, hi = 1.0;
  if (raster.shares(lo, core, steps).first < target) throw std::invalid_argument("synth: zero-share target infeasible");
  while (raster.shares(hi, core, steps).first > target) {
    hi *= 2.0;
    if (hi > 1e3) throw std::invalid_argument("synth: zero-share target infeasible");
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (raster.shares(mid, core, steps).first > target ? lo : hi) = mid;
  }
  const double e_lo = std::abs(raster.shares(lo, core, steps).first - target);
  const double e_hi = std::abs(raster.shares(hi, core, steps).first - target);
  return e_lo <= e_hi ? lo : hi;
}

void check_spec(const SyntheticWorldSpec& s) {
  auto share_ok = [](const std::optional<double>& v) { return !v || (*v >= 0.0 && *v <= 1.0); };
  if (s.cities < 1) throw std::invalid_argument("synth: need at least one city");
  if (s.years.empty()) throw std::invalid_argument("synth: need at least one labelled year");
  if (s.width < 3 || s.height < 3) throw std::invalid_argument("synth: grid must be at least 3x3");
  if (s.clusters < 0 || s.cluster_radius <= 0) throw std::invalid_argument("synth: invalid cluster parameters");
  if (s.core_fraction < 0.0 || s.core_fraction >= 1.0) throw std::invalid_argument("synth: core_fraction in [0,1)");
  if (!share_ok(s.zero_share) || !share_ok(s.high_density_share)) throw std::invalid_argument("synth: shares must lie in [0,1]");
  if (s.signal_rank < 1 || s.signal_rank > 64) throw std::invalid_argument("synth: signal_rank in 1..64");
  if (s.noise_sd < 0 || s.correlated_noise_sd < 0 || s.aux_noise_sd < 0 || s.field_sd < 0) {
    throw std::invalid_argument("synth: noise levels must be non-negative");
  }
  if (s.ntl_growth_cv && (*s.ntl_growth_cv < 0 || std::sqrt(s.cities - 1.0) <= *s.ntl_growth_cv)) {
    throw std::invalid_argument("synth: ntl_growth_cv needs sqrt(cities - 1) > cv");
  }
}

Grid make_band(const SyntheticWorldSpec& spec, const CityYear& key, const std::string& name,
               const std::vector<double>& v) {
  Grid g(spec.width, spec.height);
  g.city_code = key.city;
  g.year = key.year;
  g.band_name = name;
  for (std::size_t i = 0; i < v.size(); ++i) g.values[i] = static_cast<float>(v[i]);
  return g;
}

}  // namespace

std::string synthetic_city_code(int index) {
  if (index < 0) throw std::invalid_argument("negative city index");
  if (index < 12) return kReferenceCodes[index];
  return "C" + std::to_string(index + 1);
}

SyntheticWorld synth_world(const SyntheticWorldSpec& spec) {
  check_spec(spec);
  const std::size_t w = spec.width, h = spec.height, n = w * h;
  const int r = spec.signal_rank;

  Rng global(derive_seed(spec.seed, 101));
  const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(64, r, global)).householderQ() *
                                Eigen::MatrixXd::Identity(64, r);
  const Eigen::MatrixXd a_base = gaussian(r, 3, global) * (spec.signal_scale / std::sqrt(3.0));
  std::array<std::vector<double>, 5> coef;
  for (auto cat : kAllCategories) {
    auto& c = coef[static_cast<std::size_t>(cat)];
    for (int j = 0; j < category_dim(cat); ++j) c.push_back(uniform(global, 0.5, 1.5));
  }

  std::vector<int> all_years = spec.years;
  all_years.insert(all_years.end(), spec.unlabeled_years.begin(), spec.unlabeled_years.end());
  std::sort(all_years.begin(), all_years.end());
  all_years.erase(std::unique(all_years.begin(), all_years.end()), all_years.end());
  const int first_year = all_years.front();
  auto step_of = [&](int year) { return spec.static_years ? 0 : year - first_year; };

  SyntheticWorld world;
  world.spec = spec;
  for (int ci = 0; ci < spec.cities; ++ci) {
    const std::string code = synthetic_city_code(ci);
    const std::uint64_t city_seed = derive_seed(spec.seed, fnv1a(code));
    Rng rng(derive_seed(city_seed, 1));

    // Clusters: the first nine are stratified over the 3x3 blocks.
    std::vector<Cluster> clusters;
    for (int k = 0; k < spec.clusters; ++k) {
      double x0 = 0, y0 = 0, bw = static_cast<double>(w), bh = static_cast<double>(h);
      if (k < 9 && spec.clusters >= 9) {
        bw = static_cast<double>(w) / 3.0;
        bh = static_cast<double>(h) / 3.0;
        x0 = (k % 3) * bw;
        y0 = (k / 3) * bh;
      }
      const double cx = x0 + uniform(rng, 0.15, 0.85) * bw;
      const double cy = y0 + uniform(rng, 0.15, 0.85) * bh;
      clusters.push_back({cx, cy, spec.cluster_radius * uniform(rng, 0.6, 1.4)});
    }
    CityRaster raster(spec, city_seed, clusters);
    std::vector<int> label_steps;
    for (int y : spec.years) label_steps.push_back(step_of(y));

    double core = spec.core_fraction;
    double scale = 1.0;
    if (spec.zero_share && spec.high_density_share) {
      double lo = 0.0, hi = 0.99;
      for (int it = 0; it < 12; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double s = fit_scale(raster, mid, *spec.zero_share, label_steps);
        (raster.shares(s, mid, label_steps).second < *spec.high_density_share ? lo : hi) = mid;
      }
      core = 0.5 * (lo + hi);
      scale = fit_scale(raster, core, *spec.zero_share, label_steps);
    } else if (spec.zero_share) {
      scale = fit_scale(raster, core, *spec.zero_share, label_steps);
    }
    if (spec.zero_share || spec.high_density_share) {
      const auto [zero, high] = raster.shares(scale, core, label_steps);
      if (spec.zero_share && std::abs(zero - *spec.zero_share) > kShareTolerance) {
        throw std::invalid_argument("synth: zero-share target cannot be met for " + code);
      }
      if (spec.high_density_share && std::abs(high - *spec.high_density_share) > kShareTolerance) {
        throw std::invalid_argument("synth: high-density target cannot be met for " + code);
      }
    }

    // City-level embedding parameters.
    const Eigen::MatrixXd a_city = a_base + gaussian(r, 3, rng) * (spec.city_map_jitter * spec.signal_scale / std::sqrt(3.0));
    const Eigen::VectorXd drift_city = gaussian(r, 1, rng) * (spec.city_drift / std::sqrt(static_cast<double>(r)));
    Eigen::MatrixXd field(static_cast<Eigen::Index>(n), r);
    for (int d = 0; d < r; ++d) {
      const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double freq = spec.field_cycles * uniform(rng, 0.75, 1.25);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i % w) / static_cast<double>(w);
        const double y = static_cast<double>(i / w) / static_cast<double>(h);
        field(static_cast<Eigen::Index>(i), d) =
            spec.field_sd * std::sqrt(2.0) *
            std::sin(2.0 * std::numbers::pi * freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
      }
    }
    double ntl_mult = 1.0;
    if (spec.ntl_growth_cv && ci == 0) {
      const double cv = *spec.ntl_growth_cv;
      const double k = spec.cities;
      ntl_mult = 1.0 + cv * k / (std::sqrt(k - 1.0) - cv);
    }

    for (int year : all_years) {
      const bool labelled = std::find(spec.years.begin(), spec.years.end(), year) != spec.years.end();
      const int t = step_of(year);
      const int slot = spec.static_years ? first_year : year;
      const CityYear key{code, year};
      CityYearData item;
      item.key = key;

      std::vector<std::uint8_t> bits;
      const auto count = raster.counts(scale, core, t, &bits);
      std::vector<double> rho(n);
      for (std::size_t i = 0; i < n; ++i) rho[i] = static_cast<double>(count[i]) / kSubpixels;
      if (labelled) {
        SubpixelMask mask = SubpixelMask::from_bits(h * kSubfactor, w * kSubfactor, kSubfactor, std::move(bits));
        mask.city_code = code;
        mask.year = year;
        item.labels = aggregate(mask);
        item.mask = std::move(mask);
      }

      // AEF-like embedding.
      Rng yr(derive_seed(city_seed, 1000 + static_cast<std::uint64_t>(slot)));
      const Eigen::VectorXd drift_year =
          spec.static_years ? Eigen::VectorXd::Zero(r)
                            : Eigen::VectorXd(gaussian(r, 1, yr) * (spec.year_drift / std::sqrt(static_cast<double>(r))));
      Eigen::MatrixXd f(static_cast<Eigen::Index>(n), 3);
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        f(ii, 0) = rho[i];
        f(ii, 1) = rho[i] > 0 ? 1.0 : 0.0;
        f(ii, 2) = std::sqrt(rho[i]);
      }
      Eigen::MatrixXd latent = f * a_city.transpose() + field;
      latent.rowwise() += (drift_city + drift_year).transpose();
      Eigen::MatrixXd emb = latent * basis.transpose();
      const int rad = spec.correlated_noise_radius;
      const double corr_gain = spec.correlated_noise_sd * (2.0 * rad + 1.0);
      std::vector<double> buf(n);
      for (int d = 0; d < 64; ++d) {
        for (auto& b : buf) b = standard_normal(yr);
        if (spec.correlated_noise_sd > 0) {
          const auto smooth = box_blur(buf, h, w, rad);
          for (std::size_t i = 0; i < n; ++i) emb(static_cast<Eigen::Index>(i), d) += corr_gain * smooth[i];
        }
        for (std::size_t i = 0; i < n; ++i) emb(static_cast<Eigen::Index>(i), d) += spec.noise_sd * standard_normal(yr);
      }

      const auto b2 = box_blur(rho, h, w, 2);
      const auto b5 = box_blur(rho, h, w, 5);
      for (auto cat : kAllCategories) {
        FeatureBlock block;
        block.category = cat;
        const auto& c = coef[static_cast<std::size_t>(cat)];
        Rng ar(derive_seed(city_seed, 2000 + static_cast<std::uint64_t>(slot) * 8 + static_cast<std::uint64_t>(cat)));
        for (int j = 0; j < category_dim(cat); ++j) {
          std::vector<double> v(n);
          if (cat == Category::aef) {
            for (std::size_t i = 0; i < n; ++i) v[i] = emb(static_cast<Eigen::Index>(i), j);
          } else if (cat == Category::ntl && j == 0 && spec.ntl_growth_cv) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              v[i] = std::exp(0.5 * standard_normal(ar)) * (1.0 + b2[i]);
              mean += v[i];
            }
            mean /= static_cast<double>(n);
            for (auto& x : v) x *= ntl_mult / mean;
          } else {
            const auto cj = static_cast<std::size_t>(j);
            for (std::size_t i = 0; i < n; ++i) {
              const double noise = spec.aux_noise_sd * standard_normal(ar);
              const double x = static_cast<double>(i % w) / static_cast<double>(w);
              const double y = static_cast<double>(i / w) / static_cast<double>(h);
              switch (cat) {
                case Category::ntl: v[i] = 3.0 * c[cj] * (b2[i] + 0.5 * b5[i]) + noise; break;
                case Category::rs: v[i] = 3.0 * c[cj] * rho[i] + noise; break;
                case Category::spatial:
                  if (j == 0) v[i] = x;
                  else if (j == 1) v[i] = y;
                  else if (j == 2) v[i] = 2.0 * std::hypot(x - 0.5, y - 0.5);
                  else v[i] = 3.0 * c[cj] * (j % 2 ? b5[i] : b2[i]) + 0.5 * noise;
                  break;
                case Category::poi: v[i] = -3.0 * c[cj] * b2[i] + noise; break;
                case Category::aef: break;
              }
            }
          }
          char name[32];
          std::snprintf(name, sizeof name, "%s_%02d", std::string(category_name(cat)).c_str(), j);
          block.bands.push_back(make_band(spec, key, name, v));
        }
        item.blocks.push_back(std::move(block));
      }
      world.items.push_back(std::move(item));
    }
  }
  std::sort(world.items.begin(), world.items.end(),
            [](const CityYearData& a, const CityYearData& b) { return a.key < b.key; });
  return world;
}

// ---- JSON and files ----------------------------------------------------------

namespace {

template <class T>
void opt_to(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? nlohmann::json(*v) : nlohmann::json();
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& v) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) v.reset();
  else v = j.at(key).get<T>();
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

}  // namespace

nlohmann::json synth_spec_to_json(const SyntheticWorldSpec& s) {
  nlohmann::json j = {{"seed", s.seed},
                      {"cities", s.cities},
                      {"years", s.years},
                      {"unlabeled_years", s.unlabeled_years},
                      {"width", s.width},
                      {"height", s.height},
                      {"clusters", s.clusters},
                      {"cluster_radius", s.cluster_radius},
                      {"core_fraction", s.core_fraction},
                      {"growth_per_year", s.growth_per_year},
                      {"signal_rank", s.signal_rank},
                      {"signal_scale", s.signal_scale},
                      {"field_sd", s.field_sd},
                      {"field_cycles", s.field_cycles},
                      {"city_drift", s.city_drift},
                      {"year_drift", s.year_drift},
                      {"city_map_jitter", s.city_map_jitter},
                      {"noise_sd", s.noise_sd},
                      {"correlated_noise_sd", s.correlated_noise_sd},
                      {"correlated_noise_radius", s.correlated_noise_radius},
                      {"aux_noise_sd", s.aux_noise_sd},
                      {"static_years", s.static_years}};
  opt_to(j, "zero_share", s.zero_share);
  opt_to(j, "high_density_share", s.high_density_share);
  opt_to(j, "ntl_growth_cv", s.ntl_growth_cv);
  return j;
}

SyntheticWorldSpec synth_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("synthetic world spec must be an object");
  static const char* known[] = {"seed", "cities", "years", "unlabeled_years", "width", "height", "clusters",
                                "cluster_radius", "core_fraction", "growth_per_year", "zero_share",
                                "high_density_share", "signal_rank", "signal_scale", "field_sd", "field_cycles",
                                "city_drift", "year_drift", "city_map_jitter", "noise_sd", "correlated_noise_sd",
                                "correlated_noise_radius", "aux_noise_sd", "ntl_growth_cv", "static_years"};
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known)) {
      throw std::invalid_argument("unknown synthetic world key '" + k + "'");
    }
  }
  SyntheticWorldSpec s;
  read(j, "seed", s.seed);
  read(j, "cities", s.cities);
  read(j, "years", s.years);
  read(j, "unlabeled_years", s.unlabeled_years);
  read(j, "width", s.width);
  read(j, "height", s.height);
  read(j, "clusters", s.clusters);
  read(j, "cluster_radius", s.cluster_radius);
  read(j, "core_fraction", s.core_fraction);
  read(j, "growth_per_year", s.growth_per_year);
  read_opt(j, "zero_share", s.zero_share);
  read_opt(j, "high_density_share", s.high_density_share);
  read(j, "signal_rank", s.signal_rank);
  read(j, "signal_scale", s.signal_scale);
  read(j, "field_sd", s.field_sd);
  read(j, "field_cycles", s.field_cycles);
  read(j, "city_drift", s.city_drift);
  read(j, "year_drift", s.year_drift);
  read(j, "city_map_jitter", s.city_map_jitter);
  read(j, "noise_sd", s.noise_sd);
  read(j, "correlated_noise_sd", s.correlated_noise_sd);
  read(j, "correlated_noise_radius", s.correlated_noise_radius);
  read(j, "aux_noise_sd", s.aux_noise_sd);
  read_opt(j, "ntl_growth_cv", s.ntl_growth_cv);
  read(j, "static_years", s.static_years);
  check_spec(s);
  return s;
}

void write_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : world.items) {
    const std::string key = item.key.str();
    const fs::path base = dir / key;
    FeatureManifest manifest;
    for (const auto& block : item.blocks) {
      auto& files = manifest[block.category];
      for (const auto& band : block.bands) {
        const fs::path p = base / "features" / (band.band_name + ".bif");
        write_bif(band, p);
        files.push_back(p);
      }
    }
    write_feature_manifest(manifest, base / "features.json");
    nlohmann::json entry = {{"city", item.key.city},
                            {"year", item.key.year},
                            {"features", (fs::path(key) / "features.json").generic_string()},
                            {"mask", nullptr}};
    if (item.mask) {
      write_mask(*item.mask, base / "mask.bin");
      entry["mask"] = (fs::path(key) / "mask.bin").generic_string();
    }
    if (item.labels) {
      write_bif(item.labels->count_grid(), base / "labels" / "count.bif");
      write_bif(item.labels->density_grid(), base / "labels" / "density.bif");
      write_bif(item.labels->cls_grid(), base / "labels" / "cls.bif");
    }
    items.push_back(std::move(entry));
  }
  write_json_file(dir / "world.json", {{"spec", synth_spec_to_json(world.spec)}, {"items", items}});
}

std::vector<CityYearData> load_world(const std::filesystem::path& index_path) {
  const auto index = read_json_file(index_path);
  const auto dir = index_path.parent_path();
  std::vector<CityYearData> out;
  try {
    for (const auto& e : index.at("items")) {
      CityYearData item;
      item.key = {e.at("city").get<std::string>(), e.at("year").get<int>()};
      item.blocks = load_feature_blocks(read_feature_manifest(dir / e.at("features").get<std::string>()));
      if (e.contains("mask") && !e.at("mask").is_null()) {
        item.mask = read_mask(dir / e.at("mask").get<std::string>());
        item.labels = aggregate(*item.mask);
      }
      out.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(index_path.string() + ": " + ex.what());
  }
  std::sort(out.begin(), out.end(), [](const CityYearData& a, const CityYearData& b) { return a.key < b.key; });
  return out;
}

}  // namespace slumeval
