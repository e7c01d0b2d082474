#include "slumeval/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace slumeval {

Grid::Grid(std::size_t w, std::size_t h, float fill) : width(w), height(h), values(w * h, fill) {}

Grid Grid::like(float fill) const {
  Grid g;
  g.width = width;
  g.height = height;
  g.cell_size_m = cell_size_m;
  g.nodata = nodata;
  g.city_code = city_code;
  g.year = year;
  g.band_name = band_name;
  g.values.assign(values.size(), fill);
  return g;
}

std::vector<std::size_t> mask_nodata(const Grid& grid) {
  std::vector<std::size_t> out;
  out.reserve(grid.values.size());
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    if (grid.values[i] != grid.nodata) out.push_back(i);
  }
  return out;
}

namespace {

int band_of(std::size_t pos, std::size_t extent) {
  int band = 0;
  for (int b = 1; b < 3; ++b) {
    if ((static_cast<std::size_t>(b) * extent) / 3 <= pos) band = b;
  }
  return band;
}

}  // namespace

BlockId block_of(std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  if (row >= height || col >= width) {
    throw std::out_of_range("block_of: cell (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside " + std::to_string(height) + "x" + std::to_string(width));
  }
  return BlockId{band_of(row, height), band_of(col, width)};
}

Grid downsample(const Grid& grid, int factor, Reducer reducer) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  if (factor == 1) return grid;

  const auto f = static_cast<std::size_t>(factor);
  Grid out = grid;
  out.width = (grid.width + f - 1) / f;
  out.height = (grid.height + f - 1) / f;
  out.cell_size_m = grid.cell_size_m * factor;
  out.values.assign(out.width * out.height, grid.nodata);

  for (std::size_t orow = 0; orow < out.height; ++orow) {
    for (std::size_t ocol = 0; ocol < out.width; ++ocol) {
      double acc = reducer == Reducer::max ? -std::numeric_limits<double>::infinity() : 0.0;
      std::size_t n = 0;
      const std::size_t r_end = std::min(grid.height, (orow + 1) * f);
      const std::size_t c_end = std::min(grid.width, (ocol + 1) * f);
      for (std::size_t r = orow * f; r < r_end; ++r) {
        for (std::size_t c = ocol * f; c < c_end; ++c) {
          const float v = grid.at(r, c);
          if (v == grid.nodata) continue;
          if (reducer == Reducer::max) {
            acc = std::max(acc, static_cast<double>(v));
          } else {
            acc += v;
          }
          ++n;
        }
      }
      if (n == 0) continue;
      out.at(orow, ocol) =
          static_cast<float>(reducer == Reducer::mean ? acc / static_cast<double>(n) : acc);
    }
  }
  return out;
}

int adaptive_factor(std::size_t n_valid, std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("adaptive_factor: cap must be > 0");
  for (std::size_t f = 1; f < 8; ++f) {
    const std::size_t cells = (n_valid + f * f - 1) / (f * f);
    if (cells <= cap) return static_cast<int>(f);
  }
  return 8;
}

// ---- BIF -----------------------------------------------------------------

std::filesystem::path sidecar_path(const std::filesystem::path& bif_path) {
  auto p = bif_path;
  p.replace_extension(".json");
  return p;
}

nlohmann::json grid_sidecar(const Grid& grid) {
  return nlohmann::json{{"width", grid.width},         {"height", grid.height},
                        {"cell_size_m", grid.cell_size_m}, {"nodata", grid.nodata},
                        {"band_name", grid.band_name}, {"city_code", grid.city_code},
                        {"year", grid.year}};
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

void write_bif(const Grid& grid, const std::filesystem::path& bif_path, const nlohmann::json& extra) {
  if (grid.values.size() != grid.width * grid.height) {
    throw std::invalid_argument("write_bif: values length does not match width*height");
  }
  if (bif_path.has_parent_path()) std::filesystem::create_directories(bif_path.parent_path());
  std::ofstream os(bif_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + bif_path.string());
  std::vector<std::uint32_t> raw(grid.values.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = to_little_endian(std::bit_cast<std::uint32_t>(grid.values[i]));
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));

  auto side = grid_sidecar(grid);
  for (const auto& [k, v] : extra.items()) side[k] = v;
  write_json_file(sidecar_path(bif_path), side);
}

nlohmann::json read_sidecar(const std::filesystem::path& bif_path) {
  return read_json_file(sidecar_path(bif_path));
}

Grid read_bif(const std::filesystem::path& bif_path) {
  const auto side = read_sidecar(bif_path);
  Grid grid;
  try {
    grid.width = side.at("width").get<std::size_t>();
    grid.height = side.at("height").get<std::size_t>();
    grid.cell_size_m = side.value("cell_size_m", 10.0);
    grid.nodata = side.value("nodata", kNoData);
    grid.band_name = side.value("band_name", std::string{});
    grid.city_code = side.value("city_code", std::string{});
    grid.year = side.value("year", 0);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(sidecar_path(bif_path).string() + ": " + e.what());
  }

  std::ifstream is(bif_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + bif_path.string());
  const std::size_t n = grid.width * grid.height;
  std::vector<std::uint32_t> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  if (static_cast<std::size_t>(is.gcount()) != n * sizeof(std::uint32_t) || is.peek() != EOF) {
    throw std::runtime_error(bif_path.string() + ": size does not match sidecar dimensions");
  }
  grid.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid.values[i] = std::bit_cast<float>(to_little_endian(raw[i]));
  }
  return grid;
}

}  // namespace slumeval
