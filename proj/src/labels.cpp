#include "slumeval/labels.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace slumeval {

SubpixelMask SubpixelMask::from_bits(std::size_t sub_height, std::size_t sub_width, int subfactor,
                                     std::vector<std::uint8_t> bits) {
  if (subfactor < 1) throw std::invalid_argument("subfactor must be >= 1");
  const auto sf = static_cast<std::size_t>(subfactor);
  if (sub_height % sf != 0 || sub_width % sf != 0) {
    throw std::invalid_argument("mask extent " + std::to_string(sub_height) + "x" +
                                std::to_string(sub_width) + " is not a multiple of subfactor " +
                                std::to_string(subfactor));
  }
  if (bits.size() != sub_height * sub_width) {
    throw std::invalid_argument("mask bit count does not match its extent");
  }
  SubpixelMask m;
  m.height = sub_height / sf;
  m.width = sub_width / sf;
  m.subfactor = subfactor;
  m.bits = std::move(bits);
  return m;
}

LabelPair aggregate(const SubpixelMask& mask) {
  const auto sf = static_cast<std::size_t>(mask.subfactor);
  const std::size_t sw = mask.sub_width();
  if (mask.bits.size() != mask.sub_height() * sw) {
    throw std::invalid_argument("aggregate: mask bits do not cover height*width*subfactor^2");
  }
  LabelPair out;
  out.width = mask.width;
  out.height = mask.height;
  out.subpixels = mask.subfactor * mask.subfactor;
  out.city_code = mask.city_code;
  out.year = mask.year;
  const std::size_t n = mask.width * mask.height;
  out.count.assign(n, 0);
  out.cls.assign(n, 0);
  out.density.assign(n, 0.0);

  for (std::size_t row = 0; row < mask.height; ++row) {
    for (std::size_t col = 0; col < mask.width; ++col) {
      unsigned s = 0;
      const std::uint8_t* base = mask.bits.data() + row * sf * sw + col * sf;
      for (std::size_t dr = 0; dr < sf; ++dr) {
        const std::uint8_t* line = base + dr * sw;
        for (std::size_t dc = 0; dc < sf; ++dc) s += line[dc] != 0;
      }
      const std::size_t i = row * mask.width + col;
      out.count[i] = static_cast<std::uint16_t>(s);
      out.cls[i] = s > 0;
      out.density[i] = static_cast<double>(s) / static_cast<double>(out.subpixels);
    }
  }
  return out;
}

LabelPair merge_overlap(const LabelPair& a, const LabelPair& b) {
  if (a.width != b.width || a.height != b.height || a.subpixels != b.subpixels) {
    throw std::invalid_argument("merge_overlap: label geometries differ");
  }
  LabelPair out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.cls[i] = std::max(a.cls[i], b.cls[i]);
    out.count[i] = std::max(a.count[i], b.count[i]);
    out.density[i] = static_cast<double>(out.count[i]) / static_cast<double>(out.subpixels);
  }
  return out;
}

DensityShares density_histogram(const LabelPair& labels, std::span<const std::size_t> valid) {
  if (valid.empty()) throw std::invalid_argument("density_histogram: empty valid set");
  std::array<std::size_t, 5> counts{};
  for (std::size_t i : valid) {
    const double rho = labels.density.at(i);
    std::size_t bin = 0;
    if (rho > 0.0) {
      bin = 1;
      for (std::size_t e = 1; e < kDensityBinEdges.size(); ++e) {
        if (rho > kDensityBinEdges[e]) bin = e + 1;
      }
    }
    ++counts[bin];
  }
  DensityShares shares{};
  for (std::size_t k = 0; k < counts.size(); ++k) {
    shares[k] = static_cast<double>(counts[k]) / static_cast<double>(valid.size());
  }
  return shares;
}

namespace {

Grid label_grid(const LabelPair& l, const char* band) {
  Grid g(l.width, l.height);
  g.city_code = l.city_code;
  g.year = l.year;
  g.band_name = band;
  return g;
}

}  // namespace

Grid LabelPair::cls_grid() const {
  Grid g = label_grid(*this, "cls");
  for (std::size_t i = 0; i < size(); ++i) g.values[i] = cls[i];
  return g;
}

Grid LabelPair::count_grid() const {
  Grid g = label_grid(*this, "count");
  for (std::size_t i = 0; i < size(); ++i) g.values[i] = count[i];
  return g;
}

Grid LabelPair::density_grid() const {
  Grid g = label_grid(*this, "density");
  for (std::size_t i = 0; i < size(); ++i) g.values[i] = static_cast<float>(density[i]);
  return g;
}

void write_mask(const SubpixelMask& mask, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<std::uint8_t> packed((mask.bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (mask.bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));

  nlohmann::json side{{"width", mask.width},         {"height", mask.height},
                      {"cell_size_m", mask.cell_size_m}, {"nodata", mask.nodata},
                      {"band_name", "subpixel_mask"}, {"city_code", mask.city_code},
                      {"year", mask.year},           {"subfactor", mask.subfactor}};
  write_json_file(sidecar_path(path), side);
}

SubpixelMask read_mask(const std::filesystem::path& path) {
  const auto side = read_sidecar(path);
  SubpixelMask m;
  try {
    m.width = side.at("width").get<std::size_t>();
    m.height = side.at("height").get<std::size_t>();
    m.subfactor = side.at("subfactor").get<int>();
    m.cell_size_m = side.value("cell_size_m", 10.0);
    m.nodata = side.value("nodata", kNoData);
    m.city_code = side.value("city_code", std::string{});
    m.year = side.value("year", 0);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(sidecar_path(path).string() + ": " + e.what());
  }
  if (m.subfactor < 1) throw std::runtime_error(path.string() + ": subfactor must be >= 1");
  const std::size_t n = m.sub_width() * m.sub_height();
  std::vector<std::uint8_t> packed((n + 7) / 8);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  if (static_cast<std::size_t>(is.gcount()) != packed.size()) {
    throw std::runtime_error(path.string() + ": truncated mask");
  }
  m.bits.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return m;
}

}  // namespace slumeval
