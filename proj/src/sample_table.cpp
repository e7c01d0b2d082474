#include "slumeval/sample_table.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace slumeval {

SampleTable SampleTable::take(std::span<const std::size_t> row_ids) const {
  SampleTable out;
  out.keys = keys;
  const auto n = row_ids.size();
  out.key_of.reserve(n);
  out.cell.reserve(n);
  out.block.reserve(n);
  out.y_cls.reserve(n);
  out.y_reg.reserve(n);
  out.x.resize(static_cast<Eigen::Index>(n), x.cols());
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = row_ids[r];
    if (i >= rows()) throw std::out_of_range("SampleTable::take: row id out of range");
    out.key_of.push_back(key_of[i]);
    out.cell.push_back(cell[i]);
    out.block.push_back(block[i]);
    out.y_cls.push_back(y_cls[i]);
    out.y_reg.push_back(y_reg[i]);
    out.x.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

Eigen::VectorXd SampleTable::cls_target() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows()));
  for (std::size_t i = 0; i < rows(); ++i) y[static_cast<Eigen::Index>(i)] = y_cls[i];
  return y;
}

Eigen::VectorXd SampleTable::reg_target() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows()));
  for (std::size_t i = 0; i < rows(); ++i) y[static_cast<Eigen::Index>(i)] = y_reg[i];
  return y;
}

void SampleTable::validate() const {
  const std::size_t n = rows();
  if (key_of.size() != n || block.size() != n || y_cls.size() != n || y_reg.size() != n ||
      static_cast<std::size_t>(x.rows()) != n) {
    throw std::logic_error("SampleTable: column lengths differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (key_of[i] >= keys.size()) throw std::logic_error("SampleTable: dangling city-year key");
    if (block[i] > 8) throw std::logic_error("SampleTable: block index out of range");
    if (y_reg[i] > kSubpixels) throw std::logic_error("SampleTable: count above 289");
    if ((y_reg[i] > 0) != (y_cls[i] != 0)) throw std::logic_error("SampleTable: cls/count mismatch");
  }
}

SampleTable build_sample_table(const CityYear& key, std::span<const FeatureBlock> blocks,
                               const LabelPair& labels, ComboCode code) {
  if (blocks.empty() || blocks.front().bands.empty()) {
    throw std::invalid_argument("build_sample_table: no feature bands");
  }
  const Grid& ref = blocks.front().bands.front();
  if (ref.width != labels.width || ref.height != labels.height) {
    throw std::invalid_argument("build_sample_table: labels and features differ in geometry");
  }
  const auto cells = stackable_cells(blocks, code);
  SampleTable t;
  t.keys = {key};
  t.x = stack(blocks, code, cells);
  const std::size_t n = cells.size();
  t.key_of.assign(n, 0);
  t.cell.resize(n);
  t.block.resize(n);
  t.y_cls.resize(n);
  t.y_reg.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t c = cells[r];
    t.cell[r] = static_cast<std::uint32_t>(c);
    t.block[r] = static_cast<std::uint8_t>(block_of(c / ref.width, c % ref.width, ref.height, ref.width).index());
    t.y_cls[r] = labels.cls[c];
    t.y_reg[r] = labels.count[c];
  }
  return t;
}

SampleTable concat(std::span<const SampleTable> parts) {
  SampleTable out;
  std::map<CityYear, std::uint32_t> key_ids;
  std::size_t n = 0;
  Eigen::Index cols = -1;
  for (const auto& p : parts) {
    for (const auto& k : p.keys) key_ids.emplace(k, 0);
    n += p.rows();
    if (p.rows() == 0) continue;
    if (cols >= 0 && p.x.cols() != cols) throw std::invalid_argument("concat: feature widths differ");
    cols = p.x.cols();
  }
  std::uint32_t next = 0;
  for (auto& [k, id] : key_ids) {
    id = next++;
    out.keys.push_back(k);
  }
  if (cols < 0) cols = parts.empty() ? 0 : parts.front().x.cols();
  out.x.resize(static_cast<Eigen::Index>(n), cols);
  out.key_of.reserve(n);
  Eigen::Index r0 = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i) out.key_of.push_back(key_ids.at(p.key(i)));
    out.cell.insert(out.cell.end(), p.cell.begin(), p.cell.end());
    out.block.insert(out.block.end(), p.block.begin(), p.block.end());
    out.y_cls.insert(out.y_cls.end(), p.y_cls.begin(), p.y_cls.end());
    out.y_reg.insert(out.y_reg.end(), p.y_reg.begin(), p.y_reg.end());
    if (p.rows() > 0) out.x.middleRows(r0, p.x.rows()) = p.x;
    r0 += p.x.rows();
  }
  return out;
}

}  // namespace slumeval
