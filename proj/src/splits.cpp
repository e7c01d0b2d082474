#include "slumeval/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "slumeval/random.hpp"

namespace slumeval {

std::string_view protocol_name(Protocol p) { return p == Protocol::random ? "random" : "spatial"; }

Protocol parse_protocol(std::string_view s) {
  if (s == "random") return Protocol::random;
  if (s == "spatial") return Protocol::spatial;
  throw std::invalid_argument("unknown protocol '" + std::string(s) + "'");
}

std::string_view strategy_name(Strategy s) {
  static constexpr std::string_view names[] = {"S1", "S2", "S3", "S4"};
  return names[static_cast<int>(s)];
}

Strategy parse_strategy(std::string_view s) {
  for (auto st : {Strategy::s1, Strategy::s2, Strategy::s3, Strategy::s4}) {
    if (strategy_name(st) == s) return st;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

Split random_split(const SampleTable& table, std::uint64_t seed) {
  const std::size_t n = table.rows();
  if (n < 5) throw std::invalid_argument("random_split: need at least 5 rows, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(n)));
  Split s;
  s.protocol = Protocol::random;
  s.seed = seed;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

SpatialFolds spatial_folds(const SampleTable& table) {
  SpatialFolds out;
  for (int k = 0; k < 9; ++k) {
    Split s;
    s.protocol = Protocol::spatial;
    s.fold = k;
    for (std::size_t i = 0; i < table.rows(); ++i) {
      (table.block[i] == k ? s.test : s.train).push_back(i);
    }
    if (s.test.empty() || s.train.empty()) {
      out.skipped.push_back(k);
    } else {
      out.folds.push_back(std::move(s));
    }
  }
  return out;
}

std::uint64_t split_seed(std::uint64_t seed, const CityYear& key) { return derive_seed(seed, fnv1a(key.str())); }

std::vector<Split> protocol_splits(const SampleTable& table, const CityYear& key, Protocol protocol,
                                   std::uint64_t seed) {
  if (protocol == Protocol::random) return {random_split(table, split_seed(seed, key))};
  return spatial_folds(table).folds;
}

std::vector<std::size_t> proportional_allocation(std::span<const std::size_t> sizes, std::size_t budget) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> alloc(sizes.begin(), sizes.end());
  if (budget >= total) return alloc;

  std::vector<double> remainder(sizes.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    // Exact integer quotient keeps the arithmetic deterministic for large counts.
    const auto num = static_cast<unsigned __int128>(budget) * sizes[i];
    alloc[i] = static_cast<std::size_t>(num / total);
    remainder[i] = static_cast<double>(static_cast<std::size_t>(num % total)) / static_cast<double>(total);
    assigned += alloc[i];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < budget; ++k) {
    ++alloc[order[k % order.size()]];
    ++assigned;
  }
  return alloc;
}

namespace {

struct Source {
  const SampleTable* table;
  std::vector<std::size_t> rows;
};

std::vector<std::size_t> rows_outside_block(const SampleTable& t, int block) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.block[i] != block) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> all_rows(const SampleTable& t) {
  std::vector<std::size_t> rows(t.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

SampleTable assemble_strategy(Strategy strategy, const CityYear& target, const Split& target_split,
                              const Corpus& corpus, std::size_t budget, std::uint64_t seed) {
  const auto tgt = corpus.find(target);
  if (tgt == corpus.end()) throw std::invalid_argument("assemble_strategy: target " + target.str() + " not in corpus");
  const SampleTable& target_table = tgt->second;
  if (strategy == Strategy::s1) return target_table.take(target_split.train);

  const bool spatial = target_split.protocol == Protocol::spatial;
  const int held_out_block = target_split.fold;

  std::vector<Source> sources;
  for (const auto& [key, table] : corpus) {
    const bool same_city = key.city == target.city;
    const bool same_year = key.year == target.year;
    if (key == target) {
      if (strategy == Strategy::s2) sources.push_back({&table, target_split.train});
      continue;
    }
    bool use = false;
    switch (strategy) {
      case Strategy::s2: use = same_city; break;
      case Strategy::s3: use = !same_city && same_year; break;
      case Strategy::s4: use = true; break;
      case Strategy::s1: break;
    }
    if (!use) continue;
    sources.push_back({&table, spatial && same_city ? rows_outside_block(table, held_out_block) : all_rows(table)});
  }
  std::erase_if(sources, [](const Source& s) { return s.rows.empty(); });
  if (sources.empty()) {
    throw std::invalid_argument("assemble_strategy: no source city-years for " +
                                std::string(strategy_name(strategy)) + " with target " + target.str());
  }

  const std::size_t want = budget > 0 ? budget : target_split.train.size();
  std::vector<std::size_t> sizes;
  for (const auto& s : sources) sizes.push_back(s.rows.size());
  const auto alloc = proportional_allocation(sizes, want);

  std::vector<SampleTable> parts;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    auto rows = sources[i].rows;
    if (alloc[i] < rows.size()) {
      Rng rng(derive_seed(seed, fnv1a(sources[i].table->keys.front().str())));
      shuffle(rows.begin(), rows.end(), rng);
      rows.resize(alloc[i]);
      std::sort(rows.begin(), rows.end());
    }
    parts.push_back(sources[i].table->take(rows));
  }
  return concat(parts);
}

void audit_leakage(const SampleTable& train, const CityYear& target, const SampleTable& target_table,
                   const Split& split) {
  std::unordered_set<std::uint32_t> test_cells;
  for (std::size_t r : split.test) test_cells.insert(target_table.cell.at(r));
  const bool spatial = split.protocol == Protocol::spatial;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const CityYear& k = train.key(i);
    if (k == target && test_cells.contains(train.cell[i])) {
      throw std::logic_error("leakage: test cell " + std::to_string(train.cell[i]) + " of " + target.str() +
                             " appears in training");
    }
    if (spatial && k.city == target.city && train.block[i] == split.fold) {
      throw std::logic_error("leakage: held-out block " + std::to_string(split.fold) + " of " + target.city +
                             " (year " + std::to_string(k.year) + ") appears in training");
    }
  }
}

nlohmann::json split_to_json(const Split& split) {
  return {{"protocol", protocol_name(split.protocol)},
          {"fold", split.fold},
          {"seed", split.seed},
          {"train", split.train},
          {"test", split.test}};
}

Split split_from_json(const nlohmann::json& j) {
  Split s;
  s.protocol = parse_protocol(j.at("protocol").get<std::string>());
  s.fold = j.at("fold").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.test = j.at("test").get<std::vector<std::size_t>>();
  return s;
}

}  // namespace slumeval
