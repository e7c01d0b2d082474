#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "slumeval/sample_table.hpp"

namespace slumeval {

enum class Protocol { random, spatial };
enum class Strategy { s1, s2, s3, s4 };

std::string_view protocol_name(Protocol p);
Protocol parse_protocol(std::string_view s);
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view s);

struct Split {
  Protocol protocol = Protocol::random;
  int fold = 0;
  std::vector<std::size_t> train;  // row ids into the target table
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded 80/20 split; train size is round(0.8 n). Requires n >= 5.
Split random_split(const SampleTable& table, std::uint64_t seed);

struct SpatialFolds {
  std::vector<Split> folds;   // usable folds in block order
  std::vector<int> skipped;   // blocks without test rows or without training rows
};

/// Fold k tests block k and trains on the other eight.
SpatialFolds spatial_folds(const SampleTable& table);

/// Seed of the random split for one target city-year.
std::uint64_t split_seed(std::uint64_t seed, const CityYear& key);

/// The evaluation splits of a target under a protocol: one seeded random
/// split, or every usable spatial fold.
std::vector<Split> protocol_splits(const SampleTable& table, const CityYear& key, Protocol protocol,
                                   std::uint64_t seed);

/// Largest-remainder allocation of `budget` rows proportional to `sizes`.
/// When the budget covers everything, every source is taken whole.
std::vector<std::size_t> proportional_allocation(std::span<const std::size_t> sizes, std::size_t budget);

/// Every labelled city-year's table for one feature combination.
using Corpus = std::map<CityYear, SampleTable>;

/// Training table for `target` under a strategy, given the target's split.
///   S1  the target's own training rows (budget ignored)
///   S2  target city, all years
///   S3  other cities, target year
///   S4  every city-year except the target pair
/// S2-S4 are subsampled proportionally to source size so the total matches
/// `budget` (0 means: the size of the target's training partition). Under the
/// spatial protocol, the held-out block is also removed from the target city's
/// other years.
SampleTable assemble_strategy(Strategy strategy, const CityYear& target, const Split& target_split,
                              const Corpus& corpus, std::size_t budget, std::uint64_t seed);

/// Throws std::logic_error if any training row is a test row of the split, or
/// (spatial protocol) lies in the held-out block of the target city.
void audit_leakage(const SampleTable& train, const CityYear& target, const SampleTable& target_table,
                   const Split& split);

nlohmann::json split_to_json(const Split& split);
Split split_from_json(const nlohmann::json& j);

}  // namespace slumeval
