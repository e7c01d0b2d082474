#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "slumeval/dims.hpp"
#include "slumeval/metrics.hpp"
#include "slumeval/models.hpp"
#include "slumeval/splits.hpp"
#include "slumeval/synth.hpp"

namespace slumeval {

/// Raised for malformed or inconsistent run manifests.
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DimsSettings {
  int n_perm = 1000;
  int orderings = 256;         // Monte-Carlo Shapley orderings per row
  std::size_t background = 64;
  std::size_t explain = 32;
  int top = 10;
};

/// Selects the configuration shown in the decomposition table. Empty fields
/// fall back to the first strategy, mlp (else the first model), spatial (else
/// the first protocol) and the first combo.
struct ReportSettings {
  std::optional<std::string> strategy;
  std::optional<std::string> model;
  std::optional<std::string> protocol;
  std::optional<std::string> combo;
  std::string baseline_combo = "C0";
};

struct RunManifest {
  std::optional<std::filesystem::path> world;     // world.json index
  std::optional<SyntheticWorldSpec> synthetic;
  std::vector<Strategy> strategies;
  std::vector<ComboCode> combos;
  std::vector<Family> models;
  std::map<Family, nlohmann::json> model_params;  // overrides applied to both tasks
  std::vector<Protocol> protocols;
  std::vector<Task> tasks{Task::cls, Task::reg};  // decomposition needs both
  std::vector<std::uint64_t> seeds{0};
  std::size_t budget = 480'000;                   // 0: size of the target's training partition
  std::vector<CityYear> targets;                  // empty: every labelled city-year
  double threshold = 0.5;
  std::vector<int> k_grid = kDefaultKGrid;
  DimsSettings dims;
  ReportSettings report;
  std::optional<std::filesystem::path> out;
  nlohmann::json raw;                             // canonical form, hashed for provenance
  std::string hash;                               // 16 hex digits

  ModelSpec model_spec(Family family, Task task, std::uint64_t seed) const;
};

/// Validates and normalises a manifest. Relative data paths resolve against
/// `base_dir`. Throws ManifestError.
RunManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunManifest load_manifest(const std::filesystem::path& path);

/// Reads the world index or generates the synthetic world. `seed_override`
/// replaces the synthetic seed.
std::vector<CityYearData> load_dataset(const RunManifest& manifest,
                                       std::optional<std::uint64_t> seed_override = std::nullopt);

/// Sample tables of every labelled city-year for one combination.
Corpus build_corpus(const std::vector<CityYearData>& data, ComboCode code);

struct RunOptions {
  std::filesystem::path out;
  int jobs = 1;
  std::optional<std::uint64_t> seed_override;  // replaces the manifest seed list
  bool verbose = false;
};

struct CellFailure {
  std::string cell;
  std::string error;
};

struct RunResult {
  std::vector<EvalRecord> records;  // enumeration order, independent of scheduling
  std::size_t cells = 0;
  std::size_t resumed = 0;
  std::vector<CellFailure> failures;
};

/// Executes seed x target x strategy x combo x model x protocol. Each cell runs
/// every fold, trains one classifier and one regressor and writes
/// <out>/cells/<key>.json; cells already marked ok are loaded instead of rerun.
/// A failing cell is recorded and never aborts the grid.
RunResult run_grid(const RunManifest& manifest, const std::vector<CityYearData>& data, const RunOptions& options);

/// Hex FNV-1a digest of a JSON value's compact dump.
std::string json_digest(const nlohmann::json& j);

// ---- dimension analysis -----------------------------------------------------

struct DimsResult {
  AblationResult ablation;
  ImportanceTable importance;
  std::vector<std::pair<CityYear, PcaModel>> pca;  // one fit per labelled city-year
};

/// PCA ablation over the AEF block (both tasks, every manifest model and
/// protocol), then per-city attribution of each classifier trained on all
/// labelled years, ranked and tested across cities.
DimsResult run_dims(const RunManifest& manifest, const std::vector<CityYearData>& data, std::uint64_t seed);

/// city,year,k,evr,cumulative_evr
void write_evr_csv(std::ostream& os, const DimsResult& result);

// ---- full-scene inference ----------------------------------------------------

struct InferredYear {
  int year = 0;
  bool imputed = false;  // no labels for this year
  Grid cls;              // 0/1, proba >= threshold
  Grid proba;
  Grid density;          // sub-pixel counts clamped to [0, 289]
};

/// Trains one classifier and one regressor on every labelled year of `city`
/// and predicts every requested year (all available years when empty). Cells
/// outside the combo's stackable set hold the sentinel.
std::vector<InferredYear> full_scene_infer(const std::vector<CityYearData>& data, const std::string& city,
                                           Family family, const RunManifest& manifest, ComboCode code,
                                           std::uint64_t seed, std::span<const int> years = {});

void write_inference(const InferredYear& inferred, const std::filesystem::path& dir);

// ---- spatial validation ------------------------------------------------------

struct SpatialValidation {
  std::string city;
  int year = 0;
  int factor = 1;  // downsampling applied before Moran / LISA
  double f1 = 0.0;
  double iou = 0.0;
  double accuracy = 0.0;
  double ssim_cls = 0.0;
  std::optional<double> moran_gt;
  std::optional<double> moran_pred;
  std::optional<double> moran_residual;
  std::optional<double> moran_residual_p;
  double area_pct_err = 0.0;
  std::size_t lisa_hh = 0, lisa_ll = 0, lisa_hl = 0, lisa_lh = 0, lisa_ns = 0;
};

struct SpatialSettings {
  int n_perm = 99;
  std::uint64_t seed = 0;
  std::size_t moran_cap = kMoranCellCap;
  std::size_t lisa_cap = kLisaCellCap;
};

/// Compares a predicted year against its labels; writes the LISA band of the
/// predicted density to `lisa_out` when given.
SpatialValidation validate_spatial(const LabelPair& labels, const InferredYear& inferred,
                                   const SpatialSettings& settings,
                                   const std::optional<std::filesystem::path>& lisa_out = std::nullopt);

}  // namespace slumeval
