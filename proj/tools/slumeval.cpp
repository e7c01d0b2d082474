#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slumeval/labels.hpp"
#include "slumeval/pipeline.hpp"
#include "slumeval/report.hpp"
#include "slumeval/synth.hpp"

namespace fs = std::filesystem;
using namespace slumeval;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitManifest = 2;
constexpr int kExitPartial = 3;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed overriding the manifest seed");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

fs::path out_dir(const Common& c, const RunManifest* m, const char* fallback) {
  if (!c.out.empty()) return c.out;
  if (m && m->out) return *m->out;
  return fallback;
}

std::uint64_t first_seed(const Common& c, const RunManifest& m) { return c.seed.value_or(m.seeds.front()); }

template <class Fn>
void write_text(const fs::path& path, Fn&& fn) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
}

ComboCode combo_or(const std::string& name, const RunManifest& m) {
  return name.empty() ? m.combos.front() : parse_combo(name);
}

Family family_or(const std::string& name, const RunManifest& m) {
  if (!name.empty()) return parse_family(name);
  for (Family f : m.models) {
    if (f == Family::mlp) return f;
  }
  return m.models.front();
}

std::vector<std::string> cities_of(const std::vector<CityYearData>& data, const std::string& only) {
  std::vector<std::string> out;
  for (const auto& d : data) {
    if ((only.empty() || d.key.city == only) && (out.empty() || out.back() != d.key.city)) out.push_back(d.key.city);
  }
  if (out.empty()) throw std::invalid_argument("no data for city '" + only + "'");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slum mapping evaluation toolkit: synthetic worlds, experiment grids, spatial diagnostics"};
  app.require_subcommand(1);

  Common synth_c, labels_c, run_c, dims_c, spatial_c, infer_c, report_c;
  std::string synth_spec, synth_manifest;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-city world");
  synth->add_option("--spec", synth_spec, "Synthetic world spec (JSON)");
  synth->add_option("--manifest", synth_manifest, "Run manifest with data.synthetic");
  add_common(synth, synth_c);

  std::vector<std::string> mask_files;
  auto* labels = app.add_subcommand("labels", "Aggregate sub-pixel masks to count/density/class grids");
  labels->add_option("masks", mask_files, "Mask files (.bin with sidecar)")->required();
  add_common(labels, labels_c);

  std::string manifest_path;
  bool verbose = false;
  auto* run = app.add_subcommand("run", "Execute the experiment grid of a manifest");
  run->add_option("manifest", manifest_path, "Run manifest (JSON)")->required();
  run->add_flag("-v,--verbose", verbose, "Log every cell");
  add_common(run, run_c);

  auto* dims = app.add_subcommand("dims", "PCA ablation, attribution and consensus");
  dims->add_option("manifest", manifest_path, "Run manifest (JSON)")->required();
  add_common(dims, dims_c);

  std::string city, model, combo_name_opt;
  std::vector<int> years;
  int n_perm = 99;
  auto* spatial = app.add_subcommand("validate-spatial", "SSIM, Moran's I, LISA and area error of full-scene predictions");
  spatial->add_option("manifest", manifest_path, "Run manifest (JSON)")->required();
  spatial->add_option("--city", city, "Restrict to one city");
  spatial->add_option("--model", model, "Model family (default mlp when listed)");
  spatial->add_option("--combo", combo_name_opt, "Feature combination (default: first in manifest)");
  spatial->add_option("--permutations", n_perm, "Permutations for Moran / LISA")->check(CLI::PositiveNumber);
  add_common(spatial, spatial_c);

  auto* infer = app.add_subcommand("infer", "Per-city full-scene inference over every year");
  infer->add_option("manifest", manifest_path, "Run manifest (JSON)")->required();
  infer->add_option("--city", city, "Restrict to one city");
  infer->add_option("--model", model, "Model family (default mlp when listed)");
  infer->add_option("--combo", combo_name_opt, "Feature combination (default: first in manifest)");
  infer->add_option("--years", years, "Years to predict (default: all available)");
  add_common(infer, infer_c);

  std::string records_path;
  auto* report = app.add_subcommand("report", "Rebuild report tables from a records.json file");
  report->add_option("records", records_path, "records.json written by run")->required();
  report->add_option("--manifest", manifest_path, "Manifest supplying report settings");
  add_common(report, report_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*synth) {
      SyntheticWorldSpec spec;
      if (!synth_spec.empty()) {
        spec = synth_spec_from_json(read_json_file(synth_spec));
      } else if (!synth_manifest.empty()) {
        const auto m = load_manifest(synth_manifest);
        if (!m.synthetic) throw ManifestError("manifest: no synthetic data section");
        spec = *m.synthetic;
      }
      if (synth_c.seed) spec.seed = *synth_c.seed;
      const fs::path out = synth_c.out.empty() ? fs::path("world") : fs::path(synth_c.out);
      write_world(synth_world(spec), out);
      std::cout << "wrote " << (out / "world.json").string() << "\n";
      return kExitOk;
    }

    if (*labels) {
      const fs::path out = labels_c.out.empty() ? fs::path("labels") : fs::path(labels_c.out);
      nlohmann::json summary = nlohmann::json::array();
      for (const auto& f : mask_files) {
        const LabelPair l = aggregate(read_mask(f));
        const std::string stem = fs::path(f).stem().string();
        write_bif(l.count_grid(), out / (stem + "_count.bif"));
        write_bif(l.density_grid(), out / (stem + "_density.bif"));
        write_bif(l.cls_grid(), out / (stem + "_cls.bif"));
        std::vector<std::size_t> all(l.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const auto shares = density_histogram(l, all);
        summary.push_back({{"mask", stem}, {"city", l.city_code}, {"year", l.year}, {"density_shares", shares}});
      }
      write_json_file(out / "labels.json", summary);
      return kExitOk;
    }

    if (*run) {
      const RunManifest m = load_manifest(manifest_path);
      const fs::path out = out_dir(run_c, &m, "run");
      const auto t0 = std::chrono::steady_clock::now();
      const auto data = load_dataset(m, run_c.seed);
      RunOptions options{out, run_c.jobs, run_c.seed, verbose};
      const RunResult result = run_grid(m, data, options);
      ReportInputs inputs;
      inputs.records = result.records;
      inputs.failures = result.failures;
      inputs.manifest_hash = m.hash;
      emit_report(inputs, m.report, out);
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << result.cells << " cells (" << result.resumed << " resumed, " << result.failures.size()
                << " failed), " << result.records.size() << " records in " << sec << " s\n";
      for (const auto& f : result.failures) std::cerr << "cell " << f.cell << ": " << f.error << "\n";
      return result.failures.empty() ? kExitOk : kExitPartial;
    }

    if (*dims) {
      const RunManifest m = load_manifest(manifest_path);
      const fs::path out = out_dir(dims_c, &m, "dims");
      const auto data = load_dataset(m, dims_c.seed);
      const DimsResult result = run_dims(m, data, first_seed(dims_c, m));
      write_text(out / "pca_ablation.csv", [&](std::ostream& os) { write_ablation_csv(os, result.ablation.rows); });
      write_text(out / "pca_ablation_records.csv",
                 [&](std::ostream& os) { write_records_csv(os, result.ablation.records); });
      write_text(out / "pca_evr.csv", [&](std::ostream& os) { write_evr_csv(os, result); });
      write_text(out / "importance.csv", [&](std::ostream& os) { write_importance_csv(os, result.importance); });
      write_json_file(out / "consensus.json", consensus_grid_json(result.importance));
      return kExitOk;
    }

    if (*spatial) {
      const RunManifest m = load_manifest(manifest_path);
      const fs::path out = out_dir(spatial_c, &m, "spatial");
      const auto data = load_dataset(m, spatial_c.seed);
      const std::uint64_t seed = first_seed(spatial_c, m);
      SpatialSettings settings;
      settings.n_perm = n_perm;
      settings.seed = seed;
      std::vector<SpatialValidation> rows;
      for (const auto& c : cities_of(data, city)) {
        std::vector<int> labelled;
        for (const auto& d : data) {
          if (d.key.city == c && d.labels) labelled.push_back(d.key.year);
        }
        const auto inferred =
            full_scene_infer(data, c, family_or(model, m), m, combo_or(combo_name_opt, m), seed, labelled);
        for (const auto& inf : inferred) {
          const auto& item = *std::find_if(data.begin(), data.end(), [&](const CityYearData& d) {
            return d.key.city == c && d.key.year == inf.year;
          });
          rows.push_back(validate_spatial(*item.labels, inf, settings,
                                          out / "lisa" / (c + "_" + std::to_string(inf.year) + "_lisa.bif")));
        }
      }
      write_text(out / "spatial_validation.csv", [&](std::ostream& os) { write_spatial_validation_csv(os, rows); });
      return kExitOk;
    }

    if (*infer) {
      const RunManifest m = load_manifest(manifest_path);
      const fs::path out = out_dir(infer_c, &m, "inference");
      const auto data = load_dataset(m, infer_c.seed);
      for (const auto& c : cities_of(data, city)) {
        for (const auto& inf :
             full_scene_infer(data, c, family_or(model, m), m, combo_or(combo_name_opt, m), first_seed(infer_c, m), years)) {
          write_inference(inf, out);
        }
      }
      return kExitOk;
    }

    if (*report) {
      const auto j = read_json_file(records_path);
      ReportInputs inputs;
      for (const auto& [c, strategies] : j.at("records").items()) {
        for (const auto& [s, list] : strategies.items()) {
          for (const auto& r : list) inputs.records.push_back(record_from_json(r));
        }
      }
      ReportSettings settings;
      if (!manifest_path.empty()) {
        const RunManifest m = load_manifest(manifest_path);
        settings = m.report;
        inputs.manifest_hash = m.hash;
      }
      emit_report(inputs, settings, report_c.out.empty() ? fs::path("report") : fs::path(report_c.out));
      return kExitOk;
    }
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitManifest;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}
