#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "slumeval/pipeline.hpp"
#include "slumeval/spatial.hpp"

using namespace slumeval;
namespace fs = std::filesystem;

namespace {

nlohmann::json world_json(int cities, std::vector<int> years) {
  return {{"seed", 3},          {"cities", cities}, {"years", years},       {"width", 18},
          {"height", 18},       {"clusters", 5},    {"cluster_radius", 2.0}};
}

nlohmann::json base_manifest() {
  return {{"data", {{"synthetic", world_json(1, {2020})}}},
          {"strategies", {"S1"}},
          {"combos", {"C0"}},
          {"models", {"linear"}},
          {"protocols", {"random"}},
          {"budget", 0}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("slumeval_" + name);
  fs::remove_all(d);
  return d;
}

std::string records_csv(const RunResult& r) {
  std::ostringstream os;
  write_records_csv(os, r.records);
  return os.str();
}

}  // namespace

TEST_CASE("minimal manifest yields one record") {
  auto j = base_manifest();
  j["tasks"] = {"cls"};
  const auto m = parse_manifest(j);
  const auto data = load_dataset(m);
  const auto r = run_grid(m, data, {fresh_dir("minimal"), 1, std::nullopt, false});
  REQUIRE(r.records.size() == 1);
  CHECK(r.cells == 1);
  CHECK(r.failures.empty());
  const auto& rec = r.records.front();
  CHECK(rec.strategy == "S1");
  CHECK(rec.combo == "C0");
  CHECK(rec.model == "linear");
  CHECK(rec.protocol == "random");
  CHECK(rec.task == "cls");
  CHECK(rec.provenance.rfind(m.hash + ":", 0) == 0);
  CHECK(m.hash.size() == 16);
}

TEST_CASE("both tasks produce a decomposition") {
  const auto m = parse_manifest(base_manifest());
  const auto r = run_grid(m, load_dataset(m), {fresh_dir("tasks"), 1, std::nullopt, false});
  REQUIRE(r.records.size() == 2);
  const auto& reg = r.records[1];
  CHECK(reg.task == "reg");
  REQUIRE(reg.decomp);
  CHECK(reg.decomp->single_r2 == reg.reg->r2);
}

TEST_CASE("reruns resume cells and reproduce the CSV") {
  auto j = base_manifest();
  j["data"]["synthetic"] = world_json(2, {2019, 2021});
  j["strategies"] = {"S1", "S2", "S4"};
  j["protocols"] = {"random", "spatial"};
  const auto m = parse_manifest(j);
  const auto data = load_dataset(m);
  const auto out = fresh_dir("resume");
  const auto first = run_grid(m, data, {out, 1, std::nullopt, false});
  CHECK(first.cells == 4 * 3 * 2);
  CHECK(first.resumed == 0);
  const auto second = run_grid(m, data, {out, 1, std::nullopt, false});
  CHECK(second.resumed == second.cells);
  CHECK(records_csv(second) == records_csv(first));

  std::size_t removed = 0;
  for (const auto& e : fs::directory_iterator(out / "cells")) {
    if (removed < 5) {
      fs::remove(e.path());
      ++removed;
    }
  }
  const auto third = run_grid(m, data, {out, 2, std::nullopt, false});
  CHECK(third.resumed == third.cells - 5);
  CHECK(records_csv(third) == records_csv(first));

  const auto parallel = run_grid(m, data, {fresh_dir("resume_jobs"), 3, std::nullopt, false});
  CHECK(records_csv(parallel) == records_csv(first));
}

TEST_CASE("a failing cell does not abort the grid") {
  auto j = base_manifest();
  j["strategies"] = {"S1", "S3"};
  const auto m = parse_manifest(j);
  const auto r = run_grid(m, load_dataset(m), {fresh_dir("partial"), 1, std::nullopt, false});
  CHECK(r.failures.size() == 1);
  CHECK(r.records.size() == 2);
  for (const auto& rec : r.records) CHECK(rec.strategy == "S1");
}

TEST_CASE("seed override changes data and provenance seed") {
  const auto m = parse_manifest(base_manifest());
  const auto a = load_dataset(m);
  const auto b = load_dataset(m, 99);
  CHECK(a.front().blocks[0].bands[0].values != b.front().blocks[0].bands[0].values);
  const auto r = run_grid(m, b, {fresh_dir("override"), 1, 99, false});
  CHECK(r.records.front().seed != 0);
}

TEST_CASE("manifest validation") {
  auto bad = [](auto edit) {
    auto j = base_manifest();
    edit(j);
    CHECK_THROWS_AS(parse_manifest(j), ManifestError);
  };
  bad([](nlohmann::json& j) { j["extra"] = 1; });
  bad([](nlohmann::json& j) { j["strategies"] = nlohmann::json::array(); });
  bad([](nlohmann::json& j) { j["combos"] = {"C7"}; });
  bad([](nlohmann::json& j) { j["models"] = {"linear", "linear"}; });
  bad([](nlohmann::json& j) { j.erase("data"); });
  bad([](nlohmann::json& j) { j["data"] = {{"world", "/nonexistent/world.json"}}; });
  bad([](nlohmann::json& j) { j["model_params"] = {{"svm", nlohmann::json::object()}}; });
  bad([](nlohmann::json& j) { j["budget"] = -1; });

  auto j = base_manifest();
  j["model_params"] = {{"hist-gbt", {{"max_iter", 7}}}};
  j["models"] = {"hist-gbt"};
  const auto m = parse_manifest(j);
  CHECK(m.model_spec(Family::hist_gbt, Task::reg, 1).gbt.max_iter == 7);
  CHECK(m.budget == 0);
  auto k = j;
  k["out"] = "/tmp/elsewhere";
  CHECK(parse_manifest(k).hash == m.hash);
  k["threshold"] = 0.4;
  CHECK(parse_manifest(k).hash != m.hash);
}

TEST_CASE("worlds on disk feed the same pipeline") {
  const auto dir = fresh_dir("disk_world");
  const auto m = parse_manifest(base_manifest());
  SyntheticWorld w;
  w.spec = *m.synthetic;
  w.items = load_dataset(m);
  write_world(w, dir);
  auto j = base_manifest();
  j["data"] = {{"world", "world.json"}};
  const auto md = parse_manifest(j, dir);
  const auto a = run_grid(m, load_dataset(m), {fresh_dir("mem_run"), 1, std::nullopt, false});
  const auto b = run_grid(md, load_dataset(md), {fresh_dir("disk_run"), 1, std::nullopt, false});
  REQUIRE(a.records.size() == b.records.size());
  CHECK(a.records[0].cls->f1 == b.records[0].cls->f1);
}

TEST_CASE("full-scene inference and spatial validation") {
  auto j = base_manifest();
  auto world = world_json(1, {2019, 2021});
  world["unlabeled_years"] = {2020};
  j["data"] = {{"synthetic", world}};
  const auto m = parse_manifest(j);
  const auto data = load_dataset(m);
  const auto inferred = full_scene_infer(data, data.front().key.city, Family::linear, m, ComboCode::c0, 0);
  REQUIRE(inferred.size() == 3);
  CHECK(!inferred[0].imputed);
  CHECK(inferred[1].imputed);
  for (const auto& inf : inferred) {
    for (float v : inf.density.values) CHECK((v == kNoData || (v >= 0.0f && v <= 289.0f)));
    for (std::size_t i = 0; i < inf.cls.size(); ++i) {
      if (inf.cls.is_valid(i)) CHECK(inf.cls.values[i] == (inf.proba.values[i] >= 0.5f ? 1.0f : 0.0f));
    }
  }
  const auto out = fresh_dir("inference");
  write_inference(inferred[1], out);
  const auto side = read_json_file(sidecar_path(out / (data.front().key.city + "_2020_cls.bif")));
  CHECK(side.at("imputed").get<bool>());

  const auto lisa_path = out / "lisa.bif";
  const auto v = validate_spatial(*data.front().labels, inferred[0], {19, 1}, lisa_path);
  CHECK(v.f1 >= 0.0);
  CHECK(v.f1 <= 1.0);
  CHECK(v.ssim_cls <= 1.0);
  CHECK(v.factor == 1);
  CHECK(v.moran_gt);
  CHECK(v.lisa_hh + v.lisa_ll + v.lisa_hl + v.lisa_lh + v.lisa_ns == 18u * 18u);
  CHECK(fs::exists(lisa_path));

  const auto capped = validate_spatial(*data.front().labels, inferred[0], {19, 1, 100, 100});
  CHECK(capped.factor == 2);
}

TEST_CASE("static worlds give temporally stable predictions") {
  auto j = base_manifest();
  auto world = world_json(1, {2019, 2020, 2021});
  world["static_years"] = true;
  world["growth_per_year"] = 0.0;
  j["data"] = {{"synthetic", world}};
  const auto m = parse_manifest(j);
  const auto data = load_dataset(m);
  const auto inferred = full_scene_infer(data, data.front().key.city, Family::linear, m, ComboCode::c0, 0);
  REQUIRE(inferred.size() == 3);
  for (std::size_t y = 1; y < inferred.size(); ++y) CHECK(ssim_binary(inferred[y - 1].cls, inferred[y].cls) >= 0.99);
}

TEST_CASE("dimension analysis on a small world") {
  auto j = base_manifest();
  j["data"] = {{"synthetic", world_json(2, {2019, 2021})}};
  j["k_grid"] = {8, 32, 64};
  j["dims"] = {{"n_perm", 50}, {"orderings", 8}, {"background", 16}, {"explain", 8}};
  const auto m = parse_manifest(j);
  const auto data = load_dataset(m);
  const auto d = run_dims(m, data, 0);
  CHECK(d.pca.size() == 4);
  CHECK(d.importance.cities.size() == 2);
  CHECK(d.importance.dims == 64);
  CHECK(!d.ablation.rows.empty());
  std::ostringstream os;
  write_evr_csv(os, d);
  CHECK(os.str().rfind("city,year,k,evr,cumulative_evr\n", 0) == 0);
}
