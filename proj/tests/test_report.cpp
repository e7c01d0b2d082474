#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "slumeval/report.hpp"

using namespace slumeval;
namespace fs = std::filesystem;

namespace {

struct PublishedRow {
  const char* city;
  double f1_c0;
  const char* f1_cfg;
  double f1_best;
  double r2_c0;
  const char* r2_cfg;
  double r2_best;
};

// Per-city baseline and best-configuration values of the reference study.
const PublishedRow kPublished[] = {
    {"PAK", 0.759, "C5", 0.794, 0.478, "C5", 0.576},   {"HTI", 0.716, "C5", 0.773, 0.507, "C4", 0.552},
    {"BFA", 0.632, "C5", 0.715, 0.431, "C5", 0.564},   {"EGY", 0.671, "C5", 0.687, -1.582, "C2", 0.362},
    {"HON", 0.568, "C3", 0.586, 0.333, "C4", 0.4},     {"IND", 0.498, "C5", 0.508, 0.322, "C4", 0.356},
    {"KEN", 0.37, "C5", 0.47, 0.269, "C5", 0.346},     {"VEN", 0.387, "C5", 0.429, 0.064, "C5", 0.246},
    {"COL", 0.453, "C5", 0.477, -0.03, "C3", 0.107},   {"BRA", 0.258, "C5", 0.287, 0.201, "C5", 0.218},
    {"ZAF", 0.208, "C5", 0.296, -0.444, "C4", 0.194},  {"LKA", 0.113, "C5", 0.156, -0.049, "C4", -0.002},
};

EvalRecord make(const std::string& city, int year, const std::string& combo, const std::string& task, int fold,
                double value, const std::string& model = "mlp") {
  EvalRecord r;
  r.city = city;
  r.year = year;
  r.strategy = "S1";
  r.combo = combo;
  r.model = model;
  r.protocol = "spatial";
  r.fold = fold;
  r.task = task;
  if (task == "cls") {
    ClsMetrics m;
    m.f1 = value;
    r.cls = m;
  } else {
    RegMetrics m;
    m.r2 = value;
    r.reg = m;
    Decomposition d;
    d.single_r2 = value;
    d.two_stage_gain = 0.01 * fold;
    d.oracle_gain = 0.02 * fold;
    d.pos_r2 = value / 2;
    r.decomp = d;
  }
  return r;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("usability gate on the published per-city values") {
  std::vector<UsabilityRow> rows;
  for (const auto& p : kPublished) rows.push_back({p.city, p.f1_c0, p.f1_best, p.f1_cfg, p.r2_c0, p.r2_best, p.r2_cfg});
  std::set<std::string> both, reg_only, neither;
  for (const auto& r : rows) {
    const Usability u = row_usability(r);
    if (u == Usability::both) both.insert(r.city);
    if (u == Usability::reg_only) reg_only.insert(r.city);
    if (u == Usability::neither) neither.insert(r.city);
  }
  CHECK(both == std::set<std::string>{"PAK", "HTI", "BFA", "EGY", "HON", "IND"});
  CHECK(reg_only == std::set<std::string>{"KEN"});
  CHECK(neither.contains("LKA"));

  std::ostringstream os;
  write_usability_csv(os, rows);
  std::istringstream is(os.str());
  std::string header, pak;
  std::getline(is, header);
  std::getline(is, pak);
  CHECK(header == "city,f1_c0,f1_best_combo,f1_best,d_f1,r2_c0,r2_best_combo,r2_best,d_r2,usability");
  CHECK(pak == "PAK,0.759000,C5,0.794000,0.035000,0.478000,C5,0.576000,0.098000,both");
}

TEST_CASE("usability rows take the best non-baseline combination") {
  std::vector<EvalRecord> rec;
  for (int year : {2019, 2021}) {
    rec.push_back(make("AAA", year, "C0", "cls", 0, 0.6));
    rec.push_back(make("AAA", year, "C1", "cls", 0, 0.55));
    rec.push_back(make("AAA", year, "C4", "cls", 0, 0.7));
    rec.push_back(make("AAA", year, "C0", "reg", 0, 0.2));
    rec.push_back(make("AAA", year, "C1", "reg", 0, 0.35));
    rec.push_back(make("AAA", year, "C4", "reg", 0, 0.1));
  }
  rec.push_back(make("BBB", 2019, "C0", "cls", 0, 0.3));
  const auto view = resolve_view(rec, {});
  CHECK(view.model == "mlp");
  CHECK(view.protocol == "spatial");
  CHECK(view.combo == "C0");
  const auto rows = usability_rows(rec, view);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].city == "AAA");
  CHECK(rows[0].f1_best_combo == "C4");
  CHECK(*rows[0].f1_best == 0.7);
  CHECK(rows[0].r2_best_combo == "C1");
  CHECK(*rows[0].r2_best == 0.35);
  CHECK(row_usability(rows[0]) == Usability::both);
  CHECK(!rows[1].f1_best);
  CHECK(row_usability(rows[1]) == Usability::neither);
}

TEST_CASE("decomposition table") {
  std::vector<EvalRecord> rec;
  for (int fold = 0; fold < 3; ++fold) {
    rec.push_back(make("AAA", 2019, "C0", "cls", fold, 0.5 + 0.1 * fold));
    rec.push_back(make("AAA", 2019, "C0", "reg", fold, 0.4));
    rec.push_back(make("AAA", 2021, "C0", "cls", fold, 0.8));
    rec.push_back(make("AAA", 2021, "C0", "reg", fold, 0.6));
    rec.push_back(make("BBB", 2019, "C0", "cls", fold, 0.3));
    rec.push_back(make("BBB", 2019, "C0", "reg", fold, 0.7));
  }
  const auto rows = decomposition_rows(rec, resolve_view(rec, {}));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].city == "BBB");
  CHECK(rows[0].n_yr == 1);
  CHECK(rows[1].n_yr == 2);
  CHECK(*rows[1].cls_f1 == doctest::Approx(0.7));
  CHECK(*rows[1].single_r2 == doctest::Approx(0.5));
  CHECK(*rows[1].two_stage_gain == doctest::Approx(0.01));
  std::ostringstream os;
  write_decomposition_csv(os, rows);
  std::istringstream is(os.str());
  std::string header, l1, l2, median;
  std::getline(is, header);
  std::getline(is, l1);
  std::getline(is, l2);
  std::getline(is, median);
  CHECK(header == "city,n_yr,cls_f1,single_r2,two_stage_gain,oracle_gain,pos_r2");
  CHECK(median == "Median,,,,0.010000,0.020000,0.300000");
}

TEST_CASE("empty input writes headers only") {
  const auto dir = fs::temp_directory_path() / "slumeval_empty_report";
  fs::remove_all(dir);
  emit_report({}, {}, dir);
  for (const char* f : {"records.csv", "strategy_comparison.csv", "model_ranking.csv", "per_city.csv",
                        "decomposition.csv", "decomposition_all.csv", "marginal_gains.csv", "usability.csv",
                        "spatial_validation.csv", "pca_ablation.csv", "importance.csv"}) {
    CAPTURE(f);
    const auto l = lines(dir / f);
    CHECK(l.size() == 1);
  }
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(!fs::exists(dir / "consensus.json"));
}

TEST_CASE("report files are deterministic") {
  std::vector<EvalRecord> rec;
  for (const char* model : {"linear", "mlp"}) {
    for (int fold = 0; fold < 2; ++fold) {
      rec.push_back(make("AAA", 2019, "C0", "cls", fold, 0.5 + 0.1 * fold, model));
      rec.push_back(make("AAA", 2019, "C2", "cls", fold, 0.55, model));
      rec.push_back(make("AAA", 2019, "C0", "reg", fold, 0.3, model));
    }
  }
  ReportInputs in;
  in.records = rec;
  const auto a = fs::temp_directory_path() / "slumeval_report_a";
  const auto b = fs::temp_directory_path() / "slumeval_report_b";
  emit_report(in, {}, a);
  emit_report(in, {}, b);
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(lines(e.path()) == lines(b / e.path().filename()));
  }
  CHECK(lines(a / "marginal_gains.csv").size() > 1);
  CHECK(lines(a / "model_ranking.csv").size() > 1);

  SpatialValidation v;
  v.city = "AAA";
  v.year = 2019;
  v.f1 = 0.5;
  v.area_pct_err = 15.2;
  const std::vector<SpatialValidation> sv{v, v};
  std::ostringstream os;
  write_spatial_validation_csv(os, sv);
  CHECK(os.str().find("Mean,") != std::string::npos);
  CHECK(os.str().find("15.2") != std::string::npos);
}
