#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "slumeval/metrics.hpp"
#include "slumeval/random.hpp"

#include "oracles.hpp"

using namespace slumeval;

namespace {

double pairwise_auc(std::span<const double> y, std::span<const double> s) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return num / den;
}

EvalRecord rec(std::string city, int year, std::string combo, std::string model, int fold, double f1,
               std::optional<double> r2 = std::nullopt) {
  EvalRecord r;
  r.city = std::move(city);
  r.year = year;
  r.strategy = "S1";
  r.combo = std::move(combo);
  r.model = std::move(model);
  r.protocol = "spatial";
  r.fold = fold;
  r.task = r2 ? "reg" : "cls";
  if (r2) {
    RegMetrics m;
    m.r2 = r2;
    r.reg = m;
  } else {
    ClsMetrics m;
    m.f1 = f1;
    m.iou = f1 / (2.0 - f1);
    r.cls = m;
  }
  return r;
}

}  // namespace

TEST_CASE("confusion arithmetic") {
  const std::vector<double> y{1, 1, 1, 0, 0};
  const std::vector<double> p{0.9, 0.8, 0.1, 0.7, 0.2};
  const auto m = cls_metrics(y, p);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.iou == doctest::Approx(0.5));

  const std::vector<double> sep{0.1, 0.2, 0.3, 0.9, 0.8};
  const std::vector<double> ysep{0, 0, 0, 1, 1};
  CHECK(*cls_metrics(ysep, sep).auc_roc == 1.0);
  CHECK(cls_metrics(ysep, sep).f1 == 1.0);

  const std::vector<double> zeros(5, 0.0);
  const auto neg = cls_metrics(ysep, zeros);
  CHECK(neg.f1 == 0.0);
  CHECK(neg.iou == 0.0);
  CHECK(neg.precision == 0.0);
  CHECK(!cls_metrics(zeros, sep).auc_roc);
}

TEST_CASE("F1 and IoU identity on random confusion matrices") {
  Rng rng(1);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 60);
    std::vector<double> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
      p[i] = uniform01(rng);
    }
    const auto m = cls_metrics(y, p);
    CHECK(m.f1 == doctest::Approx(2.0 * m.iou / (1.0 + m.iou)).epsilon(1e-12));
    CHECK(m.tp + m.fp + m.fn + m.tn == n);
  }
}

TEST_CASE("AUC matches the pairwise oracle, ties included") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 4 + uniform_index(rng, 40);
    std::vector<double> y(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? static_cast<double>(i) : (uniform01(rng) < 0.5 ? 1.0 : 0.0);
      s[i] = static_cast<double>(uniform_index(rng, 6));
    }
    CHECK(*auc_roc(y, s) == doctest::Approx(pairwise_auc(y, s)).epsilon(1e-12));
  }
}

TEST_CASE("regression metrics") {
  const std::vector<double> y{1, 2, 3, 6};
  const std::vector<double> mean(4, 3.0);
  CHECK(*reg_metrics(y, mean).r2 == doctest::Approx(0.0));
  const auto id = reg_metrics(y, y);
  CHECK(*id.r2 == 1.0);
  CHECK(id.mae == 0.0);
  const std::vector<double> y3{0, 2, 4}, p3{0, 1, 5};
  const auto m = reg_metrics(y3, p3);
  CHECK(*m.mape_pos == doctest::Approx(37.5));
  CHECK(m.n_pos == 2);
  CHECK(m.r2_unstable);
  CHECK(m.mae == doctest::Approx(2.0 / 3.0));
  CHECK(m.rmse == doctest::Approx(std::sqrt(2.0 / 3.0)));
  const std::vector<double> flat{5, 5, 5};
  CHECK(!reg_metrics(flat, p3).r2);
}

TEST_CASE("R2 decomposition worked examples") {
  const std::vector<double> y{0, 0, 10, 20};
  const std::vector<double> y_cls{0, 0, 1, 1};
  {
    const std::vector<double> pred{0, 0, 12, 18};
    CHECK(*decompose_r2(y, pred, y_cls, y_cls).two_stage_gain == 0.0);
  }
  const std::vector<double> pred{2, 2, 12, 18};
  const std::vector<double> cls{0, 1, 1, 1};
  const auto d = decompose_r2(y, pred, cls, y_cls);
  // SS_tot = 275; residual sums 16, 12 and 8.
  CHECK(*d.single_r2 == doctest::Approx(1.0 - 16.0 / 275.0).epsilon(1e-12));
  CHECK(*d.two_stage_gain == doctest::Approx(4.0 / 275.0).epsilon(1e-12));
  CHECK(*d.oracle_gain == doctest::Approx(8.0 / 275.0).epsilon(1e-12));
  CHECK(std::abs(*d.single_r2 - 0.9418) < 1e-4);

  const auto same = decompose_r2(y, pred, y_cls, y_cls);
  CHECK(*same.two_stage_gain == *same.oracle_gain);

  const std::vector<double> mean_pos{0, 0, 15, 15};
  CHECK(*decompose_r2(y, mean_pos, y_cls, y_cls).pos_r2 == 0.0);
}

TEST_CASE("medians and fold aggregation") {
  const std::vector<double> three{0.7, 0.5, 0.6}, two{0.4, 0.6}, one{0.3};
  CHECK(median(three) == 0.6);
  CHECK(median(two) == 0.5);
  CHECK(median(one) == 0.3);
  CHECK_THROWS(median(std::span<const double>{}));

  std::vector<EvalRecord> r{rec("A", 2020, "C0", "mlp", 0, 0.5), rec("A", 2020, "C0", "mlp", 1, 0.6),
                            rec("A", 2020, "C0", "mlp", 2, 0.7), rec("B", 2020, "C0", "mlp", 0, 0.4)};
  const auto fm = fold_median(r, Metric::f1);
  REQUIRE(fm.size() == 2);
  CHECK(fm.begin()->second.median == doctest::Approx(0.6));
  CHECK(fm.begin()->second.folds == 3);
  CHECK(std::next(fm.begin())->second.median == 0.4);
}

TEST_CASE("model ranking") {
  const std::vector<std::string> models{"A", "B"};
  std::vector<std::vector<double>> dominant(10, {0.9, 0.1});
  auto r = rank_models(models, dominant);
  CHECK(r.avg_rank == std::vector<double>{1.0, 2.0});
  CHECK(r.wins == std::vector<int>{10, 0});

  std::vector<std::vector<double>> tied(10, {0.5, 0.5});
  r = rank_models(models, tied);
  CHECK(r.avg_rank == std::vector<double>{1.5, 1.5});
  CHECK(r.wins == std::vector<int>{10, 10});

  const std::vector<std::string> three{"A", "B", "C"};
  std::vector<std::vector<double>> cyclic{{3, 2, 1}, {1, 3, 2}, {2, 1, 3}};
  r = rank_models(three, cyclic);
  CHECK(r.wins == std::vector<int>{1, 1, 1});
  CHECK(r.avg_rank == std::vector<double>{2.0, 2.0, 2.0});

  std::vector<std::vector<double>> errors(4, {1.0, 2.0});
  CHECK(rank_models(models, errors, false).wins == std::vector<int>{4, 0});
}

TEST_CASE("marginal gains") {
  std::vector<EvalRecord> r;
  for (int fold = 0; fold < 3; ++fold) {
    r.push_back(rec("PAK", 2020, "C0", "mlp", fold, 0.759));
    r.push_back(rec("PAK", 2020, "C5", "mlp", fold, 0.794));
    r.push_back(rec("PAK", 2020, "C1", "mlp", fold, 0.759));
    r.push_back(rec("EGY", 2020, "C0", "mlp", fold, 0, -1.582));
    r.push_back(rec("EGY", 2020, "C2", "mlp", fold, 0, 0.362));
  }
  r.push_back(rec("HTI", 2020, "C3", "mlp", 0, 0.5));
  const auto g = marginal_gain(r);
  CHECK(g.unmatched == 1);
  int seen = 0;
  for (const auto& m : g.gains) {
    if (m.key.city == "PAK" && m.key.combo == "C5") {
      CHECK(format_value(*m.d_f1, 3) == "0.035");
      ++seen;
    }
    if (m.key.city == "PAK" && m.key.combo == "C1") {
      CHECK(*m.d_f1 == 0.0);
      CHECK(*m.d_iou == 0.0);
      ++seen;
    }
    if (m.key.city == "EGY") {
      CHECK(format_value(*m.d_r2, 3) == "1.944");
      ++seen;
    }
  }
  CHECK(seen == 3);
}

TEST_CASE("usability gate") {
  CHECK(usability_gate(0.794, 0.576) == Usability::both);
  CHECK(usability_gate(0.470, 0.346) == Usability::reg_only);
  CHECK(usability_gate(0.156, -0.002) == Usability::neither);
  CHECK(usability_gate(0.5, 0.299) == Usability::cls_only);
  CHECK(usability_gate(0.5, 0.3) == Usability::both);
  CHECK(usability_name(Usability::reg_only) == "reg-only");
}

TEST_CASE("Wilcoxon exact mode equals sign enumeration") {
  const std::vector<double> a5{1, 2, 3, 4, 5}, b5(5, 0.0);
  const auto w = wilcoxon_signed_rank(a5, b5);
  CHECK(w.exact);
  CHECK(w.p_value == 0.0625);
  CHECK(w.statistic == 0.0);
  CHECK(wilcoxon_signed_rank(a5, a5).p_value == 1.0);

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 12);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(uniform_index(rng, 7));  // coarse values force ties and zeros
      b[i] = static_cast<double>(uniform_index(rng, 7));
    }
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.p_value == doctest::Approx(oracle::enumeration_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("Wilcoxon normal approximation tracks enumeration at n = 20") {
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> a(20), b(20, 0.0);
    for (auto& v : a) v = standard_normal(rng) + 0.3;
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(!r.exact);
    CHECK(std::abs(r.p_value - oracle::enumeration_p(a, b)) <= 0.02);
  }
}

TEST_CASE("records serialize") {
  EvalRecord r = rec("PAK", 2022, "C0", "mlp", 3, 0.75);
  r.seed = 42;
  r.provenance = "abc:def";
  const EvalRecord back = record_from_json(record_to_json(r));
  CHECK(record_to_json(back) == record_to_json(r));
  const std::vector<EvalRecord> list{r};
  const auto nested = records_to_json(list);
  CHECK(nested.at("records").at("PAK").at("S1").size() == 1);
  std::ostringstream os;
  write_records_csv(os, list);
  CHECK(os.str().find("abc:def") != std::string::npos);
  CHECK(format_value(0.1234567) == "0.123457");
  CHECK(format_optional(std::nullopt) == "");
}
