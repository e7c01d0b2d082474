#include <doctest.h>

#include <cmath>
#include <sstream>

#include "slumeval/metrics.hpp"
#include "slumeval/models.hpp"
#include "slumeval/random.hpp"

using namespace slumeval;

namespace {

struct Data {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Data xor_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Data d{Eigen::MatrixXd(n, 2), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    d.x(i, 0) = 2.0 * uniform01(rng) - 1.0;
    d.x(i, 1) = 2.0 * uniform01(rng) - 1.0;
    d.y[i] = (d.x(i, 0) > 0) == (d.x(i, 1) > 0) ? 1.0 : 0.0;
  }
  return d;
}

Data linear_data(std::size_t n, std::uint64_t seed, bool cls) {
  Rng rng(seed);
  const Eigen::Vector4d w(3.0, -2.0, 0.5, 1.5);
  Data d{Eigen::MatrixXd(n, 4), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    double s = 0.0;
    do {
      for (Eigen::Index j = 0; j < 4; ++j) d.x(i, j) = standard_normal(rng);
      s = d.x.row(i).dot(w);
    } while (cls && std::abs(s) < 0.25 * w.norm());
    d.y[i] = cls ? (s > 0 ? 1.0 : 0.0) : 40.0 + 10.0 * s;
  }
  return d;
}

ModelSpec quick_spec(Family f, Task t, std::uint64_t seed = 3) {
  ModelSpec s;
  s.family = f;
  s.task = t;
  s.seed = seed;
  s.gbt.max_iter = 60;
  s.forest.n_estimators = 40;
  s.mlp.hidden = {32, 16};
  s.mlp.max_epochs = 80;
  s.mlp.batch_size = 128;
  return s;
}

double f1_of(const TrainedModel& m, const Data& d) {
  const Eigen::VectorXd p = m.predict_proba(d.x);
  return cls_metrics(as_span(d.y), as_span(p)).f1;
}

}  // namespace

TEST_CASE("names and spec json") {
  for (Family f : {Family::linear, Family::hist_gbt, Family::random_forest, Family::mlp}) {
    CHECK(parse_family(family_name(f)) == f);
  }
  CHECK(parse_task("reg") == Task::reg);
  CHECK_THROWS(parse_family("svm"));

  const ModelSpec d;
  CHECK(d.linear.c == 1.0);
  CHECK(d.linear.alpha == 1.0);
  CHECK(d.linear.max_iter == 1000);
  CHECK(d.gbt.max_depth == 6);
  CHECK(d.gbt.max_iter == 200);
  CHECK(d.gbt.learning_rate == 0.1);
  CHECK(d.gbt.huber_delta == 10.0);
  CHECK(d.forest.n_estimators == 200);
  CHECK(d.forest.max_depth == 12);
  CHECK(d.forest.min_samples_leaf == 5);
  CHECK(d.mlp.hidden == std::vector<int>{512, 256, 128, 64});
  CHECK(d.mlp.patience == 20);
  CHECK(d.mlp.learning_rate == 1e-3);

  ModelSpec s = quick_spec(Family::mlp, Task::reg, 9);
  const ModelSpec back = spec_from_json(spec_to_json(s));
  CHECK(spec_to_json(back) == spec_to_json(s));
  const ModelSpec patched = spec_from_json({{"hist_gbt", {{"max_iter", 5}}}});
  CHECK(patched.gbt.max_iter == 5);
  CHECK(patched.gbt.max_depth == 6);
}

TEST_CASE("ridge recovers noiseless linear data") {
  const Data tr = linear_data(800, 1, false), te = linear_data(300, 2, false);
  const auto m = train(quick_spec(Family::linear, Task::reg), tr.x, tr.y);
  const Eigen::VectorXd p = m->predict_density(te.x);
  CHECK(*r_squared(as_span(te.y), as_span(p)) >= 0.999);
}

TEST_CASE("linear classifier separates separable data") {
  const Data tr = linear_data(800, 3, true), te = linear_data(300, 4, true);
  const auto m = train(quick_spec(Family::linear, Task::cls), tr.x, tr.y);
  CHECK(f1_of(*m, te) >= 0.99);
  const Eigen::VectorXd p = m->predict_proba(tr.x);
  CHECK(*auc_roc(as_span(tr.y), as_span(p)) == 1.0);
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);
}

TEST_CASE("trees solve XOR where the linear model cannot") {
  const Data tr = xor_data(1500, 5), te = xor_data(600, 6);
  CHECK(f1_of(*train(quick_spec(Family::linear, Task::cls), tr.x, tr.y), te) <= 0.7);
  CHECK(f1_of(*train(quick_spec(Family::random_forest, Task::cls), tr.x, tr.y), te) >= 0.9);
  CHECK(f1_of(*train(quick_spec(Family::hist_gbt, Task::cls), tr.x, tr.y), te) >= 0.9);
}

TEST_CASE("tree ensembles are invariant under monotone feature transforms") {
  const Data tr = xor_data(600, 7), te = xor_data(200, 8);
  const Eigen::MatrixXd tr3 = tr.x.array().cube().matrix();
  const Eigen::MatrixXd te3 = te.x.array().cube().matrix();
  const Eigen::VectorXd yreg = (tr.x.col(0).array() * 50.0 + 100.0 * tr.y.array()).matrix();
  for (Family f : {Family::random_forest, Family::hist_gbt}) {
    CAPTURE(family_name(f));
    const auto a = train(quick_spec(f, Task::cls), tr.x, tr.y);
    const auto b = train(quick_spec(f, Task::cls), tr3, tr.y);
    CHECK(a->predict_proba(te.x) == b->predict_proba(te3));
    const auto c = train(quick_spec(f, Task::reg), tr.x, yreg);
    const auto d = train(quick_spec(f, Task::reg), tr3, yreg);
    CHECK(c->predict_density(te.x) == d->predict_density(te3));
  }
}

TEST_CASE("same-seed retraining reproduces predictions") {
  const Data tr = xor_data(400, 9), te = xor_data(100, 10);
  for (Family f : {Family::linear, Family::hist_gbt, Family::random_forest}) {
    CAPTURE(family_name(f));
    CHECK(train(quick_spec(f, Task::cls), tr.x, tr.y)->predict_proba(te.x) ==
          train(quick_spec(f, Task::cls), tr.x, tr.y)->predict_proba(te.x));
  }
  const Eigen::VectorXd a = train(quick_spec(Family::mlp, Task::cls), tr.x, tr.y)->predict_proba(te.x);
  const Eigen::VectorXd b = train(quick_spec(Family::mlp, Task::cls), tr.x, tr.y)->predict_proba(te.x);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6);
  const Eigen::VectorXd c = train(quick_spec(Family::random_forest, Task::cls, 4), tr.x, tr.y)->predict_proba(te.x);
  CHECK(c != train(quick_spec(Family::random_forest, Task::cls), tr.x, tr.y)->predict_proba(te.x));
}

TEST_CASE("constant targets and uninformative features") {
  const Data tr = linear_data(200, 11, false);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(tr.x.rows(), 100.0);
  const Eigen::VectorXd p = train(quick_spec(Family::linear, Task::reg), tr.x, y)->predict_density(tr.x);
  CHECK((p.array() - 100.0).abs().maxCoeff() <= 1e-6);

  Rng rng(12);
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(400, 3);
  Eigen::VectorXd yc(400);
  for (Eigen::Index i = 0; i < 400; ++i) yc[i] = uniform01(rng) < 0.25 ? 1.0 : 0.0;
  const double prior = yc.mean();
  for (Family f : {Family::linear, Family::hist_gbt, Family::random_forest}) {
    CAPTURE(family_name(f));
    const Eigen::VectorXd q = train(quick_spec(f, Task::cls), x, yc)->predict_proba(x);
    CHECK(std::abs(q[0] - prior) < 0.02);
  }
}

TEST_CASE("threshold rule") {
  const std::vector<double> y{0, 1}, proba{0.4, 0.6};
  const auto m = cls_metrics(y, proba, 0.5);
  CHECK(m.tp == 1);
  CHECK(m.tn == 1);
}

TEST_CASE("huber loss") {
  for (double r : {-10.0, -3.5, 0.0, 2.0, 10.0}) CHECK(huber_loss(r, 10.0) == doctest::Approx(0.5 * r * r));
  CHECK(huber_loss(20.0, 10.0) == doctest::Approx(10.0 * (20.0 - 5.0)));
  CHECK(huber_loss(-20.0, 10.0) == huber_loss(20.0, 10.0));
}

TEST_CASE("training and prediction errors") {
  const Data tr = linear_data(50, 13, true);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(tr.x.rows());
  for (Family f : {Family::linear, Family::hist_gbt, Family::random_forest, Family::mlp}) {
    CAPTURE(family_name(f));
    CHECK_THROWS(train(quick_spec(f, Task::cls), tr.x, ones));
    Eigen::MatrixXd bad = tr.x;
    bad(3, 1) = std::nan("");
    CHECK_THROWS(train(quick_spec(f, Task::cls), bad, tr.y));
    CHECK_THROWS(train(quick_spec(f, Task::cls), tr.x.topRows(1), tr.y.head(1)));
  }
  const auto m = train(quick_spec(Family::linear, Task::cls), tr.x, tr.y);
  CHECK_THROWS(m->predict_proba(tr.x.leftCols(3)));
  CHECK_THROWS(m->predict_density(tr.x));
  const auto r = train(quick_spec(Family::linear, Task::reg), tr.x, tr.y);
  CHECK_THROWS(r->predict_proba(tr.x));
}

TEST_CASE("model blobs round trip") {
  const Data tr = xor_data(300, 14), te = xor_data(80, 15);
  const Eigen::VectorXd yreg = tr.y * 120.0;
  for (Family f : {Family::linear, Family::hist_gbt, Family::random_forest, Family::mlp}) {
    for (Task t : {Task::cls, Task::reg}) {
      CAPTURE(family_name(f));
      CAPTURE(task_name(t));
      const auto m = train(quick_spec(f, t), tr.x, t == Task::cls ? tr.y : yreg);
      std::stringstream ss;
      m->save(ss);
      const auto back = load_model(ss);
      CHECK(back->family() == f);
      CHECK(back->task() == t);
      CHECK(back->score(te.x) == m->score(te.x));
    }
  }
  std::stringstream junk("not a model");
  CHECK_THROWS(load_model(junk));
}

TEST_CASE("mlp positive weighting raises recall on imbalanced data") {
  Rng rng(16);
  const Eigen::Index n = 2100;
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = i % 21 == 0 ? 1.0 : 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = standard_normal(rng) + (y[i] > 0 ? 1.0 : 0.0);
  }
  ModelSpec s = quick_spec(Family::mlp, Task::cls);
  s.mlp.max_epochs = 30;
  s.mlp.patience = 1000;
  const double weighted = cls_metrics(as_span(y), as_span(train(s, x, y)->predict_proba(x))).recall;
  s.mlp.pos_weight = false;
  const double plain = cls_metrics(as_span(y), as_span(train(s, x, y)->predict_proba(x))).recall;
  CHECK(weighted > plain);
}
