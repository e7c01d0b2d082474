#include "slumeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace slumeval {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": inputs differ in length");
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> auc_roc(std::span<const double> y, std::span<const double> score) {
  require_same_length(y.size(), score.size(), "auc_roc");
  const auto ranks = average_ranks(score);
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) {
      n_pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double n_neg = static_cast<double>(y.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

ClsMetrics cls_metrics(std::span<const double> y, std::span<const double> proba, double threshold) {
  require_same_length(y.size(), proba.size(), "cls_metrics");
  if (y.empty()) throw std::invalid_argument("cls_metrics: empty input");
  ClsMetrics m;
  m.threshold = threshold;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool truth = y[i] == 1.0;
    const bool pred = proba[i] >= threshold;
    if (truth && pred) ++m.tp;
    else if (pred) ++m.fp;
    else if (truth) ++m.fn;
    else ++m.tn;
  }
  const auto tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp), fn = static_cast<double>(m.fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  m.iou = ratio(tp, tp + fp + fn);
  m.accuracy = (tp + static_cast<double>(m.tn)) / static_cast<double>(y.size());
  m.auc_roc = auc_roc(y, proba);
  return m;
}

std::optional<double> r_squared(std::span<const double> y, std::span<const double> pred) {
  require_same_length(y.size(), pred.size(), "r_squared");
  if (y.empty()) return std::nullopt;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - pred[i]) * (y[i] - pred[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

RegMetrics reg_metrics(std::span<const double> y, std::span<const double> pred) {
  require_same_length(y.size(), pred.size(), "reg_metrics");
  if (y.size() < 2) throw std::invalid_argument("reg_metrics: need at least 2 rows");
  RegMetrics m;
  m.r2 = r_squared(y, pred);
  double abs_sum = 0.0, sq_sum = 0.0, ape = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = pred[i] - y[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    if (y[i] > 0.0) {
      ++m.n_pos;
      ape += std::abs(e) / y[i];
    }
  }
  const auto n = static_cast<double>(y.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (m.n_pos > 0) m.mape_pos = 100.0 * ape / static_cast<double>(m.n_pos);
  m.r2_unstable = m.n_pos < kStableMinPositives;
  return m;
}

Decomposition decompose_r2(std::span<const double> y, std::span<const double> reg_pred,
                           std::span<const double> cls_pred, std::span<const double> y_cls) {
  require_same_length(y.size(), reg_pred.size(), "decompose_r2");
  require_same_length(y.size(), cls_pred.size(), "decompose_r2");
  require_same_length(y.size(), y_cls.size(), "decompose_r2");
  Decomposition d;
  d.single_r2 = r_squared(y, reg_pred);

  std::vector<double> gated(reg_pred.begin(), reg_pred.end());
  std::vector<double> oracle(reg_pred.begin(), reg_pred.end());
  std::vector<double> y_pos, pred_pos;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (cls_pred[i] == 0.0) gated[i] = 0.0;
    if (y_cls[i] == 0.0) oracle[i] = 0.0;
    if (y[i] > 0.0) {
      y_pos.push_back(y[i]);
      pred_pos.push_back(reg_pred[i]);
    }
  }
  if (d.single_r2) {
    d.two_stage_gain = *r_squared(y, gated) - *d.single_r2;
    d.oracle_gain = *r_squared(y, oracle) - *d.single_r2;
  }
  if (y_pos.size() >= 2) d.pos_r2 = r_squared(y_pos, pred_pos);
  return d;
}

double median(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t m = s.size() / 2;
  return s.size() % 2 == 1 ? s[m] : 0.5 * (s[m - 1] + s[m]);
}

double stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// ---- records ----------------------------------------------------------------

namespace {

constexpr std::pair<Metric, std::string_view> kMetricNames[] = {
    {Metric::f1, "f1"},
    {Metric::iou, "iou"},
    {Metric::precision, "precision"},
    {Metric::recall, "recall"},
    {Metric::accuracy, "accuracy"},
    {Metric::auc_roc, "auc_roc"},
    {Metric::r2, "r2"},
    {Metric::mae, "mae"},
    {Metric::rmse, "rmse"},
    {Metric::mape_pos, "mape_pos"},
    {Metric::single_r2, "single_r2"},
    {Metric::two_stage_gain, "two_stage_gain"},
    {Metric::oracle_gain, "oracle_gain"},
    {Metric::pos_r2, "pos_r2"},
};

}  // namespace

std::string_view metric_name(Metric m) {
  for (const auto& [k, name] : kMetricNames) {
    if (k == m) return name;
  }
  return "?";
}

Metric parse_metric(std::string_view s) {
  for (const auto& [k, name] : kMetricNames) {
    if (name == s) return k;
  }
  throw std::invalid_argument("unknown metric '" + std::string(s) + "'");
}

bool higher_is_better(Metric m) { return m != Metric::mae && m != Metric::rmse && m != Metric::mape_pos; }

std::optional<double> metric_value(const EvalRecord& r, Metric m) {
  switch (m) {
    case Metric::f1: return r.cls ? std::optional(r.cls->f1) : std::nullopt;
    case Metric::iou: return r.cls ? std::optional(r.cls->iou) : std::nullopt;
    case Metric::precision: return r.cls ? std::optional(r.cls->precision) : std::nullopt;
    case Metric::recall: return r.cls ? std::optional(r.cls->recall) : std::nullopt;
    case Metric::accuracy: return r.cls ? std::optional(r.cls->accuracy) : std::nullopt;
    case Metric::auc_roc: return r.cls ? r.cls->auc_roc : std::nullopt;
    case Metric::r2: return r.reg ? r.reg->r2 : std::nullopt;
    case Metric::mae: return r.reg ? std::optional(r.reg->mae) : std::nullopt;
    case Metric::rmse: return r.reg ? std::optional(r.reg->rmse) : std::nullopt;
    case Metric::mape_pos: return r.reg ? r.reg->mape_pos : std::nullopt;
    case Metric::single_r2: return r.decomp ? r.decomp->single_r2 : std::nullopt;
    case Metric::two_stage_gain: return r.decomp ? r.decomp->two_stage_gain : std::nullopt;
    case Metric::oracle_gain: return r.decomp ? r.decomp->oracle_gain : std::nullopt;
    case Metric::pos_r2: return r.decomp ? r.decomp->pos_r2 : std::nullopt;
  }
  return std::nullopt;
}

std::string format_value(double v, int decimals) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  // Avoid "-0.000000".
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string format_optional(const std::optional<double>& v, int decimals) {
  return v ? format_value(*v, decimals) : std::string();
}

void write_records_csv(std::ostream& os, std::span<const EvalRecord> records) {
  os << "schema,city,year,strategy,combo,model,protocol,fold,seed,task,n_train,n_test,threshold,"
        "f1,iou,precision,recall,accuracy,auc_roc,r2,r2_unstable,mae,rmse,mape_pos,"
        "single_r2,two_stage_gain,oracle_gain,pos_r2,provenance\n";
  for (const auto& r : records) {
    os << kRecordSchemaVersion << ',' << r.city << ',' << r.year << ',' << r.strategy << ',' << r.combo << ','
       << r.model << ',' << r.protocol << ',' << r.fold << ',' << r.seed << ',' << r.task << ',' << r.n_train << ','
       << r.n_test << ',';
    if (r.cls) {
      const auto& c = *r.cls;
      os << format_value(c.threshold) << ',' << format_value(c.f1) << ',' << format_value(c.iou) << ','
         << format_value(c.precision) << ',' << format_value(c.recall) << ',' << format_value(c.accuracy) << ','
         << format_optional(c.auc_roc) << ',';
    } else {
      os << ",,,,,,,";
    }
    if (r.reg) {
      const auto& g = *r.reg;
      os << format_optional(g.r2) << ',' << (g.r2_unstable ? 1 : 0) << ',' << format_value(g.mae) << ','
         << format_value(g.rmse) << ',' << format_optional(g.mape_pos) << ',';
    } else {
      os << ",,,,,";
    }
    if (r.decomp) {
      const auto& d = *r.decomp;
      os << format_optional(d.single_r2) << ',' << format_optional(d.two_stage_gain) << ','
         << format_optional(d.oracle_gain) << ',' << format_optional(d.pos_r2);
    } else {
      os << ",,,";
    }
    os << ',' << r.provenance << '\n';
  }
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::json record_to_json(const EvalRecord& r) {
  nlohmann::json j = {{"city", r.city},         {"year", r.year},       {"strategy", r.strategy},
                      {"combo", r.combo},       {"model", r.model},     {"protocol", r.protocol},
                      {"fold", r.fold},         {"seed", r.seed},       {"task", r.task},
                      {"n_train", r.n_train},   {"n_test", r.n_test}};
  if (!r.provenance.empty()) j["provenance"] = r.provenance;
  if (r.cls) {
    const auto& c = *r.cls;
    j["cls"] = {{"f1", c.f1},         {"iou", c.iou}, {"precision", c.precision}, {"recall", c.recall},
                {"accuracy", c.accuracy}, {"auc_roc", optional_json(c.auc_roc)}, {"tp", c.tp}, {"fp", c.fp},
                {"fn", c.fn},         {"tn", c.tn},   {"threshold", c.threshold}};
  }
  if (r.reg) {
    const auto& g = *r.reg;
    j["reg"] = {{"r2", optional_json(g.r2)}, {"r2_unstable", g.r2_unstable}, {"mae", g.mae},
                {"rmse", g.rmse},            {"mape_pos", optional_json(g.mape_pos)}, {"n_pos", g.n_pos}};
  }
  if (r.decomp) {
    const auto& d = *r.decomp;
    j["decomposition"] = {{"single_r2", optional_json(d.single_r2)},
                          {"two_stage_gain", optional_json(d.two_stage_gain)},
                          {"oracle_gain", optional_json(d.oracle_gain)},
                          {"pos_r2", optional_json(d.pos_r2)}};
  }
  return j;
}

EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.city = j.at("city").get<std::string>();
  r.year = j.at("year").get<int>();
  r.strategy = j.at("strategy").get<std::string>();
  r.combo = j.at("combo").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.protocol = j.at("protocol").get<std::string>();
  r.fold = j.at("fold").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.task = j.at("task").get<std::string>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.provenance = j.value("provenance", std::string());
  if (j.contains("cls")) {
    const auto& c = j.at("cls");
    ClsMetrics m;
    m.f1 = c.at("f1").get<double>();
    m.iou = c.at("iou").get<double>();
    m.precision = c.at("precision").get<double>();
    m.recall = c.at("recall").get<double>();
    m.accuracy = c.at("accuracy").get<double>();
    m.auc_roc = optional_from(c, "auc_roc");
    m.tp = c.at("tp").get<std::size_t>();
    m.fp = c.at("fp").get<std::size_t>();
    m.fn = c.at("fn").get<std::size_t>();
    m.tn = c.at("tn").get<std::size_t>();
    m.threshold = c.at("threshold").get<double>();
    r.cls = m;
  }
  if (j.contains("reg")) {
    const auto& g = j.at("reg");
    RegMetrics m;
    m.r2 = optional_from(g, "r2");
    m.r2_unstable = g.at("r2_unstable").get<bool>();
    m.mae = g.at("mae").get<double>();
    m.rmse = g.at("rmse").get<double>();
    m.mape_pos = optional_from(g, "mape_pos");
    m.n_pos = g.at("n_pos").get<std::size_t>();
    r.reg = m;
  }
  if (j.contains("decomposition")) {
    const auto& d = j.at("decomposition");
    r.decomp = Decomposition{optional_from(d, "single_r2"), optional_from(d, "two_stage_gain"),
                             optional_from(d, "oracle_gain"), optional_from(d, "pos_r2")};
  }
  return r;
}

nlohmann::json records_to_json(std::span<const EvalRecord> records) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& r : records) {
    auto& list = out[r.city][r.strategy];
    if (list.is_null()) list = nlohmann::json::array();
    list.push_back(record_to_json(r));
  }
  return {{"schema", kRecordSchemaVersion}, {"records", out}};
}

// ---- aggregation ------------------------------------------------------------

SampleKey sample_key(const EvalRecord& r) {
  return {r.city, r.year, r.strategy, r.combo, r.model, r.protocol, r.task};
}

std::map<SampleKey, FoldSummary> fold_median(std::span<const EvalRecord> records, Metric m) {
  std::map<SampleKey, std::vector<double>> values;
  for (const auto& r : records) {
    if (auto v = metric_value(r, m)) values[sample_key(r)].push_back(*v);
  }
  std::map<SampleKey, FoldSummary> out;
  for (const auto& [k, v] : values) out[k] = {median(v), stddev(v), v.size()};
  return out;
}

Ranking rank_models(std::span<const std::string> models, std::span<const std::vector<double>> scores,
                    bool higher_better) {
  if (models.size() < 2) throw std::invalid_argument("rank_models: need at least 2 models");
  Ranking out;
  out.models.assign(models.begin(), models.end());
  out.avg_rank.assign(models.size(), 0.0);
  out.wins.assign(models.size(), 0);
  for (const auto& row : scores) {
    if (row.size() != models.size()) throw std::invalid_argument("rank_models: ragged score table");
    std::vector<double> key(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) key[k] = higher_better ? -row[k] : row[k];
    const auto ranks = average_ranks(key);
    const double best = *std::min_element(key.begin(), key.end());
    for (std::size_t k = 0; k < row.size(); ++k) {
      out.avg_rank[k] += ranks[k];
      if (key[k] == best) ++out.wins[k];
    }
    ++out.samples;
  }
  if (out.samples > 0) {
    for (auto& r : out.avg_rank) r /= static_cast<double>(out.samples);
  }
  return out;
}

MarginalGains marginal_gain(std::span<const EvalRecord> records, std::string_view baseline) {
  using FoldKey = std::tuple<std::string, int, std::string, std::string, std::string, std::string, int, std::uint64_t>;
  auto fold_key = [](const EvalRecord& r) {
    return FoldKey{r.city, r.year, r.strategy, r.model, r.protocol, r.task, r.fold, r.seed};
  };
  std::map<FoldKey, const EvalRecord*> base;
  for (const auto& r : records) {
    if (r.combo == baseline) base[fold_key(r)] = &r;
  }

  struct Acc {
    std::vector<double> f1, iou, r2;
  };
  std::map<SampleKey, Acc> acc;
  MarginalGains out;
  for (const auto& r : records) {
    if (r.combo == baseline) continue;
    const auto it = base.find(fold_key(r));
    if (it == base.end()) {
      ++out.unmatched;
      continue;
    }
    const EvalRecord& b = *it->second;
    Acc& a = acc[sample_key(r)];
    if (r.cls && b.cls) {
      a.f1.push_back(r.cls->f1 - b.cls->f1);
      a.iou.push_back(r.cls->iou - b.cls->iou);
    }
    if (r.reg && b.reg && r.reg->r2 && b.reg->r2) a.r2.push_back(*r.reg->r2 - *b.reg->r2);
  }
  for (const auto& [k, a] : acc) {
    MarginalGain g{k, {}, {}, {}};
    if (!a.f1.empty()) g.d_f1 = median(a.f1);
    if (!a.iou.empty()) g.d_iou = median(a.iou);
    if (!a.r2.empty()) g.d_r2 = median(a.r2);
    out.gains.push_back(std::move(g));
  }
  return out;
}

std::string_view usability_name(Usability u) {
  switch (u) {
    case Usability::both: return "both";
    case Usability::cls_only: return "cls-only";
    case Usability::reg_only: return "reg-only";
    case Usability::neither: return "neither";
  }
  return "?";
}

Usability usability_gate(double f1, double r2) {
  const bool c = f1 >= kUsableF1;
  const bool g = r2 >= kUsableR2;
  if (c && g) return Usability::both;
  if (c) return Usability::cls_only;
  if (g) return Usability::reg_only;
  return Usability::neither;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "wilcoxon_signed_rank");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) diff.push_back(a[i] - b[i]);
  }
  WilcoxonResult res;
  res.n = diff.size();
  if (diff.empty()) return res;

  std::vector<double> mag(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) mag[i] = std::abs(diff[i]);
  const auto ranks = average_ranks(mag);
  double w_plus = 0.0, w_total = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    w_total += ranks[i];
    if (diff[i] > 0) w_plus += ranks[i];
  }
  const double w_minus = w_total - w_plus;
  res.statistic = std::min(w_plus, w_minus);
  const auto n = static_cast<double>(res.n);

  if (res.n <= kWilcoxonExactMax) {
    res.exact = true;
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    std::vector<int> r2(ranks.size());
    int total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (int r : r2) {
      for (int s = total; s >= r; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
    }
    const int t = static_cast<int>(std::lround(2.0 * w_plus));
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= t) lower += count[static_cast<std::size_t>(s)];
      if (s >= t) upper += count[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(res.n));
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return res;
  }

  double tie_term = 0.0;
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto tcount = static_cast<double>(j - i);
    tie_term += tcount * tcount * tcount - tcount;
    i = j;
  }
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return res;
  const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

}  // namespace slumeval
