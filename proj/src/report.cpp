#include "slumeval/report.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "slumeval/features.hpp"

namespace slumeval {

namespace fs = std::filesystem;

namespace {

struct Config {
  std::string strategy, combo, model, protocol, task;
  auto operator<=>(const Config&) const = default;
};

Config config_of(const SampleKey& k) { return {k.strategy, k.combo, k.model, k.protocol, k.task}; }

Metric headline(const std::string& task) { return task == "cls" ? Metric::f1 : Metric::r2; }

bool in_view(const SampleKey& k, const ReportView& v) {
  return k.strategy == v.strategy && k.model == v.model && k.protocol == v.protocol;
}

std::optional<double> median_of(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  return median(v);
}

/// city -> year -> fold median of `m` over `task` records of one combo in the view.
std::map<std::string, std::map<int, double>> city_year_values(std::span<const EvalRecord> records,
                                                              const ReportView& view, const std::string& combo,
                                                              const std::string& task, Metric m) {
  std::map<std::string, std::map<int, double>> out;
  for (const auto& [k, s] : fold_median(records, m)) {
    if (k.task != task || !in_view(k, view) || k.combo != combo) continue;
    out[k.city][k.year] = s.median;
  }
  return out;
}

std::optional<double> city_median(const std::map<std::string, std::map<int, double>>& values, const std::string& city) {
  const auto it = values.find(city);
  if (it == values.end()) return std::nullopt;
  std::vector<double> v;
  for (const auto& [y, x] : it->second) v.push_back(x);
  return median_of(v);
}

std::optional<double> diff(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
}

double rounded(double v) { return std::stod(format_value(v)); }

}  // namespace

ReportView resolve_view(std::span<const EvalRecord> records, const ReportSettings& s) {
  ReportView v;
  auto first = [&](auto field) -> std::string {
    return records.empty() ? std::string() : records.front().*field;
  };
  auto has = [&](auto field, const std::string& value) {
    return std::any_of(records.begin(), records.end(), [&](const EvalRecord& r) { return r.*field == value; });
  };
  v.strategy = s.strategy.value_or(first(&EvalRecord::strategy));
  v.model = s.model.value_or(has(&EvalRecord::model, "mlp") ? "mlp" : first(&EvalRecord::model));
  v.protocol = s.protocol.value_or(has(&EvalRecord::protocol, "spatial") ? "spatial" : first(&EvalRecord::protocol));
  v.combo = s.combo.value_or(first(&EvalRecord::combo));
  return v;
}

// ---- decomposition -------------------------------------------------------------

std::vector<DecompositionRow> decomposition_rows(std::span<const EvalRecord> records, const ReportView& view) {
  const auto f1 = city_year_values(records, view, view.combo, "cls", Metric::f1);
  const auto single = city_year_values(records, view, view.combo, "reg", Metric::single_r2);
  const auto two = city_year_values(records, view, view.combo, "reg", Metric::two_stage_gain);
  const auto oracle = city_year_values(records, view, view.combo, "reg", Metric::oracle_gain);
  const auto pos = city_year_values(records, view, view.combo, "reg", Metric::pos_r2);

  std::map<std::string, std::set<int>> years;
  for (const auto& r : records) {
    if (r.strategy == view.strategy && r.model == view.model && r.protocol == view.protocol && r.combo == view.combo) {
      years[r.city].insert(r.year);
    }
  }
  std::vector<DecompositionRow> rows;
  for (const auto& [city, ys] : years) {
    rows.push_back({city, ys.size(), city_median(f1, city), city_median(single, city), city_median(two, city),
                    city_median(oracle, city), city_median(pos, city)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const DecompositionRow& a, const DecompositionRow& b) {
    const double x = a.single_r2.value_or(-std::numeric_limits<double>::infinity());
    const double y = b.single_r2.value_or(-std::numeric_limits<double>::infinity());
    return x > y;
  });
  return rows;
}

void write_decomposition_csv(std::ostream& os, std::span<const DecompositionRow> rows) {
  os << "city,n_yr,cls_f1,single_r2,two_stage_gain,oracle_gain,pos_r2\n";
  std::vector<double> two, oracle, pos;
  for (const auto& r : rows) {
    os << r.city << ',' << r.n_yr << ',' << format_optional(r.cls_f1) << ',' << format_optional(r.single_r2) << ','
       << format_optional(r.two_stage_gain) << ',' << format_optional(r.oracle_gain) << ','
       << format_optional(r.pos_r2) << '\n';
    if (r.two_stage_gain) two.push_back(*r.two_stage_gain);
    if (r.oracle_gain) oracle.push_back(*r.oracle_gain);
    if (r.pos_r2) pos.push_back(*r.pos_r2);
  }
  if (!rows.empty()) {
    os << "Median,,,," << format_optional(median_of(two)) << ',' << format_optional(median_of(oracle)) << ','
       << format_optional(median_of(pos)) << '\n';
  }
}

// ---- usability -----------------------------------------------------------------

std::vector<UsabilityRow> usability_rows(std::span<const EvalRecord> records, const ReportView& view,
                                         const std::string& baseline) {
  std::set<std::string> combos, cities;
  for (const auto& r : records) {
    if (r.strategy == view.strategy && r.model == view.model && r.protocol == view.protocol) {
      combos.insert(r.combo);
      cities.insert(r.city);
    }
  }
  std::map<std::string, std::map<std::string, std::map<int, double>>> f1, r2;
  for (const auto& c : combos) {
    f1[c] = city_year_values(records, view, c, "cls", Metric::f1);
    r2[c] = city_year_values(records, view, c, "reg", Metric::r2);
  }
  std::vector<UsabilityRow> rows;
  for (const auto& city : cities) {
    UsabilityRow row;
    row.city = city;
    if (combos.contains(baseline)) {
      row.f1_c0 = city_median(f1[baseline], city);
      row.r2_c0 = city_median(r2[baseline], city);
    }
    for (const auto& c : combos) {
      if (c == baseline) continue;
      const auto vf = city_median(f1[c], city);
      if (vf && (!row.f1_best || *vf > *row.f1_best)) {
        row.f1_best = vf;
        row.f1_best_combo = c;
      }
      const auto vr = city_median(r2[c], city);
      if (vr && (!row.r2_best || *vr > *row.r2_best)) {
        row.r2_best = vr;
        row.r2_best_combo = c;
      }
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const UsabilityRow& a, const UsabilityRow& b) {
    return a.f1_c0.value_or(-1.0) > b.f1_c0.value_or(-1.0);
  });
  return rows;
}

Usability row_usability(const UsabilityRow& row) {
  const auto f1 = row.f1_best ? row.f1_best : row.f1_c0;
  const auto r2 = row.r2_best ? row.r2_best : row.r2_c0;
  const double lowest = -std::numeric_limits<double>::infinity();
  return usability_gate(f1.value_or(lowest), r2.value_or(lowest));
}

void write_usability_csv(std::ostream& os, std::span<const UsabilityRow> rows) {
  os << "city,f1_c0,f1_best_combo,f1_best,d_f1,r2_c0,r2_best_combo,r2_best,d_r2,usability\n";
  for (const auto& r : rows) {
    os << r.city << ',' << format_optional(r.f1_c0) << ',' << r.f1_best_combo << ',' << format_optional(r.f1_best)
       << ',' << format_optional(diff(r.f1_best, r.f1_c0)) << ',' << format_optional(r.r2_c0) << ','
       << r.r2_best_combo << ',' << format_optional(r.r2_best) << ',' << format_optional(diff(r.r2_best, r.r2_c0))
       << ',' << usability_name(row_usability(r)) << '\n';
  }
}

// ---- grid-level tables -------------------------------------------------------

void write_strategy_comparison_csv(std::ostream& os, std::span<const EvalRecord> records) {
  os << "strategy,combo,model,protocol,task,metric,samples,median,mean,q25,q75\n";
  std::map<Config, std::vector<double>> groups;
  for (Metric m : {Metric::f1, Metric::r2}) {
    for (const auto& [k, s] : fold_median(records, m)) {
      if (headline(k.task) == m) groups[config_of(k)].push_back(s.median);
    }
  }
  for (auto& [c, v] : groups) {
    std::sort(v.begin(), v.end());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    os << c.strategy << ',' << c.combo << ',' << c.model << ',' << c.protocol << ',' << c.task << ','
       << metric_name(headline(c.task)) << ',' << v.size() << ',' << format_value(median(v)) << ','
       << format_value(mean) << ',' << format_value(quantile_sorted(v, 0.25)) << ','
       << format_value(quantile_sorted(v, 0.75)) << '\n';
  }
}

void write_model_ranking_csv(std::ostream& os, std::span<const EvalRecord> records) {
  os << "strategy,combo,protocol,task,metric,model,avg_rank,wins,samples\n";
  struct Group {
    std::string strategy, combo, protocol, task;
    auto operator<=>(const Group&) const = default;
  };
  // group -> (city, year) -> model -> value
  std::map<Group, std::map<std::pair<std::string, int>, std::map<std::string, double>>> table;
  std::map<Group, std::set<std::string>> models;
  for (Metric m : {Metric::f1, Metric::r2}) {
    for (const auto& [k, s] : fold_median(records, m)) {
      if (headline(k.task) != m) continue;
      const Group g{k.strategy, k.combo, k.protocol, k.task};
      table[g][{k.city, k.year}][k.model] = s.median;
      models[g].insert(k.model);
    }
  }
  for (const auto& [g, samples] : table) {
    const std::vector<std::string> names(models[g].begin(), models[g].end());
    if (names.size() < 2) continue;
    std::vector<std::vector<double>> scores;
    for (const auto& [sample, vals] : samples) {
      if (vals.size() != names.size()) continue;
      std::vector<double> row;
      for (const auto& n : names) row.push_back(vals.at(n));
      scores.push_back(std::move(row));
    }
    if (scores.empty()) continue;
    const Ranking rk = rank_models(names, scores, true);
    for (std::size_t i = 0; i < names.size(); ++i) {
      os << g.strategy << ',' << g.combo << ',' << g.protocol << ',' << g.task << ',' << metric_name(headline(g.task))
         << ',' << names[i] << ',' << format_value(rk.avg_rank[i]) << ',' << rk.wins[i] << ',' << rk.samples << '\n';
    }
  }
}

void write_per_city_csv(std::ostream& os, std::span<const EvalRecord> records) {
  os << "city,year,strategy,combo,model,protocol,task,metric,median,sd,folds\n";
  std::map<std::pair<SampleKey, int>, std::pair<Metric, FoldSummary>> rows;
  const std::vector<std::pair<Metric, const char*>> metrics{
      {Metric::f1, "cls"}, {Metric::iou, "cls"}, {Metric::auc_roc, "cls"}, {Metric::r2, "reg"}, {Metric::mae, "reg"}};
  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    for (const auto& [k, s] : fold_median(records, metrics[mi].first)) {
      if (k.task == metrics[mi].second) rows[{k, static_cast<int>(mi)}] = {metrics[mi].first, s};
    }
  }
  for (const auto& [key, val] : rows) {
    const SampleKey& k = key.first;
    os << k.city << ',' << k.year << ',' << k.strategy << ',' << k.combo << ',' << k.model << ',' << k.protocol << ','
       << k.task << ',' << metric_name(val.first) << ',' << format_value(val.second.median) << ','
       << format_value(val.second.sd) << ',' << val.second.folds << '\n';
  }
}

void write_marginal_gains_csv(std::ostream& os, std::span<const EvalRecord> records, const std::string& baseline) {
  os << "city,year,strategy,combo,model,protocol,task,d_f1,d_iou,d_r2\n";
  for (const auto& g : marginal_gain(records, baseline).gains) {
    const auto& k = g.key;
    os << k.city << ',' << k.year << ',' << k.strategy << ',' << k.combo << ',' << k.model << ',' << k.protocol << ','
       << k.task << ',' << format_optional(g.d_f1) << ',' << format_optional(g.d_iou) << ','
       << format_optional(g.d_r2) << '\n';
  }
}

void write_spatial_validation_csv(std::ostream& os, std::span<const SpatialValidation> rows) {
  os << "city,year,factor,f1,iou,accuracy,ssim_cls,moran_gt,moran_pred,moran_residual,moran_residual_p,"
        "area_pct_err,lisa_hh,lisa_ll,lisa_hl,lisa_lh,lisa_ns\n";
  std::vector<double> f1, iou, acc, ssim, gt, pred, res, area;
  auto push = [](std::vector<double>& v, const std::optional<double>& x) {
    if (x) v.push_back(*x);
  };
  for (const auto& r : rows) {
    os << r.city << ',' << r.year << ',' << r.factor << ',' << format_value(r.f1) << ',' << format_value(r.iou) << ','
       << format_value(r.accuracy) << ',' << format_value(r.ssim_cls) << ',' << format_optional(r.moran_gt) << ','
       << format_optional(r.moran_pred) << ',' << format_optional(r.moran_residual) << ','
       << format_optional(r.moran_residual_p) << ',' << format_value(r.area_pct_err) << ',' << r.lisa_hh << ','
       << r.lisa_ll << ',' << r.lisa_hl << ',' << r.lisa_lh << ',' << r.lisa_ns << '\n';
    f1.push_back(r.f1);
    iou.push_back(r.iou);
    acc.push_back(r.accuracy);
    ssim.push_back(r.ssim_cls);
    push(gt, r.moran_gt);
    push(pred, r.moran_pred);
    push(res, r.moran_residual);
    area.push_back(r.area_pct_err);
  }
  if (rows.empty()) return;
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  os << "Mean,,," << format_optional(mean(f1)) << ',' << format_optional(mean(iou)) << ','
     << format_optional(mean(acc)) << ',' << format_optional(mean(ssim)) << ',' << format_optional(mean(gt)) << ','
     << format_optional(mean(pred)) << ',' << format_optional(mean(res)) << ",," << format_optional(mean(area))
     << ",,,,,\n";
}

// ---- emission ------------------------------------------------------------------

void emit_report(const ReportInputs& in, const ReportSettings& settings, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& records = in.records;
  const ReportView view = resolve_view(records, settings);

  write_file(dir / "records.csv", [&](std::ostream& os) { write_records_csv(os, records); });
  write_file(dir / "records.json", [&](std::ostream& os) { os << records_to_json(records).dump(1) << '\n'; });
  write_file(dir / "strategy_comparison.csv", [&](std::ostream& os) { write_strategy_comparison_csv(os, records); });
  write_file(dir / "model_ranking.csv", [&](std::ostream& os) { write_model_ranking_csv(os, records); });
  write_file(dir / "per_city.csv", [&](std::ostream& os) { write_per_city_csv(os, records); });

  const auto decomp = decomposition_rows(records, view);
  write_file(dir / "decomposition.csv", [&](std::ostream& os) { write_decomposition_csv(os, decomp); });
  write_file(dir / "decomposition_all.csv", [&](std::ostream& os) {
    os << "strategy,combo,model,protocol,city,n_yr,cls_f1,single_r2,two_stage_gain,oracle_gain,pos_r2\n";
    std::set<std::tuple<std::string, std::string, std::string, std::string>> views;
    for (const auto& r : records) views.insert({r.strategy, r.combo, r.model, r.protocol});
    for (const auto& [s, c, m, p] : views) {
      for (const auto& row : decomposition_rows(records, ReportView{s, m, p, c})) {
        os << s << ',' << c << ',' << m << ',' << p << ',' << row.city << ',' << row.n_yr << ','
           << format_optional(row.cls_f1) << ',' << format_optional(row.single_r2) << ','
           << format_optional(row.two_stage_gain) << ',' << format_optional(row.oracle_gain) << ','
           << format_optional(row.pos_r2) << '\n';
      }
    }
  });
  write_file(dir / "marginal_gains.csv",
             [&](std::ostream& os) { write_marginal_gains_csv(os, records, settings.baseline_combo); });
  const auto usability = usability_rows(records, view, settings.baseline_combo);
  write_file(dir / "usability.csv", [&](std::ostream& os) { write_usability_csv(os, usability); });
  write_file(dir / "spatial_validation.csv", [&](std::ostream& os) { write_spatial_validation_csv(os, in.spatial); });
  write_file(dir / "pca_ablation.csv", [&](std::ostream& os) {
    write_ablation_csv(os, in.ablation ? std::span<const AblationRow>(in.ablation->rows) : std::span<const AblationRow>());
  });
  write_file(dir / "importance.csv",
             [&](std::ostream& os) { write_importance_csv(os, in.importance.value_or(ImportanceTable{})); });
  if (in.importance) {
    write_file(dir / "consensus.json",
               [&](std::ostream& os) { os << consensus_grid_json(*in.importance).dump(1) << '\n'; });
  }

  nlohmann::json groups = nlohmann::json::array();
  {
    std::map<Config, std::vector<double>> g;
    for (Metric m : {Metric::f1, Metric::r2}) {
      for (const auto& [k, s] : fold_median(records, m)) {
        if (headline(k.task) == m) g[config_of(k)].push_back(s.median);
      }
    }
    for (const auto& [c, v] : g) {
      groups.push_back({{"strategy", c.strategy},
                        {"combo", c.combo},
                        {"model", c.model},
                        {"protocol", c.protocol},
                        {"task", c.task},
                        {"metric", metric_name(headline(c.task))},
                        {"samples", v.size()},
                        {"median", rounded(median(v))}});
    }
  }
  nlohmann::json usable = nlohmann::json::object();
  for (const auto& r : usability) usable[r.city] = usability_name(row_usability(r));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : in.failures) failures.push_back({{"cell", f.cell}, {"error", f.error}});
  const nlohmann::json summary = {{"manifest", in.manifest_hash},
                                  {"schema", kRecordSchemaVersion},
                                  {"records", records.size()},
                                  {"float_format", "fixed-point, 6 decimals (printf %.6f), -0 printed as 0"},
                                  {"view", {{"strategy", view.strategy}, {"model", view.model},
                                            {"protocol", view.protocol}, {"combo", view.combo}}},
                                  {"groups", groups},
                                  {"usability", usable},
                                  {"failures", failures}};
  write_file(dir / "summary.json", [&](std::ostream& os) { os << summary.dump(1) << '\n'; });
}

}  // namespace slumeval
