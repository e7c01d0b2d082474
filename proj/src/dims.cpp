#include "slumeval/dims.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "slumeval/random.hpp"

namespace slumeval {

// ---- PCA ----------------------------------------------------------------------

PcaModel pca_fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
  const Eigen::Index d = rows.cols();
  PcaModel m;
  m.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigen-decomposition failed");
  // Eigen returns ascending eigenvalues.
  m.eigenvalues.resize(d);
  m.components.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Eigen::Index src = d - 1 - k;
    m.eigenvalues[k] = std::max(0.0, solver.eigenvalues()[src]);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    m.components.row(k) = v.transpose();
  }
  const double total = m.eigenvalues.sum();
  m.evr = total > 0 ? Eigen::VectorXd(m.eigenvalues / total) : Eigen::VectorXd::Zero(d);
  const double tol = std::max(1e-12, m.eigenvalues.size() > 0 ? m.eigenvalues[0] * 1e-10 : 0.0);
  m.rank = (m.eigenvalues.array() > tol).count();
  m.rank_deficient = m.rank < d;
  return m;
}

Eigen::MatrixXd PcaModel::transform(const Eigen::MatrixXd& rows, Eigen::Index k) const {
  if (rows.cols() != dim()) throw std::invalid_argument("pca transform: dimension mismatch");
  if (k < 1 || k > dim()) throw std::invalid_argument("pca transform: k out of range");
  return (rows.rowwise() - mean.transpose()) * components.topRows(k).transpose();
}

Eigen::MatrixXd PcaModel::inverse(const Eigen::MatrixXd& scores) const {
  const Eigen::Index k = scores.cols();
  if (k < 1 || k > dim()) throw std::invalid_argument("pca inverse: k out of range");
  return (scores * components.topRows(k)).rowwise() + mean.transpose();
}

Eigen::VectorXd PcaModel::cumulative_evr() const {
  Eigen::VectorXd c(evr.size());
  double s = 0.0;
  for (Eigen::Index k = 0; k < evr.size(); ++k) c[k] = (s += evr[k]);
  return c;
}

std::optional<int> saturation_point(std::span<const int> k_grid, std::span<const double> values, double fraction) {
  if (k_grid.size() != values.size() || values.empty()) {
    throw std::invalid_argument("saturation_point: curve and grid must be non-empty and aligned");
  }
  const double best = *std::max_element(values.begin(), values.end());
  if (!(best > 0.0)) return std::nullopt;
  std::optional<int> k_star;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= fraction * best && (!k_star || k_grid[i] < *k_star)) k_star = k_grid[i];
  }
  return k_star;
}

// ---- ablation -----------------------------------------------------------------

AblationResult ablation_run(const Corpus& corpus, const AblationConfig& config) {
  if (config.k_grid.empty()) throw std::invalid_argument("ablation_run: empty k grid");
  const int k_max = *std::max_element(config.k_grid.begin(), config.k_grid.end());
  const int aef = category_dim(Category::aef);
  for (int k : config.k_grid) {
    if (k < 1 || k > aef) throw std::invalid_argument("ablation_run: k must lie in 1.." + std::to_string(aef));
  }

  AblationResult out;
  for (const auto& [key, table] : corpus) {
    if (table.dims() < static_cast<std::size_t>(aef)) {
      throw std::invalid_argument("ablation_run: " + key.str() + " lacks the AEF block");
    }
    for (Protocol protocol : config.protocols) {
      for (const Split& split : protocol_splits(table, key, protocol, config.seed)) {
        const SampleTable train = table.take(split.train);
        const SampleTable test = table.take(split.test);
        const Eigen::MatrixXd x_train = train.x.leftCols(aef);
        const Eigen::MatrixXd x_test = test.x.leftCols(aef);
        const PcaModel pca = pca_fit(x_train);
        for (int k : config.k_grid) {
          const Eigen::MatrixXd z_train = pca.transform(x_train, k);
          const Eigen::MatrixXd z_test = pca.transform(x_test, k);
          for (const ModelSpec& base : config.models) {
            ModelSpec spec = base;
            spec.seed = derive_seed(config.seed, fnv1a(key.str()) ^ static_cast<std::uint64_t>(split.fold));
            const bool cls = spec.task == Task::cls;
            const Eigen::VectorXd y_train = cls ? train.cls_target() : train.reg_target();
            const Eigen::VectorXd y_test = cls ? test.cls_target() : test.reg_target();
            if (cls && (y_train.sum() == 0.0 || y_train.sum() == static_cast<double>(y_train.size()))) continue;
            const auto model = slumeval::train(spec, z_train, y_train);

            EvalRecord r;
            r.city = key.city;
            r.year = key.year;
            r.strategy = "S1";
            r.combo = "PCA" + std::to_string(k);
            r.model = std::string(family_name(spec.family));
            r.protocol = std::string(protocol_name(protocol));
            r.fold = split.fold;
            r.seed = config.seed;
            r.task = std::string(task_name(spec.task));
            r.n_train = train.rows();
            r.n_test = test.rows();
            if (cls) {
              const Eigen::VectorXd p = model->predict_proba(z_test);
              r.cls = cls_metrics(as_span(y_test), as_span(p), config.threshold);
            } else if (test.rows() >= 2) {
              const Eigen::VectorXd p = model->predict_density(z_test);
              r.reg = reg_metrics(as_span(y_test), as_span(p));
            } else {
              continue;
            }
            out.records.push_back(std::move(r));
          }
        }
      }
    }
  }

  // Per (model, protocol, task): fold-median per sample, then across samples.
  struct Group {
    std::string model, protocol, task;
    auto operator<=>(const Group&) const = default;
  };
  std::map<Group, std::map<int, std::map<CityYear, double>>> curves;
  for (const auto& tk : {std::pair{"cls", Metric::f1}, std::pair{"reg", Metric::r2}}) {
    for (const auto& [sk, summary] : fold_median(out.records, tk.second)) {
      if (sk.task != tk.first) continue;
      const int k = std::stoi(sk.combo.substr(3));
      curves[{sk.model, sk.protocol, sk.task}][k][{sk.city, sk.year}] = summary.median;
    }
  }
  for (const auto& [g, by_k] : curves) {
    const auto full_it = by_k.find(k_max);
    for (int k : config.k_grid) {
      const auto it = by_k.find(k);
      if (it == by_k.end()) continue;
      AblationRow row;
      row.model = g.model;
      row.protocol = g.protocol;
      row.task = g.task;
      row.metric = g.task == "cls" ? "f1" : "r2";
      row.k = k;
      std::vector<double> vals, a, b, delta;
      for (const auto& [s, v] : it->second) {
        vals.push_back(v);
        if (full_it == by_k.end()) continue;
        const auto f = full_it->second.find(s);
        if (f == full_it->second.end()) continue;
        a.push_back(v);
        b.push_back(f->second);
        delta.push_back(v - f->second);
      }
      row.samples = vals.size();
      row.median = median(vals);
      if (full_it != by_k.end()) {
        std::vector<double> full_vals;
        for (const auto& [s, v] : full_it->second) full_vals.push_back(v);
        const double full = median(full_vals);
        if (full != 0.0) row.pct_of_full = row.median / full * 100.0;
      }
      if (!delta.empty()) {
        row.median_delta = median(delta);
        row.wilcoxon_p = wilcoxon_signed_rank(a, b).p_value;
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "model,protocol,task,metric,k,samples,median,pct_of_full,median_delta_vs_full,wilcoxon_p\n";
  for (const auto& r : rows) {
    os << r.model << ',' << r.protocol << ',' << r.task << ',' << r.metric << ',' << r.k << ',' << r.samples << ','
       << format_value(r.median) << ',' << format_optional(r.pct_of_full) << ',' << format_value(r.median_delta)
       << ',' << format_value(r.wilcoxon_p) << '\n';
  }
}

// ---- attribution ----------------------------------------------------------------

Attribution attribute(const TrainedModel& model, const Eigen::MatrixXd& background, const Eigen::MatrixXd& explain,
                      int n_orderings, std::uint64_t seed) {
  if (background.rows() == 0) throw std::invalid_argument("attribute: empty background");
  const Eigen::Index d = model.input_dim();
  if (background.cols() != d || explain.cols() != d) throw std::invalid_argument("attribute: dimension mismatch");
  const Eigen::RowVectorXd base = background.colwise().mean();

  Attribution out;
  out.baseline_score = model.score(base)[0];
  out.phi = Eigen::MatrixXd::Zero(explain.rows(), d);

  if (const auto* lin = dynamic_cast<const LinearModel*>(&model)) {
    out.exact = true;
    const Eigen::VectorXd w = lin->raw_weights();
    for (Eigen::Index i = 0; i < explain.rows(); ++i) {
      out.phi.row(i) = (explain.row(i) - base).cwiseProduct(w.transpose());
    }
  } else {
    if (n_orderings < 1) throw std::invalid_argument("attribute: need at least one ordering");
    constexpr int kBatchOrders = 32;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < explain.rows(); ++i) {
      const std::uint64_t row_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
      for (int m0 = 0; m0 < n_orderings; m0 += kBatchOrders) {
        const int batch = std::min(kBatchOrders, n_orderings - m0);
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(batch) * (d + 1), d);
        std::vector<std::vector<Eigen::Index>> orders(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
          std::iota(order.begin(), order.end(), Eigen::Index{0});
          Rng rng(derive_seed(row_seed, static_cast<std::uint64_t>(m0 + b)));
          shuffle(order.begin(), order.end(), rng);
          orders[static_cast<std::size_t>(b)] = order;
          Eigen::RowVectorXd z = base;
          const Eigen::Index off = static_cast<Eigen::Index>(b) * (d + 1);
          pts.row(off) = z;
          for (Eigen::Index s = 0; s < d; ++s) {
            const Eigen::Index j = order[static_cast<std::size_t>(s)];
            z[j] = explain(i, j);
            pts.row(off + s + 1) = z;
          }
        }
        const Eigen::VectorXd f = model.score(pts);
        for (int b = 0; b < batch; ++b) {
          const Eigen::Index off = static_cast<Eigen::Index>(b) * (d + 1);
          const auto& ord = orders[static_cast<std::size_t>(b)];
          for (Eigen::Index s = 0; s < d; ++s) acc[ord[static_cast<std::size_t>(s)]] += f[off + s + 1] - f[off + s];
        }
      }
      out.phi.row(i) = (acc / static_cast<double>(n_orderings)).transpose();
    }
  }
  out.mean_abs = out.phi.cwiseAbs().colwise().mean().transpose();
  return out;
}

// ---- consensus and significance ---------------------------------------------------

std::vector<int> importance_ranks(std::span<const double> importance) {
  std::vector<std::size_t> order(importance.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  std::vector<int> ranks(importance.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r + 1);
  return ranks;
}

ImportanceTable consensus_and_significance(std::span<const ImportanceInput> inputs, int n_perm, std::uint64_t seed,
                                           int top) {
  if (inputs.empty()) throw std::invalid_argument("consensus_and_significance: no importance vectors");
  ImportanceTable t;
  t.top = top;
  t.dims = inputs.front().importance.size();
  for (const auto& in : inputs) {
    if (in.importance.size() != t.dims) throw std::invalid_argument("consensus_and_significance: ragged inputs");
    if (std::find(t.models.begin(), t.models.end(), in.model) == t.models.end()) t.models.push_back(in.model);
    if (std::find(t.cities.begin(), t.cities.end(), in.city) == t.cities.end()) t.cities.push_back(in.city);
  }
  std::sort(t.models.begin(), t.models.end());
  std::sort(t.cities.begin(), t.cities.end());
  const std::size_t nm = t.models.size(), d = t.dims;
  auto model_index = [&](const std::string& m) {
    return static_cast<std::size_t>(std::find(t.models.begin(), t.models.end(), m) - t.models.begin());
  };

  t.mean_importance.assign(nm, std::vector<double>(d, 0.0));
  t.mean_rank.assign(nm, std::vector<double>(d, 0.0));
  t.p_value.assign(nm, std::vector<double>(d, 1.0));
  t.in_top.assign(nm, std::vector<std::uint8_t>(d, 0));
  t.consensus.assign(d, 0);
  t.pooled_mean_rank.assign(d, 0.0);
  t.pooled_p.assign(d, 1.0);
  std::vector<std::size_t> per_model(nm, 0);
  std::vector<std::size_t> model_of(inputs.size());

  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const std::size_t m = model_of[v] = model_index(inputs[v].model);
    const auto ranks = importance_ranks(inputs[v].importance);
    for (std::size_t j = 0; j < d; ++j) {
      t.mean_importance[m][j] += inputs[v].importance[j];
      t.mean_rank[m][j] += ranks[j];
      t.pooled_mean_rank[j] += ranks[j];
    }
    ++per_model[m];
  }
  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t j = 0; j < d; ++j) {
      t.mean_importance[m][j] /= static_cast<double>(per_model[m]);
      t.mean_rank[m][j] /= static_cast<double>(per_model[m]);
    }
    std::vector<double> neg(d);
    for (std::size_t j = 0; j < d; ++j) neg[j] = -t.mean_rank[m][j];
    const auto order = importance_ranks(neg);
    for (std::size_t j = 0; j < d; ++j) {
      if (order[j] <= top) {
        t.in_top[m][j] = 1;
        ++t.consensus[j];
      }
    }
  }
  for (double& r : t.pooled_mean_rank) r /= static_cast<double>(inputs.size());

  if (n_perm > 0) {
    std::vector<std::vector<std::size_t>> hits(nm, std::vector<std::size_t>(d, 0));
    std::vector<std::size_t> pooled_hits(d, 0);
    std::vector<int> perm(d);
    std::vector<std::vector<double>> sum(nm, std::vector<double>(d));
    std::vector<double> pooled(d);
    for (int r = 0; r < n_perm; ++r) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      for (auto& s : sum) std::fill(s.begin(), s.end(), 0.0);
      std::fill(pooled.begin(), pooled.end(), 0.0);
      for (std::size_t v = 0; v < inputs.size(); ++v) {
        std::iota(perm.begin(), perm.end(), 1);
        shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t j = 0; j < d; ++j) {
          sum[model_of[v]][j] += perm[j];
          pooled[j] += perm[j];
        }
      }
      for (std::size_t m = 0; m < nm; ++m) {
        for (std::size_t j = 0; j < d; ++j) {
          // Integer rank sums: compare sums to avoid rounding in the means.
          const double obs = t.mean_rank[m][j] * static_cast<double>(per_model[m]);
          if (sum[m][j] <= std::round(obs)) ++hits[m][j];
        }
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double obs = t.pooled_mean_rank[j] * static_cast<double>(inputs.size());
        if (pooled[j] <= std::round(obs)) ++pooled_hits[j];
      }
    }
    const double denom = static_cast<double>(n_perm) + 1.0;
    for (std::size_t m = 0; m < nm; ++m) {
      for (std::size_t j = 0; j < d; ++j) t.p_value[m][j] = static_cast<double>(hits[m][j] + 1) / denom;
    }
    for (std::size_t j = 0; j < d; ++j) t.pooled_p[j] = static_cast<double>(pooled_hits[j] + 1) / denom;
  }
  return t;
}

void write_importance_csv(std::ostream& os, const ImportanceTable& t) {
  os << "model,dimension,mean_abs_attribution,mean_rank,in_top,p_value,consensus\n";
  for (std::size_t m = 0; m < t.models.size(); ++m) {
    for (std::size_t j = 0; j < t.dims; ++j) {
      os << t.models[m] << ',' << (j + 1) << ',' << format_value(t.mean_importance[m][j]) << ','
         << format_value(t.mean_rank[m][j]) << ',' << int{t.in_top[m][j]} << ',' << format_value(t.p_value[m][j])
         << ',' << t.consensus[j] << '\n';
    }
  }
}

nlohmann::json consensus_grid_json(const ImportanceTable& t) {
  nlohmann::json grid = nlohmann::json::object();
  for (std::size_t m = 0; m < t.models.size(); ++m) {
    std::vector<int> selected;
    for (std::size_t j = 0; j < t.dims; ++j) {
      if (t.in_top[m][j]) selected.push_back(static_cast<int>(j + 1));
    }
    grid[t.models[m]] = selected;
  }
  nlohmann::json dims = nlohmann::json::array();
  for (std::size_t j = 0; j < t.dims; ++j) {
    dims.push_back({{"dimension", j + 1},
                    {"consensus", t.consensus[j]},
                    {"pooled_mean_rank", t.pooled_mean_rank[j]},
                    {"pooled_p", t.pooled_p[j]}});
  }
  return {{"top", t.top}, {"models", t.models}, {"cities", t.cities}, {"selected", grid}, {"dimensions", dims}};
}

}  // namespace slumeval
