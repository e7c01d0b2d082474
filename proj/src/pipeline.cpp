#include "slumeval/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "slumeval/random.hpp"
#include "slumeval/spatial.hpp"

namespace slumeval {

namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string params_key(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::hist_gbt: return "hist_gbt";
    case Family::random_forest: return "random_forest";
    case Family::mlp: return "mlp";
  }
  return {};
}

[[noreturn]] void fail(const std::string& msg) { throw ManifestError(msg); }

template <class T, class Parse>
std::vector<T> parse_list(const nlohmann::json& j, const char* key, Parse parse) {
  if (!j.contains(key)) fail(std::string("manifest: missing '") + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.empty()) fail(std::string("manifest: '") + key + "' must be a non-empty list");
  std::vector<T> out;
  for (const auto& e : arr) {
    if (!e.is_string()) fail(std::string("manifest: '") + key + "' entries must be strings");
    try {
      const T v = parse(e.get<std::string>());
      if (std::find(out.begin(), out.end(), v) != out.end()) {
        fail(std::string("manifest: duplicate entry '") + e.get<std::string>() + "' in '" + key + "'");
      }
      out.push_back(v);
    } catch (const std::invalid_argument& ex) {
      fail(std::string("manifest: ") + ex.what());
    }
  }
  return out;
}

CityYear parse_target(const nlohmann::json& e) {
  if (e.is_object()) return {e.at("city").get<std::string>(), e.at("year").get<int>()};
  const auto s = e.get<std::string>();
  const auto pos = s.rfind('_');
  if (pos == std::string::npos || pos == 0) fail("manifest: target '" + s + "' is not CITY_YEAR");
  try {
    return {s.substr(0, pos), std::stoi(s.substr(pos + 1))};
  } catch (const std::exception&) {
    fail("manifest: target '" + s + "' is not CITY_YEAR");
  }
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << content;
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

Eigen::VectorXd constant(Eigen::Index n, double v) { return Eigen::VectorXd::Constant(n, v); }

bool single_class(const Eigen::VectorXd& y) {
  return y.size() == 0 || y.minCoeff() == y.maxCoeff();
}

}  // namespace

std::string json_digest(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

ModelSpec RunManifest::model_spec(Family family, Task task, std::uint64_t seed) const {
  ModelSpec spec;
  spec.family = family;
  spec.task = task;
  spec.seed = seed;
  if (auto it = model_params.find(family); it != model_params.end()) {
    spec = spec_from_json({{params_key(family), it->second}}, spec);
  }
  return spec;
}

RunManifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail("manifest: top level must be an object");
  static const std::set<std::string> known{"data",    "strategies", "combos",    "models",  "model_params",
                                           "protocols", "tasks",    "seeds",     "budget",  "targets",
                                           "threshold", "k_grid",   "dims",      "report",  "out"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) fail("manifest: unknown key '" + k + "'");
  }
  RunManifest m;
  try {
    if (!j.contains("data") || !j.at("data").is_object()) fail("manifest: missing 'data' object");
    const auto& data = j.at("data");
    if (data.contains("world") == data.contains("synthetic") || data.size() != 1) {
      fail("manifest: 'data' needs exactly one of 'world' or 'synthetic'");
    }
    nlohmann::json data_raw;
    if (data.contains("world")) {
      fs::path p = data.at("world").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      if (!fs::exists(p)) fail("manifest: world index " + p.string() + " does not exist");
      m.world = p;
      data_raw = {{"world", fs::absolute(p).lexically_normal().generic_string()}};
    } else {
      try {
        m.synthetic = synth_spec_from_json(data.at("synthetic"));
      } catch (const std::invalid_argument& ex) {
        fail(std::string("manifest: ") + ex.what());
      }
      data_raw = {{"synthetic", synth_spec_to_json(*m.synthetic)}};
    }

    m.strategies = parse_list<Strategy>(j, "strategies", parse_strategy);
    m.combos = parse_list<ComboCode>(j, "combos", parse_combo);
    m.protocols = parse_list<Protocol>(j, "protocols", parse_protocol);
    m.models = parse_list<Family>(j, "models", parse_family);
    if (j.contains("tasks")) m.tasks = parse_list<Task>(j, "tasks", parse_task);
    if (j.contains("model_params")) {
      for (const auto& [name, params] : j.at("model_params").items()) {
        Family f;
        try {
          f = parse_family(name);
        } catch (const std::invalid_argument& ex) {
          fail(std::string("manifest: ") + ex.what());
        }
        if (!params.is_object()) fail("manifest: model_params." + name + " must be an object");
        m.model_params[f] = params;
        try {
          (void)m.model_spec(f, Task::cls, 0);
        } catch (const std::exception& ex) {
          fail("manifest: model_params." + name + ": " + ex.what());
        }
      }
    }
    if (j.contains("seeds")) {
      m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      if (m.seeds.empty()) fail("manifest: 'seeds' must be non-empty");
    }
    if (j.contains("budget")) {
      const auto b = j.at("budget").get<long long>();
      if (b < 0) fail("manifest: 'budget' must be non-negative");
      m.budget = static_cast<std::size_t>(b);
    }
    if (j.contains("targets")) {
      for (const auto& e : j.at("targets")) m.targets.push_back(parse_target(e));
    }
    m.threshold = j.value("threshold", 0.5);
    if (!(m.threshold > 0.0 && m.threshold < 1.0)) fail("manifest: 'threshold' must lie in (0, 1)");
    if (j.contains("k_grid")) {
      m.k_grid = j.at("k_grid").get<std::vector<int>>();
      if (m.k_grid.empty()) fail("manifest: 'k_grid' must be non-empty");
      for (int k : m.k_grid) {
        if (k < 1 || k > category_dim(Category::aef)) fail("manifest: k_grid entries must lie in 1..64");
      }
    }
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      m.dims.n_perm = d.value("n_perm", m.dims.n_perm);
      m.dims.orderings = d.value("orderings", m.dims.orderings);
      m.dims.background = d.value("background", m.dims.background);
      m.dims.explain = d.value("explain", m.dims.explain);
      m.dims.top = d.value("top", m.dims.top);
      if (m.dims.n_perm < 1 || m.dims.orderings < 1 || m.dims.background < 1 || m.dims.explain < 1 || m.dims.top < 1) {
        fail("manifest: dims settings must be positive");
      }
    }
    if (j.contains("report")) {
      const auto& r = j.at("report");
      auto opt = [&](const char* key, std::optional<std::string>& dst) {
        if (r.contains(key)) dst = r.at(key).get<std::string>();
      };
      opt("strategy", m.report.strategy);
      opt("model", m.report.model);
      opt("protocol", m.report.protocol);
      opt("combo", m.report.combo);
      m.report.baseline_combo = r.value("baseline_combo", m.report.baseline_combo);
    }
    if (j.contains("out")) {
      fs::path p = j.at("out").get<std::string>();
      m.out = p.is_relative() ? base_dir / p : p;
    }

    nlohmann::json params = nlohmann::json::object();
    for (const auto& [f, p] : m.model_params) params[std::string(family_name(f))] = p;
    auto names = [](const auto& list, auto name_of) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& v : list) a.push_back(std::string(name_of(v)));
      return a;
    };
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : m.targets) targets.push_back(t.str());
    m.raw = {{"data", data_raw},
             {"strategies", names(m.strategies, strategy_name)},
             {"combos", names(m.combos, combo_name)},
             {"models", names(m.models, family_name)},
             {"model_params", params},
             {"protocols", names(m.protocols, protocol_name)},
             {"tasks", names(m.tasks, task_name)},
             {"seeds", m.seeds},
             {"budget", m.budget},
             {"targets", targets},
             {"threshold", m.threshold},
             {"k_grid", m.k_grid}};
    m.hash = json_digest(m.raw);
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("manifest: ") + ex.what());
  }
  return m;
}

RunManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception& ex) {
    fail("manifest: " + std::string(ex.what()));
  }
  return parse_manifest(j, path.parent_path());
}

std::vector<CityYearData> load_dataset(const RunManifest& manifest, std::optional<std::uint64_t> seed_override) {
  if (manifest.world) return load_world(*manifest.world);
  SyntheticWorldSpec spec = *manifest.synthetic;
  if (seed_override) spec.seed = *seed_override;
  return synth_world(spec).items;
}

Corpus build_corpus(const std::vector<CityYearData>& data, ComboCode code) {
  Corpus corpus;
  for (const auto& item : data) {
    if (!item.labels) continue;
    corpus.emplace(item.key, build_sample_table(item.key, item.blocks, *item.labels, code));
  }
  return corpus;
}

// ---- grid execution ----------------------------------------------------------

namespace {

struct Cell {
  std::uint64_t seed = 0;
  CityYear target;
  Strategy strategy = Strategy::s1;
  ComboCode combo = ComboCode::c0;
  Family family = Family::linear;
  Protocol protocol = Protocol::random;
  nlohmann::json descriptor;
  std::string key;
};

std::vector<EvalRecord> run_cell(const Cell& cell, const RunManifest& m, const Corpus& corpus) {
  const auto found = corpus.find(cell.target);
  if (found == corpus.end()) throw std::runtime_error("target " + cell.target.str() + " has no labels");
  const SampleTable& table = found->second;
  const auto splits = protocol_splits(table, cell.target, cell.protocol, cell.seed);
  if (splits.empty()) throw std::runtime_error("no usable folds for " + cell.target.str());

  const bool want_cls = std::find(m.tasks.begin(), m.tasks.end(), Task::cls) != m.tasks.end();
  const bool want_reg = std::find(m.tasks.begin(), m.tasks.end(), Task::reg) != m.tasks.end();
  const std::uint64_t cell_hash = fnv1a(cell.key);
  const std::uint64_t sample_hash =
      fnv1a(cell.target.str() + "|" + std::string(strategy_name(cell.strategy)) + "|" +
            std::string(protocol_name(cell.protocol)));

  std::vector<EvalRecord> out;
  for (const Split& split : splits) {
    const auto fold = static_cast<std::uint64_t>(split.fold);
    const SampleTable train = assemble_strategy(cell.strategy, cell.target, split, corpus, m.budget,
                                                derive_seed(cell.seed, sample_hash ^ fold));
    audit_leakage(train, cell.target, table, split);
    const SampleTable test = table.take(split.test);
    const std::uint64_t model_seed = derive_seed(cell.seed, cell_hash ^ fold);

    EvalRecord base;
    base.city = cell.target.city;
    base.year = cell.target.year;
    base.strategy = std::string(strategy_name(cell.strategy));
    base.combo = std::string(combo_name(cell.combo));
    base.model = std::string(family_name(cell.family));
    base.protocol = std::string(protocol_name(cell.protocol));
    base.fold = split.fold;
    base.seed = cell.seed;
    base.n_train = train.rows();
    base.n_test = test.rows();
    base.provenance = m.hash + ":" + cell.key;

    const Eigen::VectorXd y_cls = test.cls_target();
    Eigen::VectorXd proba;
    if (want_cls) {
      const Eigen::VectorXd y_train = train.cls_target();
      if (single_class(y_train)) {
        proba = constant(y_cls.size(), y_train.size() ? y_train(0) : 0.0);
      } else {
        proba = slumeval::train(m.model_spec(cell.family, Task::cls, model_seed), train.x, y_train)->predict_proba(test.x);
      }
      EvalRecord r = base;
      r.task = "cls";
      r.cls = cls_metrics(as_span(y_cls), as_span(proba), m.threshold);
      out.push_back(std::move(r));
    }
    if (want_reg) {
      const auto model = slumeval::train(m.model_spec(cell.family, Task::reg, model_seed), train.x, train.reg_target());
      const Eigen::VectorXd pred = model->predict_density(test.x);
      const Eigen::VectorXd y = test.reg_target();
      EvalRecord r = base;
      r.task = "reg";
      r.reg = reg_metrics(as_span(y), as_span(pred));
      if (want_cls) {
        Eigen::VectorXd hard(proba.size());
        for (Eigen::Index i = 0; i < proba.size(); ++i) hard(i) = proba(i) >= m.threshold ? 1.0 : 0.0;
        r.decomp = decompose_r2(as_span(y), as_span(pred), as_span(hard), as_span(y_cls));
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace

RunResult run_grid(const RunManifest& m, const std::vector<CityYearData>& data, const RunOptions& options) {
  std::map<ComboCode, Corpus> corpora;
  for (ComboCode c : m.combos) corpora.emplace(c, build_corpus(data, c));

  std::vector<CityYear> targets;
  const Corpus& any = corpora.begin()->second;
  if (m.targets.empty()) {
    for (const auto& [k, t] : any) targets.push_back(k);
  } else {
    for (const auto& t : m.targets) {
      if (!any.contains(t)) throw ManifestError("manifest: target " + t.str() + " has no labelled data");
      targets.push_back(t);
    }
  }
  const std::vector<std::uint64_t> seeds = options.seed_override ? std::vector{*options.seed_override} : m.seeds;
  nlohmann::json data_key = m.raw.at("data");
  if (options.seed_override && m.synthetic) data_key["synthetic"]["seed"] = *options.seed_override;

  std::vector<Cell> cells;
  for (auto seed : seeds) {
    for (const auto& target : targets) {
      for (auto strategy : m.strategies) {
        for (auto combo : m.combos) {
          for (auto family : m.models) {
            for (auto protocol : m.protocols) {
              Cell c{seed, target, strategy, combo, family, protocol, {}, {}};
              nlohmann::json specs = nlohmann::json::object();
              for (Task t : m.tasks) {
                auto sj = spec_to_json(m.model_spec(family, t, 0));
                sj.erase("seed");
                specs[std::string(task_name(t))] = sj;
              }
              c.descriptor = {{"data", data_key},
                              {"seed", seed},
                              {"target", target.str()},
                              {"strategy", strategy_name(strategy)},
                              {"combo", combo_name(combo)},
                              {"protocol", protocol_name(protocol)},
                              {"models", specs},
                              {"budget", m.budget},
                              {"threshold", m.threshold}};
              c.key = json_digest(c.descriptor);
              cells.push_back(std::move(c));
            }
          }
        }
      }
    }
  }

  const fs::path cell_dir = options.out / "cells";
  fs::create_directories(cell_dir);
  std::vector<std::vector<EvalRecord>> results(cells.size());
  std::vector<std::optional<std::string>> errors(cells.size());
  std::vector<std::uint8_t> resumed(cells.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      const fs::path file = cell_dir / (cell.key + ".json");
      if (fs::exists(file)) {
        try {
          const auto j = read_json_file(file);
          if (j.value("status", "") == "ok") {
            for (const auto& r : j.at("records")) results[i].push_back(record_from_json(r));
            resumed[i] = 1;
            continue;
          }
        } catch (const std::exception&) {
          results[i].clear();
        }
      }
      nlohmann::json doc = {{"cell", cell.descriptor}, {"manifest", m.hash}};
      try {
        results[i] = run_cell(cell, m, corpora.at(cell.combo));
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : results[i]) recs.push_back(record_to_json(r));
        doc["status"] = "ok";
        doc["records"] = std::move(recs);
      } catch (const std::exception& ex) {
        results[i].clear();
        errors[i] = ex.what();
        doc["status"] = "failed";
        doc["error"] = ex.what();
      }
      write_atomic(file, doc.dump(1) + "\n");
      if (options.verbose || errors[i]) {
        std::lock_guard lock(log_mutex);
        std::cerr << "[cell " << (i + 1) << "/" << cells.size() << "] " << cell.target.str() << " "
                  << strategy_name(cell.strategy) << " " << combo_name(cell.combo) << " "
                  << family_name(cell.family) << " " << protocol_name(cell.protocol)
                  << (errors[i] ? " FAILED: " + *errors[i] : std::string(" ok")) << "\n";
      }
    }
  };

  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(cells.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunResult result;
  result.cells = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    result.resumed += resumed[i];
    if (errors[i]) result.failures.push_back({cells[i].key, *errors[i]});
    for (auto& r : results[i]) result.records.push_back(std::move(r));
  }
  return result;
}

// ---- dimension analysis -----------------------------------------------------

DimsResult run_dims(const RunManifest& m, const std::vector<CityYearData>& data, std::uint64_t seed) {
  const Corpus corpus = build_corpus(data, ComboCode::c0);
  DimsResult out;
  for (const auto& [key, table] : corpus) out.pca.emplace_back(key, pca_fit(table.x));

  AblationConfig config;
  config.k_grid = m.k_grid;
  config.protocols = m.protocols;
  config.seed = seed;
  config.threshold = m.threshold;
  for (Family f : m.models) {
    for (Task t : m.tasks) config.models.push_back(m.model_spec(f, t, 0));
  }
  out.ablation = ablation_run(corpus, config);

  std::map<std::string, std::vector<SampleTable>> by_city;
  for (const auto& [key, table] : corpus) by_city[key.city].push_back(table);
  std::vector<ImportanceInput> inputs;
  for (const auto& [city, parts] : by_city) {
    const SampleTable table = concat(parts);
    const Eigen::VectorXd y = table.cls_target();
    if (single_class(y)) continue;
    std::vector<std::size_t> order(table.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, fnv1a("dims:" + city)));
    shuffle(order.begin(), order.end(), rng);
    const std::size_t nb = std::min(m.dims.background, order.size());
    const std::size_t ne = std::min(m.dims.explain, order.size());
    Eigen::MatrixXd background(static_cast<Eigen::Index>(nb), table.x.cols());
    Eigen::MatrixXd explain(static_cast<Eigen::Index>(ne), table.x.cols());
    for (std::size_t i = 0; i < nb; ++i) background.row(static_cast<Eigen::Index>(i)) = table.x.row(static_cast<Eigen::Index>(order[i]));
    for (std::size_t i = 0; i < ne; ++i) {
      explain.row(static_cast<Eigen::Index>(i)) = table.x.row(static_cast<Eigen::Index>(order[order.size() - 1 - i]));
    }
    for (Family f : m.models) {
      const std::uint64_t model_seed = derive_seed(seed, fnv1a(city + ":" + std::string(family_name(f))));
      const auto model = slumeval::train(m.model_spec(f, Task::cls, model_seed), table.x, y);
      const Attribution a = attribute(*model, background, explain, m.dims.orderings, model_seed);
      inputs.push_back({city, std::string(family_name(f)), std::vector<double>(a.mean_abs.data(), a.mean_abs.data() + a.mean_abs.size())});
    }
  }
  if (inputs.size() >= 2) out.importance = consensus_and_significance(inputs, m.dims.n_perm, seed, m.dims.top);
  return out;
}

void write_evr_csv(std::ostream& os, const DimsResult& result) {
  os << "city,year,k,evr,cumulative_evr\n";
  for (const auto& [key, pca] : result.pca) {
    const Eigen::VectorXd cum = pca.cumulative_evr();
    for (Eigen::Index k = 0; k < pca.evr.size(); ++k) {
      os << key.city << ',' << key.year << ',' << (k + 1) << ',' << format_value(pca.evr(k)) << ','
         << format_value(cum(k)) << '\n';
    }
  }
}

// ---- full-scene inference ----------------------------------------------------

std::vector<InferredYear> full_scene_infer(const std::vector<CityYearData>& data, const std::string& city,
                                           Family family, const RunManifest& manifest, ComboCode code,
                                           std::uint64_t seed, std::span<const int> years) {
  std::vector<const CityYearData*> items;
  std::vector<SampleTable> labelled;
  for (const auto& item : data) {
    if (item.key.city != city) continue;
    items.push_back(&item);
    if (item.labels) labelled.push_back(build_sample_table(item.key, item.blocks, *item.labels, code));
  }
  if (items.empty()) throw std::invalid_argument("full_scene_infer: unknown city " + city);
  if (labelled.empty()) throw std::invalid_argument("full_scene_infer: " + city + " has no labelled year");
  const SampleTable table = concat(labelled);
  const std::uint64_t model_seed = derive_seed(seed, fnv1a(city));

  const Eigen::VectorXd y_cls = table.cls_target();
  std::unique_ptr<TrainedModel> cls_model;
  if (!single_class(y_cls)) cls_model = slumeval::train(manifest.model_spec(family, Task::cls, model_seed), table.x, y_cls);
  const auto reg_model = slumeval::train(manifest.model_spec(family, Task::reg, model_seed), table.x, table.reg_target());

  std::vector<int> wanted(years.begin(), years.end());
  if (wanted.empty()) {
    for (const auto* item : items) wanted.push_back(item->key.year);
  }
  std::vector<InferredYear> out;
  for (int year : wanted) {
    const auto it = std::find_if(items.begin(), items.end(), [&](const CityYearData* d) { return d->key.year == year; });
    if (it == items.end()) {
      throw std::invalid_argument("full_scene_infer: no feature bands for " + city + "_" + std::to_string(year));
    }
    const CityYearData& item = **it;
    const auto cells = stackable_cells(item.blocks, code);
    const Eigen::MatrixXd x = stack(item.blocks, code, cells);
    const Eigen::VectorXd p = cls_model ? cls_model->predict_proba(x) : constant(x.rows(), y_cls.size() ? y_cls(0) : 0.0);
    const Eigen::VectorXd d = reg_model->predict_density(x);

    const Grid& ref = item.blocks.front().bands.front();
    InferredYear inf;
    inf.year = year;
    inf.imputed = !item.labels.has_value();
    for (Grid* g : {&inf.cls, &inf.proba, &inf.density}) {
      *g = ref.like(ref.nodata);
      g->city_code = city;
      g->year = year;
    }
    inf.cls.band_name = "pred_cls";
    inf.proba.band_name = "pred_proba";
    inf.density.band_name = "pred_density";
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      inf.proba.values[cells[r]] = static_cast<float>(p(i));
      inf.cls.values[cells[r]] = p(i) >= manifest.threshold ? 1.0f : 0.0f;
      inf.density.values[cells[r]] = static_cast<float>(std::clamp(d(i), 0.0, static_cast<double>(kSubpixels)));
    }
    out.push_back(std::move(inf));
  }
  return out;
}

void write_inference(const InferredYear& inferred, const fs::path& dir) {
  const nlohmann::json extra = {{"imputed", inferred.imputed}};
  const std::string stem = inferred.cls.city_code + "_" + std::to_string(inferred.year);
  write_bif(inferred.cls, dir / (stem + "_cls.bif"), extra);
  write_bif(inferred.proba, dir / (stem + "_proba.bif"), extra);
  write_bif(inferred.density, dir / (stem + "_density.bif"), extra);
}

// ---- spatial validation ------------------------------------------------------

namespace {

std::optional<MoranResult> moran_or_none(const Grid& g, int n_perm, std::uint64_t seed) {
  const auto w = queen_weights(g);
  if (w.n() < 3) return std::nullopt;
  try {
    return morans_i(node_values(g, w), w, n_perm, seed);
  } catch (const std::invalid_argument&) {
    return std::nullopt;  // constant field
  }
}

}  // namespace

SpatialValidation validate_spatial(const LabelPair& labels, const InferredYear& inferred,
                                   const SpatialSettings& settings, const std::optional<fs::path>& lisa_out) {
  SpatialValidation v;
  v.city = labels.city_code;
  v.year = labels.year;
  Grid gt_cls = labels.cls_grid();
  Grid gt_density = labels.density_grid();
  Grid pred_density = inferred.density;
  if (!gt_cls.same_geometry(inferred.cls)) throw std::invalid_argument("validate_spatial: geometry mismatch");
  for (std::size_t i = 0; i < gt_cls.size(); ++i) {
    if (!inferred.cls.is_valid(i)) {
      gt_cls.values[i] = gt_cls.nodata;
      gt_density.values[i] = gt_density.nodata;
    } else {
      pred_density.values[i] /= static_cast<float>(kSubpixels);
    }
  }
  v.ssim_cls = ssim_binary(gt_cls, inferred.cls);
  v.area_pct_err = area_pct_err(gt_cls, inferred.cls);
  std::vector<double> y, pred;
  for (std::size_t i = 0; i < gt_cls.size(); ++i) {
    if (!gt_cls.is_valid(i)) continue;
    y.push_back(gt_cls.values[i]);
    pred.push_back(inferred.cls.values[i]);
  }
  const std::size_t valid = y.size();
  if (valid) {
    const ClsMetrics c = cls_metrics(y, pred);
    v.f1 = c.f1;
    v.iou = c.iou;
    v.accuracy = c.accuracy;
  }

  v.factor = adaptive_factor(valid, settings.moran_cap);
  const Grid gt_m = downsample(gt_cls, v.factor, Reducer::max);
  const Grid pred_m = downsample(inferred.cls, v.factor, Reducer::max);
  if (auto r = moran_or_none(gt_m, settings.n_perm, settings.seed)) v.moran_gt = r->i;
  if (auto r = moran_or_none(pred_m, settings.n_perm, settings.seed)) v.moran_pred = r->i;

  const Grid gt_d = downsample(gt_density, v.factor, Reducer::mean);
  const Grid pred_d = downsample(pred_density, v.factor, Reducer::mean);
  const auto w = queen_weights(pred_d);
  if (w.n() >= 3) {
    try {
      const auto r = residual_moran(node_values(gt_d, w), node_values(pred_d, w), w, settings.n_perm, settings.seed);
      v.moran_residual = r.i;
      v.moran_residual_p = r.p_perm;
    } catch (const std::invalid_argument&) {
    }
  }

  const int lisa_factor = adaptive_factor(valid, settings.lisa_cap);
  const Grid pred_l = downsample(pred_density, lisa_factor, Reducer::mean);
  const auto wl = queen_weights(pred_l);
  const auto values = node_values(pred_l, wl);
  const bool varies = wl.n() >= 3 && *std::min_element(values.begin(), values.end()) !=
                                         *std::max_element(values.begin(), values.end());
  if (varies) {
    const LisaMap map = lisa(values, wl, settings.n_perm, settings.seed);
    v.lisa_hh = map.count(Quadrant::hh);
    v.lisa_ll = map.count(Quadrant::ll);
    v.lisa_hl = map.count(Quadrant::hl);
    v.lisa_lh = map.count(Quadrant::lh);
    v.lisa_ns = map.count(Quadrant::ns);
    if (lisa_out) {
      Grid g = lisa_grid(map, wl, pred_l);
      g.band_name = "lisa";
      write_bif(g, *lisa_out, {{"codes", {{"ns", 0}, {"hh", 1}, {"ll", 2}, {"hl", 3}, {"lh", 4}}}, {"factor", lisa_factor}});
    }
  } else {
    v.lisa_ns = wl.n();
  }
  return v;
}

}  // namespace slumeval
