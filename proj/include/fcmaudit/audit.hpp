#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcmaudit/association.hpp"
#include "fcmaudit/dataset.hpp"
#include "fcmaudit/fcm.hpp"
#include "fcmaudit/forest.hpp"
#include "fcmaudit/shapley.hpp"

namespace fcmaudit {

struct DatasetSettings {
  std::string data_path;
  std::string schema_path;
  char delimiter = ',';
  bool has_header = false;
  bool normalize = false;
  int max_rows = 0;  // <= 0: use all rows
};

struct ForestGrid {
  std::vector<int> estimators{100, 500, 1000};
  std::vector<SplitCriterion> criteria{SplitCriterion::gini, SplitCriterion::entropy};
  std::vector<MaxFeaturesRule> rules{MaxFeaturesRule::sqrt_rule, MaxFeaturesRule::log2_rule};
  int max_depth = -1;
};

struct AuditShapSettings {
  ShapMethod method = ShapMethod::kernel;
  int background_size = 100;
  int n_coalitions = 4096;
  int exact_limit = 15;
  int global_instances = 0;   // 0: skip the global pass
  int global_coalitions = 512;
};

struct AuditFcmSettings {
  std::vector<double> phi_grid{0.0, 0.2, 0.4, 0.6, 0.8};
  int max_iter = 100;
  double fp_tol = 1e-6;
  int cycle_window = 20;
};

enum class ActivationMode { absolute, signed_values, max_normalized };

struct AuditConfig {
  std::uint64_t seed = 42;  // master seed; stage streams derive from it
  DatasetSettings dataset;
  std::array<double, 3> fractions{0.7, 0.2, 0.1};
  ForestGrid forest;
  AuditShapSettings shapley;
  AuditFcmSettings fcm;
  AssociationOptions association;  // association.seed is overwritten from `seed`
  std::vector<std::string> protected_ids;
  ActivationMode activation_mode = ActivationMode::absolute;

  // Stage seed streams.
  std::uint64_t split_seed() const { return derive_seed(seed, 1); }
  std::uint64_t forest_seed() const { return derive_seed(seed, 2); }
  std::uint64_t association_seed() const { return derive_seed(seed, 3); }
  std::uint64_t background_seed() const { return derive_seed(seed, 4); }
  std::uint64_t shap_seed() const { return derive_seed(seed, 5); }
  std::uint64_t instance_seed() const { return derive_seed(seed, 6); }
  std::uint64_t subsample_seed() const { return derive_seed(seed, 7); }
  std::uint64_t global_shap_seed() const { return derive_seed(seed, 8); }
};

inline ActivationMode activation_mode_from_string(const std::string& s) {
  if (s == "abs") return ActivationMode::absolute;
  if (s == "signed") return ActivationMode::signed_values;
  if (s == "max_normalized") return ActivationMode::max_normalized;
  throw std::invalid_argument("unknown activation mode: " + s);
}

// Loads an audit config from JSON. Relative data/schema paths resolve against
// the config file's directory.
inline AuditConfig load_audit_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;

  AuditConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{42});

  const auto& d = j.at("dataset");
  cfg.dataset.data_path = d.at("data").get<std::string>();
  cfg.dataset.schema_path = d.at("schema").get<std::string>();
  const std::string delim = d.value("delimiter", ",");
  if (delim.size() != 1)
    throw std::runtime_error("dataset.delimiter must be a single character");
  cfg.dataset.delimiter = delim[0];
  cfg.dataset.has_header = d.value("header", false);
  cfg.dataset.normalize = d.value("normalize", false);
  cfg.dataset.max_rows = d.value("max_rows", 0);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  cfg.dataset.data_path = resolve(cfg.dataset.data_path);
  cfg.dataset.schema_path = resolve(cfg.dataset.schema_path);

  if (j.contains("split")) {
    const auto f = j["split"].value("fractions", std::vector<double>{0.7, 0.2, 0.1});
    if (f.size() != 3) throw std::runtime_error("split.fractions must have 3 entries");
    cfg.fractions = {f[0], f[1], f[2]};
  }

  if (j.contains("forest")) {
    const auto& fo = j["forest"];
    if (fo.contains("estimators")) cfg.forest.estimators = fo["estimators"].get<std::vector<int>>();
    if (fo.contains("criteria")) {
      cfg.forest.criteria.clear();
      for (const auto& c : fo["criteria"])
        cfg.forest.criteria.push_back(c.get<std::string>() == "entropy" ? SplitCriterion::entropy
                                                                        : SplitCriterion::gini);
    }
    if (fo.contains("max_features")) {
      cfg.forest.rules.clear();
      for (const auto& r : fo["max_features"])
        cfg.forest.rules.push_back(r.get<std::string>() == "log2" ? MaxFeaturesRule::log2_rule
                                                                  : MaxFeaturesRule::sqrt_rule);
    }
    cfg.forest.max_depth = fo.value("max_depth", -1);
  }

  if (j.contains("shapley")) {
    const auto& s = j["shapley"];
    cfg.shapley.method =
        s.value("method", std::string("kernel")) == "exact" ? ShapMethod::exact
                                                            : ShapMethod::kernel;
    cfg.shapley.background_size = s.value("background_size", 100);
    cfg.shapley.n_coalitions = s.value("n_coalitions", 4096);
    cfg.shapley.exact_limit = s.value("exact_limit", 15);
    cfg.shapley.global_instances = s.value("global_instances", 0);
    cfg.shapley.global_coalitions = s.value("global_coalitions", 512);
  }

  if (j.contains("fcm")) {
    const auto& f = j["fcm"];
    if (f.contains("phi")) cfg.fcm.phi_grid = f["phi"].get<std::vector<double>>();
    cfg.fcm.max_iter = f.value("max_iter", 100);
    cfg.fcm.fp_tol = f.value("fp_tol", 1e-6);
    cfg.fcm.cycle_window = f.value("cycle_window", 20);
  }
  for (double phi : cfg.fcm.phi_grid)
    if (phi < 0.0 || phi > 1.0)
      throw std::runtime_error("fcm.phi values must lie in [0,1]");

  if (j.contains("association")) {
    const auto& a = j["association"];
    cfg.association.alpha = a.value("alpha", 2.0);
    cfg.association.c_min = a.value("c_min", 2);
    cfg.association.c_max = a.value("c_max", 10);
    cfg.association.diagonal = a.value("diagonal", std::string("unit")) == "zero"
                                   ? DiagonalPolicy::zero
                                   : DiagonalPolicy::unit;
  }

  if (j.contains("instances")) {
    const std::string rule = j["instances"].value("rule", "one_correct_per_class");
    if (rule != "one_correct_per_class")
      throw std::runtime_error("unknown instance selection rule: " + rule);
  }

  cfg.protected_ids = j.value("protected", std::vector<std::string>{});
  cfg.activation_mode = activation_mode_from_string(j.value("activation_mode", "abs"));
  return cfg;
}

// A(0) from an explanation: |S_i| by default; signed and max-normalized modes
// are for sensitivity analysis.
struct InitialActivation {
  ActivationVector values;
  bool all_zero = false;
};

inline InitialActivation build_activation_vector(const ShapExplanation& expl,
                                                 ActivationMode mode = ActivationMode::absolute) {
  InitialActivation out;
  out.values.resize(expl.attributions.size());
  double max_abs = 0.0;
  for (std::size_t i = 0; i < expl.attributions.size(); ++i) {
    const double a = expl.attributions[i];
    out.values[i] = mode == ActivationMode::signed_values ? a : std::abs(a);
    max_abs = std::max(max_abs, std::abs(a));
  }
  if (max_abs == 0.0) {
    out.all_zero = true;
    return out;
  }
  if (mode == ActivationMode::max_normalized)
    for (double& v : out.values) v /= max_abs;
  return out;
}

// Seeded draw of one correctly-classified instance of the positive class and
// one of any other class from the test view.
struct SelectedInstance {
  int row = -1;
  int label = -1;
};

inline std::vector<SelectedInstance> select_instances(const ForestModel& model,
                                                      const Dataset& ds,
                                                      const std::vector<int>& test_rows,
                                                      int positive_class, std::uint64_t seed) {
  if (test_rows.empty()) throw std::invalid_argument("select_instances: empty test view");
  std::vector<int> pos, neg;
  for (int r : test_rows) {
    if (predict_class(model, ds.row(r)) != ds.labels()[r]) continue;
    (ds.labels()[r] == positive_class ? pos : neg).push_back(r);
  }
  if (pos.empty())
    throw std::runtime_error("select_instances: no correctly classified instance of class '" +
                             ds.class_names()[positive_class] + "'");
  if (neg.empty())
    throw std::runtime_error(
        "select_instances: no correctly classified instance outside class '" +
        ds.class_names()[positive_class] + "'");
  Rng rng(seed);
  const int pr = pos[rng.below(pos.size())];
  const int nr = neg[rng.below(neg.size())];
  return {{pr, ds.labels()[pr]}, {nr, ds.labels()[nr]}};
}

struct ProtectedDelta {
  std::string id;
  double initial = 0.0;
  double final_value = 0.0;
  double delta = 0.0;
};

struct PhiResult {
  double phi = 0.0;
  Termination termination = Termination::chaos;
  int t_alpha = -1;
  int period = 0;
  bool hit_zero_raw = false;
  int iterations = 0;
  std::vector<double> final_activation;
  std::vector<double> final_normalized;
  std::vector<std::string> rank_by_shap;
  std::vector<std::string> rank_by_fcm;
  std::vector<ProtectedDelta> protected_deltas;
};

struct InstanceReport {
  std::string name;  // "positive" / "negative"
  int row = -1;
  std::string class_name;
  double prediction = 0.0;
  double base_value = 0.0;
  std::vector<double> attributions;
  std::vector<double> initial_activation;
  bool zero_activation_warning = false;
  EigenReport eigen;
  std::vector<PhiResult> phi_results;
  std::map<std::string, bool> protected_monotone;  // final nondecreasing in phi
};

struct BiasReport {
  std::vector<std::string> feature_ids;
  std::vector<std::string> feature_names;
  std::vector<std::string> protected_ids;
  std::vector<std::string> class_names;
  std::string positive_class;
  std::uint64_t seed = 0;
  ForestConfig selected_config;
  double test_accuracy = 0.0;
  std::vector<double> global_shap_values;  // empty when the global pass is off
  std::vector<InstanceReport> instances;
};

// Feature ids ordered by value descending; ties keep schema order.
inline std::vector<std::string> rank_ids(const std::vector<double>& values,
                                         const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::vector<std::string> out(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = ids[order[i]];
  return out;
}

// 1-based rank of `id` in a ranking list; 0 if absent.
inline int rank_position(const std::vector<std::string>& ranking, const std::string& id) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i] == id) return static_cast<int>(i) + 1;
  return 0;
}

// Per-protected-feature, per-phi deltas plus a monotonicity flag over the
// phi grid.
struct DeltaSummaryRow {
  std::string id;
  double phi = 0.0;
  double initial = 0.0;
  double final_value = 0.0;
  double delta = 0.0;
};

struct DeltaSummary {
  std::vector<DeltaSummaryRow> rows;
  std::map<std::string, bool> monotone;  // per protected feature
};

inline DeltaSummary protected_delta_summary(const InstanceReport& inst,
                                            const std::vector<std::string>& protected_ids) {
  DeltaSummary out;
  for (const auto& id : protected_ids) {
    double prev = -std::numeric_limits<double>::infinity();
    bool mono = true;
    for (const PhiResult& pr : inst.phi_results) {
      for (const ProtectedDelta& pd : pr.protected_deltas) {
        if (pd.id != id) continue;
        out.rows.push_back({id, pr.phi, pd.initial, pd.final_value, pd.delta});
        if (pd.final_value < prev) mono = false;
        prev = pd.final_value;
      }
    }
    out.monotone[id] = mono;
  }
  return out;
}

namespace detail {

inline std::string phi_label(double phi) {
  std::string s = csv::format_double(phi);
  return s;
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace detail

inline nlohmann::json eigen_report_to_json(const EigenReport& r) {
  return {{"dominant_value", r.dominant_value},
          {"second_value", r.second_value},
          {"strictly_dominant", r.strictly_dominant},
          {"a0_component", r.a0_component},
          {"a0_aligned", r.a0_aligned},
          {"dominant_vector", r.dominant_vector}};
}

inline nlohmann::json bias_report_to_json(const BiasReport& rep) {
  nlohmann::json j;
  j["feature_ids"] = rep.feature_ids;
  j["feature_names"] = rep.feature_names;
  j["protected"] = rep.protected_ids;
  j["classes"] = rep.class_names;
  j["positive_class"] = rep.positive_class;
  j["seed"] = rep.seed;
  j["selected_config"] = {{"n_estimators", rep.selected_config.n_estimators},
                          {"criterion", to_string(rep.selected_config.criterion)},
                          {"max_features", to_string(rep.selected_config.max_features)}};
  j["test_accuracy"] = rep.test_accuracy;
  if (!rep.global_shap_values.empty()) {
    j["global_shap"] = rep.global_shap_values;
    j["global_shap_rank"] = rank_ids(rep.global_shap_values, rep.feature_ids);
  }
  auto& insts = j["instances"] = nlohmann::json::array();
  for (const InstanceReport& inst : rep.instances) {
    nlohmann::json ij;
    ij["name"] = inst.name;
    ij["row"] = inst.row;
    ij["class"] = inst.class_name;
    ij["prediction"] = inst.prediction;
    ij["base_value"] = inst.base_value;
    ij["attributions"] = inst.attributions;
    ij["initial_activation"] = inst.initial_activation;
    ij["zero_activation_warning"] = inst.zero_activation_warning;
    ij["eigen"] = eigen_report_to_json(inst.eigen);
    nlohmann::json mono;
    for (const auto& [id, flag] : inst.protected_monotone) mono[id] = flag;
    ij["protected_monotone_in_phi"] = mono;
    auto& phis = ij["phi_results"] = nlohmann::json::array();
    for (const PhiResult& pr : inst.phi_results) {
      nlohmann::json pj;
      pj["phi"] = pr.phi;
      pj["termination"] = {{"type", to_string(pr.termination)},
                           {"t_alpha", pr.t_alpha},
                           {"period", pr.period},
                           {"hit_zero_raw", pr.hit_zero_raw},
                           {"iterations", pr.iterations}};
      pj["final_activation"] = pr.final_activation;
      pj["final_normalized"] = pr.final_normalized;
      pj["rank_by_shap"] = pr.rank_by_shap;
      pj["rank_by_fcm"] = pr.rank_by_fcm;
      auto& pd = pj["protected"] = nlohmann::json::array();
      for (const ProtectedDelta& d : pr.protected_deltas)
        pd.push_back({{"id", d.id},
                      {"initial", d.initial},
                      {"final", d.final_value},
                      {"delta", d.delta}});
      phis.push_back(std::move(pj));
    }
    insts.push_back(std::move(ij));
  }
  return j;
}

struct AuditArtifacts {
  BiasReport report;
  std::filesystem::path out_dir;
};

// Runs the three-step pipeline end to end and writes every artifact (with the
// seeds that produced it) under out_dir: association.csv/json,
// discretization.json, split.json, tuning.csv, model.json, global_shap.csv,
// shap_<instance>.csv (+ .meta.json), trace_<instance>_phi<phi>.csv
// (+ .meta.json), bias_report.json and summary.txt.
inline AuditArtifacts run_audit(const AuditConfig& cfg, const std::string& out_dir_in) {
  namespace fs = std::filesystem;
  const fs::path out_dir(out_dir_in);
  fs::create_directories(out_dir);

  // Ingest.
  SchemaFile schema;
  Dataset ds;
  detail::stage("ingest", [&] {
    schema = load_schema(cfg.dataset.schema_path);
    csv::Options opt;
    opt.delimiter = cfg.dataset.delimiter;
    opt.has_header = cfg.dataset.has_header;
    ds = load_csv(cfg.dataset.data_path, schema.features, opt, schema.classes);
    if (cfg.dataset.max_rows > 0) ds = subsample(ds, cfg.dataset.max_rows, cfg.subsample_seed());
    if (cfg.dataset.normalize) ds = normalize_numeric(ds);
    if (cfg.protected_ids.empty())
      throw std::runtime_error("bias reporting needs at least one protected feature id");
    for (const auto& id : cfg.protected_ids)
      if (ds.feature_index(id) < 0) throw std::runtime_error("unknown protected feature: " + id);
    if (schema.positive_class.empty())
      throw std::runtime_error("schema must declare positive_class for auditing");
    return 0;
  });
  const auto& class_names = ds.class_names();
  const int positive_class = static_cast<int>(
      std::find(class_names.begin(), class_names.end(), schema.positive_class) -
      class_names.begin());
  if (positive_class >= static_cast<int>(class_names.size()))
    throw std::runtime_error("stage ingest: positive_class '" + schema.positive_class +
                             "' not among dataset classes");

  // Split.
  SplitIndices split = detail::stage("split", [&] {
    return stratified_split(ds, cfg.fractions, cfg.split_seed());
  });
  std::vector<int> pool(split.train);
  pool.insert(pool.end(), split.validation.begin(), split.validation.end());
  std::sort(pool.begin(), pool.end());
  detail::write_json_file(out_dir / "split.json",
                          {{"seed", split.seed},
                           {"fractions", cfg.fractions},
                           {"train", split.train},
                           {"validation", split.validation},
                           {"test", split.test}});

  // Tune, then refit on train + validation.
  std::vector<ForestConfig> grid;
  for (int n : cfg.forest.estimators)
    for (SplitCriterion c : cfg.forest.criteria)
      for (MaxFeaturesRule r : cfg.forest.rules)
        grid.push_back({n, c, r, cfg.forest_seed(), cfg.forest.max_depth});
  TuneResult tuned = detail::stage("tune", [&] {
    return tune(ds, split.train, split.validation, grid);
  });
  {
    std::ostringstream os;
    tuning_to_csv(tuned, os);
    detail::write_text_file(out_dir / "tuning.csv", os.str());
  }
  ForestModel model = detail::stage("train", [&] { return fit_forest(ds, pool, tuned.best); });
  detail::write_json_file(out_dir / "model.json", forest_to_json(model));

  // Association matrix on train + validation.
  AssociationOptions assoc_opts = cfg.association;
  assoc_opts.seed = cfg.association_seed();
  AssociationResult assoc = detail::stage("associate", [&] {
    return build_association_matrix(ds, pool, assoc_opts);
  });
  {
    std::ostringstream os;
    association_to_csv(assoc.matrix, os);
    detail::write_text_file(out_dir / "association.csv", os.str());
    detail::write_json_file(out_dir / "association.json", association_to_json(assoc.matrix));
    detail::write_json_file(out_dir / "discretization.json",
                            discretization_report(assoc, ds));
  }

  // Explainer background.
  const BackgroundSet bg = detail::stage("background", [&] {
    return sample_background(ds, pool, cfg.shapley.background_size, cfg.background_seed());
  });
  const BatchPredictor predictor = forest_predictor(model);

  // Global importance over a seeded sample of the pool.
  BiasReport report;
  report.feature_ids = ds.feature_ids();
  for (const auto& f : ds.schema()) report.feature_names.push_back(f.name);
  report.protected_ids = cfg.protected_ids;
  report.class_names = class_names;
  report.positive_class = schema.positive_class;
  report.seed = cfg.seed;
  report.selected_config = tuned.best;
  report.test_accuracy = accuracy(model, ds, split.test);
  if (cfg.shapley.global_instances > 0) {
    detail::stage("global_shap", [&] {
      std::vector<int> sample(pool);
      Rng rng(cfg.global_shap_seed());
      rng.shuffle(sample);
      if (static_cast<std::size_t>(cfg.shapley.global_instances) < sample.size())
        sample.resize(cfg.shapley.global_instances);
      std::vector<std::vector<double>> instances;
      for (int r : sample) instances.push_back(ds.row(r));
      ShapSettings st;
      st.method = cfg.shapley.method;
      st.n_coalitions = cfg.shapley.global_coalitions;
      st.exact_limit = cfg.shapley.exact_limit;
      st.seed = cfg.global_shap_seed();
      report.global_shap_values = global_shap(predictor, instances, bg, positive_class, st);
      std::ostringstream os;
      csv::write_row(os, {"feature", "global_shap"});
      for (std::size_t j = 0; j < report.global_shap_values.size(); ++j)
        csv::write_row(os, {report.feature_ids[j],
                            csv::format_double(report.global_shap_values[j])});
      detail::write_text_file(out_dir / "global_shap.csv", os.str());
      return 0;
    });
  }

  // Select one correct positive and one correct negative test instance.
  const auto selected = detail::stage("select", [&] {
    return select_instances(model, ds, split.test, positive_class, cfg.instance_seed());
  });

  // Explain and simulate per phi.
  SimulationConfig sim_base;
  sim_base.max_iter = cfg.fcm.max_iter;
  sim_base.fp_tol = cfg.fcm.fp_tol;
  sim_base.cycle_window = cfg.fcm.cycle_window;

  for (std::size_t si = 0; si < selected.size(); ++si) {
    const SelectedInstance& sel = selected[si];
    InstanceReport inst;
    inst.name = si == 0 ? "positive" : "negative";
    inst.row = sel.row;
    inst.class_name = class_names[sel.label];

    const std::vector<double> row = ds.row(sel.row);
    ShapSettings st;
    st.method = cfg.shapley.method;
    st.n_coalitions = cfg.shapley.n_coalitions;
    st.exact_limit = cfg.shapley.exact_limit;
    st.seed = derive_seed(cfg.shap_seed(), si);
    const ShapExplanation expl = detail::stage("explain", [&] {
      return explain_instance(predictor, row, bg, positive_class, st);
    });
    inst.prediction = expl.prediction;
    inst.base_value = expl.base_value;
    inst.attributions = expl.attributions;
    {
      std::ostringstream os;
      shap_to_csv(expl, report.feature_ids, os);
      detail::write_text_file(out_dir / ("shap_" + inst.name + ".csv"), os.str());
      detail::write_json_file(out_dir / ("shap_" + inst.name + ".meta.json"),
                              {{"row", sel.row},
                               {"class", inst.class_name},
                               {"target_class", schema.positive_class},
                               {"base_value", expl.base_value},
                               {"prediction", expl.prediction},
                               {"method", cfg.shapley.method == ShapMethod::exact ? "exact"
                                                                                  : "kernel"},
                               {"seed", st.seed}});
    }

    const InitialActivation a0 = build_activation_vector(expl, cfg.activation_mode);
    inst.initial_activation = a0.values;
    inst.zero_activation_warning = a0.all_zero;
    inst.eigen = eigen_diagnostics(assoc.matrix.weights, a0.values);

    std::vector<double> abs_attr(expl.attributions.size());
    for (std::size_t j = 0; j < abs_attr.size(); ++j) abs_attr[j] = std::abs(expl.attributions[j]);
    const auto shap_rank = rank_ids(abs_attr, report.feature_ids);

    for (double phi : cfg.fcm.phi_grid) {
      SimulationConfig sim = sim_base;
      sim.phi = phi;
      const SimulationTrace trace = detail::stage("simulate", [&] {
        return simulate(assoc.matrix.weights, a0.values, sim);
      });
      const std::string label = "trace_" + inst.name + "_phi" + detail::phi_label(phi);
      {
        std::ostringstream os;
        write_trace_csv(trace, report.feature_ids, os);
        detail::write_text_file(out_dir / (label + ".csv"), os.str());
        detail::write_json_file(out_dir / (label + ".meta.json"),
                                termination_metadata(trace, phi, sim));
      }

      PhiResult pr;
      pr.phi = phi;
      pr.termination = trace.termination;
      pr.t_alpha = trace.t_alpha;
      pr.period = trace.period;
      pr.hit_zero_raw = trace.hit_zero_raw;
      pr.iterations = static_cast<int>(trace.states.size()) - 1;
      pr.final_activation = trace.final_state();
      double mx = 0.0;
      for (double v : pr.final_activation) mx = std::max(mx, std::abs(v));
      pr.final_normalized = pr.final_activation;
      if (mx > 0.0)
        for (double& v : pr.final_normalized) v /= mx;
      pr.rank_by_shap = shap_rank;
      pr.rank_by_fcm = rank_ids(pr.final_activation, report.feature_ids);
      for (const auto& id : cfg.protected_ids) {
        const int j = ds.feature_index(id);
        ProtectedDelta d;
        d.id = id;
        d.initial = a0.values[j];
        d.final_value = pr.final_activation[j];
        d.delta = d.final_value - d.initial;
        pr.protected_deltas.push_back(d);
      }
      inst.phi_results.push_back(std::move(pr));
    }
    inst.protected_monotone = protected_delta_summary(inst, cfg.protected_ids).monotone;
    report.instances.push_back(std::move(inst));
  }

  detail::stage("report", [&] {
    detail::write_json_file(out_dir / "bias_report.json", bias_report_to_json(report));
    std::ostringstream os;
    os << "Implicit-bias audit summary\n";
    os << "===========================\n";
    os << "dataset: " << cfg.dataset.data_path << " (" << ds.rows() << " rows, "
       << ds.features() << " features)\n";
    os << "positive class: " << schema.positive_class << "\n";
    os << "selected forest: " << tuned.best.n_estimators << " trees, "
       << to_string(tuned.best.criterion) << ", " << to_string(tuned.best.max_features)
       << "; test accuracy " << csv::format_double(report.test_accuracy) << "\n";
    os << "protected features:";
    for (const auto& id : cfg.protected_ids) os << ' ' << id;
    os << "\nmaster seed: " << cfg.seed << "\n\n";
    if (!report.global_shap_values.empty()) {
      os << "global |SHAP| ranking: ";
      const auto ranked = rank_ids(report.global_shap_values, report.feature_ids);
      for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i)
        os << (i ? ", " : "") << ranked[i];
      os << ", ...\n\n";
    }
    for (const InstanceReport& inst : report.instances) {
      os << "instance " << inst.name << " (row " << inst.row << ", class " << inst.class_name
         << "): prediction=" << csv::format_double(inst.prediction)
         << " base=" << csv::format_double(inst.base_value) << "\n";
      os << "  eigen: dominant=" << csv::format_double(inst.eigen.dominant_value)
         << " second=" << csv::format_double(inst.eigen.second_value)
         << " strictly_dominant=" << (inst.eigen.strictly_dominant ? "yes" : "no")
         << " a0_aligned=" << (inst.eigen.a0_aligned ? "yes" : "no") << "\n";
      os << "  phi    termination  iters  protected (id: initial -> final, delta)\n";
      for (const PhiResult& pr : inst.phi_results) {
        std::string phi = detail::phi_label(pr.phi);
        phi.resize(5, ' ');
        os << "  " << phi << "  " << to_string(pr.termination) << "  " << pr.iterations
           << "  ";
        for (const ProtectedDelta& d : pr.protected_deltas)
          os << d.id << ": " << csv::format_double(d.initial) << " -> "
             << csv::format_double(d.final_value) << " (" << csv::format_double(d.delta)
             << ")  ";
        os << "\n";
      }
      os << "  monotone final activation across phi grid:";
      for (const auto& [id, flag] : inst.protected_monotone)
        os << ' ' << id << "=" << (flag ? "yes" : "no");
      os << "\n\n";
    }
    detail::write_text_file(out_dir / "summary.txt", os.str());
    return 0;
  });

  return {std::move(report), out_dir};
}

}  // namespace fcmaudit
