// Command-line front end for the implicit-bias audit toolkit.
//
// Subcommands: ingest, associate, train, explain, simulate, audit.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "fcmaudit/fcmaudit.hpp"

using namespace fcmaudit;
namespace fs = std::filesystem;

namespace {

struct DataArgs {
  std::string data_path;
  std::string schema_path;
  std::string delimiter = ",";
  bool header = false;
  bool normalize = false;
  int max_rows = 0;
  std::uint64_t subsample_seed = 7;
};

void add_data_options(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--data", args.data_path, "dataset file (label column last)")->required();
  cmd->add_option("--schema", args.schema_path, "schema sidecar JSON")->required();
  cmd->add_option("--delimiter", args.delimiter, "cell delimiter (default ',')");
  cmd->add_flag("--header", args.header, "skip a header row");
  cmd->add_flag("--normalize", args.normalize, "min-max scale numeric columns to [0,1]");
  cmd->add_option("--max-rows", args.max_rows, "seeded row subsample cap (0 = all)");
  cmd->add_option("--subsample-seed", args.subsample_seed, "seed for --max-rows sampling");
}

struct LoadedData {
  SchemaFile schema;
  Dataset ds;
};

LoadedData load_data(const DataArgs& args) {
  if (args.delimiter.size() != 1) throw std::runtime_error("--delimiter must be one character");
  LoadedData out;
  out.schema = load_schema(args.schema_path);
  csv::Options opt;
  opt.delimiter = args.delimiter[0];
  opt.has_header = args.header;
  out.ds = load_csv(args.data_path, out.schema.features, opt, out.schema.classes);
  if (args.max_rows > 0) out.ds = subsample(out.ds, args.max_rows, args.subsample_seed);
  if (args.normalize) out.ds = normalize_numeric(out.ds);
  return out;
}

std::vector<int> rows_of(const Dataset& ds) {
  std::vector<int> rows(ds.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

int positive_class_index(const SchemaFile& schema, const Dataset& ds) {
  if (schema.positive_class.empty())
    throw std::runtime_error("schema must declare positive_class");
  const auto& names = ds.class_names();
  const auto it = std::find(names.begin(), names.end(), schema.positive_class);
  if (it == names.end())
    throw std::runtime_error("positive_class '" + schema.positive_class +
                             "' not among dataset classes");
  return static_cast<int>(it - names.begin());
}

int run_ingest(const DataArgs& data, const std::string& out_path) {
  const LoadedData loaded = load_data(data);
  const Dataset& ds = loaded.ds;
  if (!out_path.empty()) {
    std::ostringstream os;
    write_csv(ds, os, ',', true);
    write_file(out_path, os.str());
  }
  std::cout << "rows: " << ds.rows() << "\nfeatures: " << ds.features() << "\n";
  for (std::size_t c = 0; c < ds.class_names().size(); ++c) {
    std::size_t count = 0;
    for (int l : ds.labels())
      if (l == static_cast<int>(c)) ++count;
    std::cout << "class " << ds.class_names()[c] << ": " << count << "\n";
  }
  if (!out_path.empty()) std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_associate(const DataArgs& data, const std::string& out_dir, double alpha, int c_min,
                  int c_max, const std::string& diagonal, std::uint64_t seed) {
  const LoadedData loaded = load_data(data);
  AssociationOptions opts;
  opts.alpha = alpha;
  opts.c_min = c_min;
  opts.c_max = c_max;
  opts.diagonal = diagonal == "zero" ? DiagonalPolicy::zero : DiagonalPolicy::unit;
  opts.seed = seed;
  const AssociationResult res = build_association_matrix(loaded.ds, opts);

  fs::create_directories(out_dir);
  std::ostringstream os;
  association_to_csv(res.matrix, os);
  write_file(fs::path(out_dir) / "association.csv", os.str());
  write_file(fs::path(out_dir) / "association.json", association_to_json(res.matrix).dump(2) + "\n");
  write_file(fs::path(out_dir) / "discretization.json",
             discretization_report(res, loaded.ds).dump(2) + "\n");
  std::cout << "wrote " << out_dir << "/association.{csv,json} and discretization.json\n";
  return 0;
}

int run_train(const DataArgs& data, const std::string& out_dir,
              const std::vector<double>& fractions, std::uint64_t split_seed,
              std::uint64_t forest_seed, int max_depth) {
  const LoadedData loaded = load_data(data);
  const Dataset& ds = loaded.ds;
  if (fractions.size() != 3) throw std::runtime_error("--fractions needs 3 values");
  const SplitIndices split =
      stratified_split(ds, {fractions[0], fractions[1], fractions[2]}, split_seed);

  const TuneResult tuned = tune(ds, split.train, split.validation, default_grid(forest_seed, max_depth));
  std::vector<int> pool(split.train);
  pool.insert(pool.end(), split.validation.begin(), split.validation.end());
  std::sort(pool.begin(), pool.end());
  const ForestModel model = fit_forest(ds, pool, tuned.best);

  fs::create_directories(out_dir);
  nlohmann::json sj{{"seed", split.seed},
                    {"fractions", fractions},
                    {"train", split.train},
                    {"validation", split.validation},
                    {"test", split.test}};
  write_file(fs::path(out_dir) / "split.json", sj.dump(2) + "\n");
  std::ostringstream os;
  tuning_to_csv(tuned, os);
  write_file(fs::path(out_dir) / "tuning.csv", os.str());
  write_file(fs::path(out_dir) / "model.json", forest_to_json(model).dump() + "\n");

  std::cout << "selected: " << tuned.best.n_estimators << " estimators, "
            << to_string(tuned.best.criterion) << ", " << to_string(tuned.best.max_features)
            << "\n";
  std::cout << "validation accuracy: "
            << accuracy(fit_forest(ds, split.train, tuned.best), ds, split.validation) << "\n";
  std::cout << "test accuracy (refit on train+validation): " << accuracy(model, ds, split.test)
            << "\n";
  std::cout << "wrote " << out_dir << "/{split.json,tuning.csv,model.json}\n";
  return 0;
}

int run_explain(const DataArgs& data, const std::string& model_path,
                const std::string& split_path, int row, const std::string& method,
                int background_size, int n_coalitions, std::uint64_t seed,
                const std::string& out_path) {
  const LoadedData loaded = load_data(data);
  const Dataset& ds = loaded.ds;
  const ForestModel model = forest_from_json(read_json(model_path));
  if (model.n_features() != ds.features())
    throw std::runtime_error("model feature count does not match dataset");
  if (row < 0 || static_cast<std::size_t>(row) >= ds.rows())
    throw std::runtime_error("--row out of range");

  std::vector<int> pool;
  if (!split_path.empty()) {
    const nlohmann::json sj = read_json(split_path);
    pool = sj.at("train").get<std::vector<int>>();
    const auto val = sj.at("validation").get<std::vector<int>>();
    pool.insert(pool.end(), val.begin(), val.end());
    std::sort(pool.begin(), pool.end());
  } else {
    pool = rows_of(ds);
  }

  const int target = positive_class_index(loaded.schema, ds);
  const BackgroundSet bg = sample_background(ds, pool, background_size, derive_seed(seed, 1));
  ShapSettings st;
  st.method = method == "exact" ? ShapMethod::exact : ShapMethod::kernel;
  st.n_coalitions = n_coalitions;
  st.seed = derive_seed(seed, 2);
  const ShapExplanation e =
      explain_instance(forest_predictor(model), ds.row(row), bg, target, st);

  std::ostringstream os;
  shap_to_csv(e, ds.feature_ids(), os);
  write_file(out_path, os.str());
  nlohmann::json meta{{"row", row},
                      {"class", ds.class_names()[ds.labels()[row]]},
                      {"target_class", loaded.schema.positive_class},
                      {"base_value", e.base_value},
                      {"prediction", e.prediction},
                      {"method", method},
                      {"seed", seed}};
  write_file(out_path + ".meta.json", meta.dump(2) + "\n");
  std::cout << "base value: " << e.base_value << "\nprediction: " << e.prediction << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_simulate(const std::string& weights_path, const std::string& a0_csv,
                 const std::string& a0_values, const std::vector<double>& phis, int max_iter,
                 double fp_tol, int cycle_window, const std::string& out_dir) {
  const AssociationMatrix am = association_from_json(read_json(weights_path));

  ActivationVector a0;
  if (!a0_values.empty()) {
    std::stringstream ss(a0_values);
    std::string cell;
    while (std::getline(ss, cell, ',')) a0.push_back(std::stod(cell));
  } else if (!a0_csv.empty()) {
    // shap CSV: feature, attribution, abs_attribution. A(0) = |attribution|.
    std::ifstream in(a0_csv);
    if (!in) throw std::runtime_error("cannot open " + a0_csv);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = csv::split_line(line, {});
      if (cells.size() < 2) throw std::runtime_error("malformed SHAP csv line: " + line);
      a0.push_back(std::abs(std::stod(cells[1])));
    }
  } else {
    throw std::runtime_error("provide --a0 (shap csv) or --a0-values");
  }
  if (a0.size() != am.size())
    throw std::runtime_error("A(0) length " + std::to_string(a0.size()) +
                             " does not match matrix size " + std::to_string(am.size()));

  fs::create_directories(out_dir);
  for (double phi : phis) {
    SimulationConfig cfg;
    cfg.phi = phi;
    cfg.max_iter = max_iter;
    cfg.fp_tol = fp_tol;
    cfg.cycle_window = cycle_window;
    const SimulationTrace tr = simulate(am.weights, a0, cfg);
    const std::string label = "trace_phi" + csv::format_double(phi);
    std::ostringstream os;
    write_trace_csv(tr, am.feature_ids, os);
    write_file(fs::path(out_dir) / (label + ".csv"), os.str());
    write_file(fs::path(out_dir) / (label + ".meta.json"),
               termination_metadata(tr, phi, cfg).dump(2) + "\n");
    std::cout << "phi=" << phi << ": " << to_string(tr.termination) << " after "
              << tr.states.size() - 1 << " iterations";
    if (tr.hit_zero_raw) std::cout << " (zero raw vector hit)";
    std::cout << "\n";
  }
  std::cout << "wrote traces under " << out_dir << "\n";
  return 0;
}

int run_audit_cmd(const std::string& config_path, const std::string& out_dir,
                  std::int64_t seed_override, const std::vector<double>& phi_override) {
  AuditConfig cfg = load_audit_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!phi_override.empty()) cfg.fcm.phi_grid = phi_override;
  const AuditArtifacts art = run_audit(cfg, out_dir);

  for (const InstanceReport& inst : art.report.instances) {
    std::cout << inst.name << " instance (row " << inst.row << ", class " << inst.class_name
              << "): prediction " << inst.prediction << ", base " << inst.base_value << "\n";
    for (const auto& [id, mono] : inst.protected_monotone)
      std::cout << "  " << id << " final activation monotone in phi: " << (mono ? "yes" : "no")
                << "\n";
  }
  std::cout << "artifact bundle: " << art.out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit-bias audit toolkit: SHAP-initialized fuzzy cognitive map analysis"};
  app.require_subcommand(1);

  // ingest
  DataArgs ingest_data;
  std::string ingest_out;
  auto* ingest = app.add_subcommand("ingest", "load, validate and re-emit a dataset");
  add_data_options(ingest, ingest_data);
  ingest->add_option("--out", ingest_out, "write the (normalized) dataset as CSV");

  // associate
  DataArgs assoc_data;
  std::string assoc_out = "out";
  double assoc_alpha = 2.0;
  int assoc_cmin = 2, assoc_cmax = 10;
  std::string assoc_diag = "unit";
  std::uint64_t assoc_seed = 7;
  auto* assoc = app.add_subcommand("associate", "build the feature-association matrix");
  add_data_options(assoc, assoc_data);
  assoc->add_option("--out-dir", assoc_out, "output directory");
  assoc->add_option("--alpha", assoc_alpha, "fuzzification coefficient (> 1)");
  assoc->add_option("--c-min", assoc_cmin, "smallest cluster count tried");
  assoc->add_option("--c-max", assoc_cmax, "largest cluster count tried");
  assoc->add_option("--diagonal", assoc_diag, "diagonal policy: unit|zero")
      ->check(CLI::IsMember({"unit", "zero"}));
  assoc->add_option("--seed", assoc_seed, "discretization seed");

  // train
  DataArgs train_data;
  std::string train_out = "out";
  std::vector<double> train_fractions{0.7, 0.2, 0.1};
  std::uint64_t train_split_seed = 1, train_forest_seed = 2;
  int train_max_depth = -1;
  auto* train_cmd = app.add_subcommand("train", "split, tune and train the forest");
  add_data_options(train_cmd, train_data);
  train_cmd->add_option("--out-dir", train_out, "output directory");
  train_cmd->add_option("--fractions", train_fractions, "train/validation/test fractions")
      ->expected(3);
  train_cmd->add_option("--split-seed", train_split_seed, "stratified split seed");
  train_cmd->add_option("--forest-seed", train_forest_seed, "forest seed");
  train_cmd->add_option("--max-depth", train_max_depth, "tree depth cap (-1 = unlimited)");

  // explain
  DataArgs explain_data;
  std::string explain_model, explain_split, explain_method = "kernel";
  std::string explain_out = "shap.csv";
  int explain_row = 0, explain_bg = 100, explain_coalitions = 4096;
  std::uint64_t explain_seed = 3;
  auto* explain = app.add_subcommand("explain", "Shapley attributions for one row");
  add_data_options(explain, explain_data);
  explain->add_option("--model", explain_model, "model.json from `train`")->required();
  explain->add_option("--split", explain_split, "split.json; background uses train+validation");
  explain->add_option("--row", explain_row, "row index to explain")->required();
  explain->add_option("--method", explain_method, "exact|kernel")
      ->check(CLI::IsMember({"exact", "kernel"}));
  explain->add_option("--background", explain_bg, "background sample size");
  explain->add_option("--n-coalitions", explain_coalitions, "kernel coalition budget");
  explain->add_option("--seed", explain_seed, "explainer seed");
  explain->add_option("--out", explain_out, "output CSV path");

  // simulate
  std::string sim_weights, sim_a0_csv, sim_a0_values, sim_out = "out";
  std::vector<double> sim_phis{0.8};
  int sim_max_iter = 100, sim_cycle_window = 20;
  double sim_fp_tol = 1e-6;
  auto* sim = app.add_subcommand("simulate", "run the reasoning rule from an activation vector");
  sim->add_option("--weights", sim_weights, "association.json from `associate`")->required();
  sim->add_option("--a0", sim_a0_csv, "SHAP csv; A(0) = |attribution|");
  sim->add_option("--a0-values", sim_a0_values, "comma-separated A(0) values");
  sim->add_option("--phi", sim_phis, "phi values (one trace each)");
  sim->add_option("--max-iter", sim_max_iter, "iteration horizon T");
  sim->add_option("--fp-tol", sim_fp_tol, "fixed-point tolerance");
  sim->add_option("--cycle-window", sim_cycle_window, "largest period searched");
  sim->add_option("--out-dir", sim_out, "output directory");

  // audit
  std::string audit_config, audit_out = "audit_out";
  std::int64_t audit_seed = -1;
  std::vector<double> audit_phis;
  auto* audit = app.add_subcommand("audit", "full pipeline: ingest through bias report");
  audit->add_option("--config", audit_config, "audit config JSON")->required();
  audit->add_option("--out-dir", audit_out, "artifact directory");
  audit->add_option("--seed", audit_seed, "override the master seed");
  audit->add_option("--phi", audit_phis, "override the phi grid");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return run_ingest(ingest_data, ingest_out);
    if (assoc->parsed())
      return run_associate(assoc_data, assoc_out, assoc_alpha, assoc_cmin, assoc_cmax,
                           assoc_diag, assoc_seed);
    if (train_cmd->parsed())
      return run_train(train_data, train_out, train_fractions, train_split_seed,
                       train_forest_seed, train_max_depth);
    if (explain->parsed())
      return run_explain(explain_data, explain_model, explain_split, explain_row,
                         explain_method, explain_bg, explain_coalitions, explain_seed,
                         explain_out);
    if (sim->parsed())
      return run_simulate(sim_weights, sim_a0_csv, sim_a0_values, sim_phis, sim_max_iter,
                          sim_fp_tol, sim_cycle_window, sim_out);
    if (audit->parsed()) return run_audit_cmd(audit_config, audit_out, audit_seed, audit_phis);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
