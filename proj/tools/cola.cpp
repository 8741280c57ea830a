// Command-line front end: generate counterfactuals, sparsify them, and
// compare reports.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cola/cola.hpp"

namespace {

using cola::fail;

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string config;
};

struct GenerateOptions {
  std::string schema, data, model, out;
  std::string generator = "wachter";
  std::string target;
  std::size_t max_iters = 1000;
  double step_size = 0.05;
  double lambda_init = 0.1;
  double lambda_growth = 1.1;
  double margin = 0.0;
  std::string distance = "l1";
  std::size_t k = 1;
};

struct SparsifyOptions {
  std::string schema, model, factuals, counterfactuals, out, report;
  std::string heatmap, save_matching, save_attributions;
  std::string pairing = "auto";
  std::string matcher = "index";
  std::string attributor = "shapley-exact";
  std::size_t samples = 1000;
  std::size_t exact_limit = cola::kDefaultExactLimit;
  std::string mode = "sparsest-valid";
  std::optional<long long> budget;
  std::string allocation = "global-greedy";
  std::string target;
  std::string scale = "probability";
  bool timing = false;
};

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string out;
};

// Appends `--key value` for every config entry whose flag is absent from the
// command line, so explicit flags always win. Keys may be flat or nested under
// the subcommand name.
std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::string path;
  std::string command;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
    if (command.empty() && (args[i] == "generate" || args[i] == "sparsify" || args[i] == "report")) {
      command = args[i];
    }
  }
  if (path.empty()) return args;
  const nlohmann::json cfg = cola::read_json_file(path);
  if (!cfg.is_object()) fail(path + ": config must be a JSON object");

  auto present = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.starts_with(flag + "=")) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  auto inject = [&](const std::string& key, const nlohmann::json& value) {
    const std::string flag = "--" + key;
    if (present(flag)) return;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_string()) {
      extra.push_back(flag);
      extra.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      extra.push_back(flag);
      extra.push_back(value.dump());
    } else if (!value.is_null()) {
      fail(path + ": unsupported value for \"" + key + "\"");
    }
  };
  for (const auto& [key, value] : cfg.items()) {
    if (key == "generate" || key == "sparsify" || key == "report") {
      if (key != command) continue;
      for (const auto& [sub_key, sub_value] : value.items()) inject(sub_key, sub_value);
    } else if (key != "config") {
      inject(key, value);
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

int resolve_target(const cola::FeatureSchema& schema, const std::string& text) {
  if (text.empty()) return 1;
  if (auto idx = schema.class_index(text)) return *idx;
  fail("target \"" + text + "\" is not one of the label classes");
}

cola::SchemaPtr load_schema_ptr(const std::string& path) {
  return std::make_shared<const cola::FeatureSchema>(cola::load_schema(path));
}

cola::ModelSpec load_checked_model(const std::string& path, const cola::FeatureSchema& schema) {
  cola::ModelSpec model = cola::load_model(path);
  try {
    model.preprocess.check_compatible(schema);
  } catch (const cola::Error& e) {
    fail(path + ": " + e.what());
  }
  if (model.num_classes() != schema.label.classes.size()) {
    fail(path + ": model has " + std::to_string(model.num_classes()) + " classes, schema has " +
         std::to_string(schema.label.classes.size()));
  }
  return model;
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file: " + path);
  out << j.dump(2) << '\n';
  if (!out) fail("write failed: " + path);
}

int run_generate(const GlobalOptions& g, const GenerateOptions& o) {
  const auto schema = load_schema_ptr(o.schema);
  const auto model = load_checked_model(o.model, *schema);
  const auto factuals = cola::load_table(o.data, schema, false);

  cola::GeneratorParams params;
  params.target_class = resolve_target(*schema, o.target);
  params.max_iters = o.max_iters;
  params.step_size = o.step_size;
  params.lambda_init = o.lambda_init;
  params.lambda_growth = o.lambda_growth;
  params.margin = o.margin;
  params.distance = cola::parse_distance(o.distance);
  params.k_per_instance = o.k;
  params.seed = g.seed;
  params.threads = g.threads;

  cola::GeneratedSet set;
  bool indexed = false;
  if (o.generator == "wachter") {
    set = cola::wachter_generate(model, factuals, params);
  } else if (o.generator == "diverse") {
    set = cola::diverse_generate(model, factuals, params);
    indexed = true;
  } else {
    fail("unknown generator \"" + o.generator + "\" (expected wachter|diverse)");
  }
  std::ofstream out(o.out, std::ios::binary);
  if (!out) fail("cannot write file: " + o.out);
  set.write_csv(out, indexed);
  if (!out) fail("write failed: " + o.out);

  const std::size_t rows = set.counterfactuals.rows();
  const std::size_t valid = set.valid_count();
  std::cout << "generated=" << rows << " valid=" << valid << " validity="
            << cola::svg::fixed(rows ? static_cast<double>(valid) / static_cast<double>(rows) : 0.0, 3)
            << '\n';
  return 0;
}

int run_sparsify(const GlobalOptions& g, const SparsifyOptions& o) {
  const auto schema = load_schema_ptr(o.schema);
  const auto model = load_checked_model(o.model, *schema);
  const auto factuals = cola::load_table(o.factuals, schema, false);
  const auto imported = cola::import_external(o.counterfactuals, schema,
                                              cola::parse_pairing(o.pairing), factuals.rows());

  cola::SparsifyConfig cfg;
  cfg.matcher = cola::parse_matcher(o.matcher);
  cfg.attribution.method = cola::parse_attribution_method(o.attributor);
  cfg.attribution.samples = o.samples;
  cfg.attribution.seed = g.seed;
  cfg.attribution.target = resolve_target(*schema, o.target);
  cfg.attribution.scale = cola::parse_score_scale(o.scale);
  cfg.attribution.exact_limit = o.exact_limit;
  cfg.mode = cola::parse_compose_mode(o.mode);
  cfg.allocation = cola::parse_allocation(o.allocation);
  cfg.external_index = imported.factual_index;
  cfg.threads = g.threads;
  cfg.record_runtime = o.timing;
  if (cfg.mode == cola::ComposeMode::kBudget) {
    if (!o.budget) fail("--mode budget requires --budget");
    cfg.budget = *o.budget;
  }
  if (cfg.attribution.method == cola::AttributionMethod::kSampled && o.samples < 1) {
    fail("--samples must be >= 1");
  }
  if (cfg.attribution.target < 0 ||
      static_cast<std::size_t>(cfg.attribution.target) >= model.num_classes()) {
    fail("target class out of range");
  }

  const auto run = cola::sparsify(model, factuals, imported.data, cfg);
  const auto& result = run.result;

  bool identity = result.pairs.size() == factuals.rows();
  for (std::size_t k = 0; identity && k < result.pairs.size(); ++k) {
    identity = result.pairs[k].factual == k;
  }
  std::vector<cola::ExtraColumn> extra;
  if (!identity) {
    cola::ExtraColumn col{"_factual_index", {}};
    for (const auto& p : result.pairs) col.values.push_back(std::to_string(p.factual));
    extra.push_back(std::move(col));
  }
  cola::ExtraColumn status{"_status", {}}, edits{"_edits", {}};
  for (std::size_t k = 0; k < result.pairs.size(); ++k) {
    status.values.push_back(cola::to_string(result.status[k]));
    edits.values.push_back(std::to_string(result.edits[k]));
  }
  extra.push_back(std::move(status));
  extra.push_back(std::move(edits));
  cola::write_table_file(o.out, result.refined, extra, false);
  if (!o.report.empty()) write_json(o.report, run.report.to_json());
  if (!o.save_matching.empty()) write_json(o.save_matching, run.matching.to_json());
  if (!o.save_attributions.empty()) {
    write_json(o.save_attributions, cola::attributions_to_json(run.tables, *schema));
  }
  if (!o.heatmap.empty()) {
    std::vector<std::size_t> fi;
    for (const auto& p : run.matching.pairs) fi.push_back(p.factual);
    const auto matched_factuals = factuals.select(fi);
    const auto before = cola::pair_diffs(run.matching, factuals, imported.data);
    const auto after = cola::diff_features(matched_factuals, result.refined);
    cola::svg::emit_heatmap_svg(before, after, *schema, o.heatmap);
  }
  std::cout << "reduction=" << cola::svg::fixed(run.report.reduction_pct) << "% validity="
            << cola::svg::fixed(run.report.validity_after, 3) << '\n';
  return 0;
}

int run_report(const ReportOptions& o) {
  std::vector<cola::Report> reports;
  for (const auto& path : o.inputs) {
    std::ifstream in(path);
    if (!in) fail("cannot open file: " + path);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(path + ": parse error: " + e.what());
    }
    try {
      reports.push_back(cola::Report::from_json(j));
    } catch (const cola::Error& e) {
      fail(path + ": " + e.what());
    }
  }
  cola::check_comparable(reports);
  cola::svg::compare_policies(reports, o.out);
  std::cout << "reports=" << reports.size() << " chart=" << o.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparsify counterfactual explanations for tabular classifiers", "cola"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", global.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  app.add_option("--config", global.config,
                 "JSON file of flag values (flat keys, or nested under the command name); "
                 "command-line flags override it");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate counterfactuals for factual rows");
  generate->add_option("--schema", gen.schema, "Schema JSON")->required();
  generate->add_option("--data", gen.data, "Factual rows CSV")->required();
  generate->add_option("--model", gen.model, "Model JSON")->required();
  generate->add_option("--out", gen.out, "Output counterfactual CSV")->required();
  generate->add_option("--generator", gen.generator, "wachter | diverse")->capture_default_str();
  generate->add_option("--target", gen.target, "Target class name (default: class index 1)");
  generate->add_option("--max-iters", gen.max_iters, "Iterations / random samples per row")
      ->capture_default_str();
  generate->add_option("--step-size", gen.step_size, "Gradient step size")->capture_default_str();
  generate->add_option("--lambda-init", gen.lambda_init, "Initial validity weight")
      ->capture_default_str();
  generate->add_option("--lambda-growth", gen.lambda_growth,
                       "Validity weight growth every 50 iterations below the margin")
      ->capture_default_str();
  generate->add_option("--margin", gen.margin, "Probability margin beyond the decision boundary")
      ->capture_default_str();
  generate->add_option("--distance", gen.distance, "l1 | l2 (encoded space)")
      ->capture_default_str();
  generate->add_option("--k", gen.k, "Counterfactuals per factual (diverse)")
      ->capture_default_str();

  SparsifyOptions sp;
  auto* sparsify = app.add_subcommand("sparsify", "Refine counterfactuals to change fewer features");
  sparsify->add_option("--schema", sp.schema, "Schema JSON")->required();
  sparsify->add_option("--model", sp.model, "Model JSON")->required();
  sparsify->add_option("--factuals", sp.factuals, "Factual rows CSV")->required();
  sparsify->add_option("--counterfactuals", sp.counterfactuals, "Counterfactual rows CSV")
      ->required();
  sparsify->add_option("--out", sp.out, "Refined counterfactual CSV")->required();
  sparsify->add_option("--report", sp.report, "Report JSON");
  sparsify->add_option("--heatmap", sp.heatmap, "Before/after change heatmap SVG");
  sparsify->add_option("--save-matching", sp.save_matching, "Matching JSON");
  sparsify->add_option("--save-attributions", sp.save_attributions, "Attribution JSON");
  sparsify->add_option("--pairing", sp.pairing, "auto | aligned | indexed")
      ->capture_default_str();
  sparsify->add_option("--matcher", sp.matcher, "index | nearest | ot")->capture_default_str();
  sparsify->add_option("--attributor", sp.attributor, "shapley-exact | shapley-sample")
      ->capture_default_str();
  sparsify->add_option("--samples", sp.samples, "Permutations for shapley-sample")
      ->capture_default_str();
  sparsify->add_option("--exact-limit", sp.exact_limit, "Max features for shapley-exact")
      ->capture_default_str();
  sparsify->add_option("--mode", sp.mode, "sparsest-valid | budget")->capture_default_str();
  sparsify->add_option("--budget", sp.budget, "Edit budget q (budget mode)");
  sparsify->add_option("--allocation", sp.allocation, "global-greedy | per-pair-cap")
      ->capture_default_str();
  sparsify->add_option("--target", sp.target, "Target class name (default: class index 1)");
  sparsify->add_option("--scale", sp.scale, "probability | logit")->capture_default_str();
  sparsify->add_flag("--timing", sp.timing, "Record runtime_ms in the report");

  ReportOptions rep;
  auto* report = app.add_subcommand("report", "Compare report JSONs in one bar chart");
  report->add_option("reports", rep.inputs, "Report JSON files")->required();
  report->add_option("--out", rep.out, "Output SVG")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (generate->parsed()) return run_generate(global, gen);
    if (sparsify->parsed()) return run_sparsify(global, sp);
    if (report->parsed()) return run_report(rep);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const cola::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == cola::ErrorKind::kInput ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
