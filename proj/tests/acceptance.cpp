// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>

#include "test_support.hpp"

namespace {

using namespace cola;
using cola::testing::identity_preprocess;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok && o.pass) {
    o.pass = false;
    o.detail = what;
  }
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string pct(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

ModelSpec random_model(const PreprocessSpec& prep, bool mlp, Rng& rng) {
  return mlp ? cola::testing::random_mlp(prep, {10, 6}, 1, rng)
             : cola::testing::random_logistic(prep, rng);
}

SwapGame game_of(const ModelSpec& m, const std::vector<double>& x, const std::vector<double>& c,
                 ScoreScale scale) {
  return {x, c, &m, 1, scale, m.preprocess.groups()};
}

Outcome shapley_efficiency() {
  Outcome o;
  Rng rng(101);
  double worst = 0.0, worst_sampled = 0.0;
  int sampled_nonzero = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t p = 2 + rng.below(9);
    auto schema = cola::testing::random_schema(p, true, rng);
    const auto prep = identity_preprocess(*schema);
    const auto model = random_model(prep, k % 2 == 1, rng);
    const auto x = cola::testing::random_encoded_row(prep, rng);
    const auto c = cola::testing::random_encoded_row(prep, rng);
    const auto scale = (k / 2) % 2 ? ScoreScale::kLogit : ScoreScale::kProbability;
    const auto exact = shapley_exact(game_of(model, x, c, scale));
    double sum = 0.0;
    for (double v : exact.phi) sum += v;
    const double gap = std::abs(sum - (exact.v_full - exact.v_empty));
    worst = std::max(worst, gap);
    require(o, gap < 1e-9, "exact gap " + num(gap) + " at pair " + std::to_string(k));
    const auto sampled = shapley_sample(game_of(model, x, c, scale), 32, 500 + k);
    double ssum = 0.0;
    for (double v : sampled.phi) ssum += v;
    const double sgap = std::abs(ssum - (sampled.v_full - sampled.v_empty));
    worst_sampled = std::max(worst_sampled, sgap);
    sampled_nonzero += sgap != 0.0;
  }
  require(o, sampled_nonzero == 0,
          "sampled gap nonzero on " + std::to_string(sampled_nonzero) +
              "/200 pairs (max " + num(worst_sampled) + ", exact max " + num(worst) + ")");
  if (o.pass) o.detail = "200 pairs, max exact gap " + num(worst) + ", sampled gap 0";
  return o;
}

Outcome shapley_oracle() {
  Outcome o;
  Rng rng(102);
  double worst = 0.0, worst_closed = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t p = 1 + rng.below(6);
    auto schema = cola::testing::random_schema(p, true, rng);
    const auto prep = identity_preprocess(*schema);
    const auto model = random_model(prep, k % 2 == 1, rng);
    const auto x = cola::testing::random_encoded_row(prep, rng);
    const auto c = cola::testing::random_encoded_row(prep, rng);
    for (auto scale : {ScoreScale::kProbability, ScoreScale::kLogit}) {
      const auto sv = shapley_exact(game_of(model, x, c, scale));
      const auto oracle = cola::testing::permutation_average_shapley(model, x, c, 1, scale);
      for (std::size_t j = 0; j < p; ++j) worst = std::max(worst, std::abs(sv.phi[j] - oracle[j]));
    }
    if (model.kind == ModelKind::kLogistic) {
      const auto sv = shapley_exact(game_of(model, x, c, ScoreScale::kLogit));
      const auto groups = prep.groups();
      for (std::size_t j = 0; j < p; ++j) {
        double closed = 0.0;
        for (std::size_t t = 0; t < groups[j].width; ++t) {
          const std::size_t col = groups[j].offset + t;
          closed += model.weights[col] * (c[col] - x[col]);
        }
        worst_closed = std::max(worst_closed, std::abs(sv.phi[j] - closed));
      }
    }
  }
  require(o, worst <= 1e-9, "oracle deviation " + num(worst));
  require(o, worst_closed <= 1e-12, "closed-form deviation " + num(worst_closed));
  if (o.pass) {
    o.detail = "100 games p<=6, oracle dev " + num(worst) + ", closed-form dev " + num(worst_closed);
  }
  return o;
}

Outcome assignment_optimality() {
  Outcome o;
  Rng rng(103);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng.below(7);
    Matrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) cost(i, j) = 100.0 * rng.uniform();
    }
    const auto m = match_ot(cost);
    const double best = cola::testing::brute_force_assignment(cost);
    require(o, std::abs(m.total_cost - best) <= 1e-9 * std::max(1.0, best),
            "instance " + std::to_string(k) + ": ot " + num(m.total_cost) + " vs " + num(best));
    std::set<std::size_t> cols;
    for (const auto& p : m.pairs) cols.insert(p.counterfactual);
    require(o, m.pairs.size() == n && cols.size() == n, "not a bijection");
  }
  if (o.pass) o.detail = "100 instances n<=7 equal brute force";
  return o;
}

Outcome gradient_correctness() {
  Outcome o;
  Rng rng(104);
  double worst = 0.0;
  int checked = 0, skipped = 0;
  while (checked < 100) {
    auto schema = cola::testing::random_schema(1 + rng.below(8), true, rng);
    const auto prep = identity_preprocess(*schema);
    const std::size_t outputs = checked % 3 == 0 ? 3 : 1;
    const auto model = cola::testing::random_mlp(prep, {1 + rng.below(12), 1 + rng.below(12)},
                                                 outputs, rng);
    const auto x = cola::testing::random_encoded_row(prep, rng);
    if (cola::testing::min_relu_margin(model, x) < 1e-4) {
      ++skipped;
      continue;
    }
    const int target = static_cast<int>(rng.below(model.num_classes()));
    for (auto scale : {ScoreScale::kProbability, ScoreScale::kLogit}) {
      const auto g = gradient_score(model, x, target, scale);
      const auto fd = cola::testing::central_difference(model, x, target, scale);
      for (std::size_t k = 0; k < g.size(); ++k) {
        worst = std::max(worst, std::abs(g[k] - fd[k]) / std::max(1.0, std::abs(fd[k])));
      }
    }
    ++checked;
  }
  require(o, worst < 1e-5, "max relative error " + num(worst));
  if (o.pass) {
    o.detail = "100 mlps (" + std::to_string(skipped) + " near-kink skipped), max rel err " +
               num(worst);
  }
  return o;
}

struct Problem {
  SchemaPtr schema;
  ModelSpec model;
  InstanceSet f, c;
};

Problem random_problem(Rng& rng, std::size_t p, std::size_t n, std::size_t m) {
  Problem pr;
  pr.schema = cola::testing::random_schema(p, true, rng);
  pr.model = cola::testing::random_mlp(identity_preprocess(*pr.schema), {8}, 1, rng);
  pr.f = InstanceSet(pr.schema);
  pr.c = InstanceSet(pr.schema);
  for (std::size_t i = 0; i < n; ++i) pr.f.append_row(cola::testing::random_original_row(*pr.schema, rng));
  for (std::size_t i = 0; i < m; ++i) pr.c.append_row(cola::testing::random_original_row(*pr.schema, rng));
  return pr;
}

void check_validity(Outcome& o, const Problem& pr, const SparsifyOutput& out, std::size_t& rows) {
  const auto before = pair_diffs(out.matching, pr.f, pr.c);
  std::vector<double> enc;
  for (std::size_t k = 0; k < out.matching.pairs.size(); ++k) {
    const Pair p = out.matching.pairs[k];
    if (out.result.status[k] == RowStatus::kRefinedValid) {
      enc = encode_row(out.result.refined.row(k), pr.model.preprocess);
      require(o, predict_label_row(pr.model, enc) == 1, "refined_valid row not in target class");
      ++rows;
    }
    for (std::size_t j = 0; j < pr.schema->size(); ++j) {
      const bool changed = cell_changed(pr.schema->features[j], pr.f.cell(p.factual, j),
                                        out.result.refined.cell(k, j), kNumericChangeTolerance);
      require(o, !changed || before.at(k, j), "refined changed a feature the counterfactual kept");
    }
  }
}

Outcome validity_preservation() {
  Outcome o;
  Rng rng(105);
  std::size_t rows = 0;
  for (int t = 0; t < 40; ++t) {
    const auto pr = random_problem(rng, 2 + rng.below(7), 10 + rng.below(10), 10 + rng.below(10));
    SparsifyConfig cfg;
    cfg.matcher = static_cast<MatcherPolicy>(1 + t % 2);
    cfg.attribution.method = t % 3 == 0 ? AttributionMethod::kSampled : AttributionMethod::kExact;
    cfg.attribution.samples = 50;
    cfg.attribution.seed = t;
    if (t % 4 == 3) {
      cfg.mode = ComposeMode::kBudget;
      cfg.budget = static_cast<long long>(rng.below(30));
      cfg.allocation = t % 8 == 3 ? Allocation::kGlobalGreedy : Allocation::kPerPairCap;
    }
    check_validity(o, pr, sparsify(pr.model, pr.f, pr.c, cfg), rows);
  }
  if (o.pass) o.detail = "40 runs, " + std::to_string(rows) + " refined_valid rows re-verified";
  return o;
}

Outcome budget_respect() {
  Outcome o;
  Rng rng(106);
  int runs = 0;
  for (int t = 0; t < 30; ++t) {
    const auto pr = random_problem(rng, 2 + rng.below(6), 12, 12);
    SparsifyConfig cfg;
    const auto sparse = sparsify(pr.model, pr.f, pr.c, cfg);
    const std::size_t full = pair_diffs(sparse.matching, pr.f, pr.c).total;
    for (auto alloc : {Allocation::kGlobalGreedy, Allocation::kPerPairCap}) {
      cfg.mode = ComposeMode::kBudget;
      cfg.allocation = alloc;
      for (int rep = 0; rep < 4; ++rep) {
        const auto q = static_cast<long long>(rng.below(full + 1));
        cfg.budget = q;
        const auto r = sparsify(pr.model, pr.f, pr.c, cfg).result;
        if (alloc == Allocation::kGlobalGreedy) {
          require(o, r.applied_edits <= static_cast<std::size_t>(q), "global budget exceeded");
        } else {
          for (auto e : r.edits) require(o, e <= static_cast<std::size_t>(q), "per-pair cap exceeded");
        }
        ++runs;
      }
      cfg.budget = static_cast<long long>(full);
      const auto slack = sparsify(pr.model, pr.f, pr.c, cfg).result;
      require(o, slack.refined == sparse.result.refined && slack.status == sparse.result.status &&
                     slack.edits == sparse.result.edits,
              "q >= full diff differs from sparsest-valid");
    }
  }
  if (o.pass) o.detail = std::to_string(runs) + " budget runs within q; slack q reproduces sparsest-valid";
  return o;
}

std::string fixture(const std::string& name) {
  return std::string(COLA_FIXTURE_DIR) + "/synthetic/" + name;
}

Outcome fixture_magnitude(const std::filesystem::path& dir) {
  Outcome o;
  std::filesystem::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string inputs = "--threads 1 --schema " + fixture("schema.json") + " --model " +
                             fixture("model.json");
  auto r = cola::testing::run_cli("generate " + inputs + " --data " + fixture("factuals.csv") +
                                      " --config " + fixture("generate.json") + " --out " +
                                      (dir / "cf.csv").string(),
                                  dir);
  require(o, r.exit_code == 0, "generate failed: " + r.err);
  if (!o.pass) return o;
  r = cola::testing::run_cli("sparsify " + inputs + " --factuals " + fixture("factuals.csv") +
                                 " --counterfactuals " + (dir / "cf.csv").string() + " --out " +
                                 (dir / "refined.csv").string() + " --report " +
                                 (dir / "report.json").string(),
                             dir);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  require(o, r.exit_code == 0, "sparsify failed: " + r.err);
  if (!o.pass) return o;
  const auto rep = Report::from_json(
      nlohmann::ordered_json::parse(cola::testing::read_file((dir / "report.json").string())));
  require(o, rep.reduction_pct >= 30.0 && rep.reduction_pct <= 95.0,
          "reduction " + pct(rep.reduction_pct) + "% outside [30, 95]");
  require(o, secs < 60.0, "took " + num(secs) + " s");
  if (o.pass) {
    o.detail = "reduction " + pct(rep.reduction_pct) + "% (" + std::to_string(rep.changed_before) +
               " -> " + std::to_string(rep.changed_after) + "), validity " +
               pct(rep.validity_after) + ", " + num(secs) + " s";
  }
  return o;
}

Outcome greedy_vs_exhaustive() {
  Outcome o;
  Rng rng(108);
  int compared = 0, equal_checked = 0;
  while (compared < 50) {
    const auto pr = random_problem(rng, 2 + rng.below(5), 1, 1);
    const auto out = sparsify(pr.model, pr.f, pr.c, SparsifyConfig{});
    if (out.result.status[0] != RowStatus::kRefinedValid) continue;
    const auto fe = encode_row(pr.f.row(0), pr.model.preprocess);
    const auto ce = encode_row(pr.c.row(0), pr.model.preprocess);
    const auto best = exhaustive_sparsest(pr.model, fe, ce, pr.model.preprocess.groups(), 1);
    require(o, best && out.result.edits[0] >= best->size(), "greedy beat the exhaustive minimum");
    ++compared;
  }
  // Additive monotone instances: logistic models attributed on the logit scale.
  while (equal_checked < 50) {
    std::vector<Feature> fs;
    const std::size_t p = 2 + rng.below(5);
    for (std::size_t j = 0; j < p; ++j) fs.push_back(cola::testing::numeric("x" + std::to_string(j)));
    auto schema = cola::testing::make_schema(fs);
    const auto prep = identity_preprocess(*schema);
    const auto model = cola::testing::random_logistic(prep, rng);
    InstanceSet f(schema), c(schema);
    f.append_row(cola::testing::random_original_row(*schema, rng));
    c.append_row(cola::testing::random_original_row(*schema, rng));
    SparsifyConfig cfg;
    cfg.attribution.scale = ScoreScale::kLogit;
    const auto out = sparsify(model, f, c, cfg);
    if (out.result.status[0] != RowStatus::kRefinedValid) continue;
    const auto best = exhaustive_sparsest(model, f.row(0), c.row(0), prep.groups(), 1);
    require(o, best && out.result.edits[0] == best->size(), "greedy not optimal on additive instance");
    ++equal_checked;
  }
  if (o.pass) o.detail = "50 random pairs >= oracle, 50 additive pairs == oracle";
  return o;
}

Outcome determinism(const std::filesystem::path& dir) {
  Outcome o;
  const std::string inputs = "--schema " + fixture("schema.json") + " --model " + fixture("model.json");
  const std::string factuals = fixture("factuals.csv");
  struct Command {
    std::string args;
    std::vector<std::string> outputs;
  };
  const std::vector<Command> commands{
      {"generate " + inputs + " --data " + factuals + " --config " + fixture("generate.json") +
           " --max-iters 300 --out @cf.csv",
       {"cf.csv"}},
      {"generate " + inputs + " --data " + factuals +
           " --generator diverse --k 3 --max-iters 200 --seed 9 --out @div.csv",
       {"div.csv"}},
      {"sparsify " + inputs + " --factuals " + factuals + " --counterfactuals " +
           fixture("golden_counterfactuals.csv") +
           " --matcher ot --out @r.csv --report @r.json --save-matching @m.json "
           "--save-attributions @a.json --heatmap @h.svg",
       {"r.csv", "r.json", "m.json", "a.json", "h.svg"}},
      {"sparsify " + inputs + " --factuals " + factuals + " --counterfactuals " +
           fixture("golden_counterfactuals.csv") +
           " --attributor shapley-sample --samples 100 --seed 4 --mode budget --budget 150 "
           "--out @s.csv --report @s.json",
       {"s.csv", "s.json"}},
      {"report " + fixture("golden_report.json") + " @r.json --out @chart.svg", {"chart.svg"}},
  };
  std::size_t files = 0;
  std::vector<std::vector<std::string>> runs;
  for (const char* variant : {"a", "b", "c"}) {
    const auto sub = dir / variant;
    std::filesystem::create_directories(sub);
    std::vector<std::string> texts;
    const std::string threads = std::string(variant) == "c" ? "--threads 4 " : "--threads 1 ";
    for (const auto& cmd : commands) {
      std::string args = cmd.args;
      for (std::size_t pos; (pos = args.find('@')) != std::string::npos;) {
        args.replace(pos, 1, sub.string() + "/");
      }
      const auto r = cola::testing::run_cli(threads + args, sub);
      require(o, r.exit_code == 0, "command failed: " + r.err);
      for (const auto& name : cmd.outputs) texts.push_back(cola::testing::read_file((sub / name).string()));
    }
    files = texts.size();
    runs.push_back(std::move(texts));
  }
  for (std::size_t i = 0; i < files; ++i) {
    require(o, runs[0][i] == runs[1][i], "output " + std::to_string(i) + " differs between repeats");
    require(o, runs[0][i] == runs[2][i], "output " + std::to_string(i) + " differs across --threads");
  }
  if (o.pass) {
    o.detail = std::to_string(commands.size()) + " commands, " + std::to_string(files) +
               " files identical over 2 repeats and --threads 1/4";
  }
  return o;
}

Outcome report_arithmetic(const std::filesystem::path& dir) {
  Outcome o;
  require(o, reduction_pct(10, 5) == 50.0, "reduction_pct(10, 5) != 50");
  std::vector<std::string> paths{fixture("golden_report.json"), (dir / "report.json").string()};
  Rng rng(110);
  std::size_t checked = 0;
  auto check = [&](const Report& rep) {
    std::size_t before = 0, after = 0;
    for (const auto& row : rep.rows) {
      before += row.changed_before;
      after += row.changed_after;
    }
    const double recomputed =
        before == 0 ? 0.0
                    : 100.0 * (static_cast<double>(before) - static_cast<double>(after)) /
                          static_cast<double>(before);
    require(o, before == rep.changed_before && after == rep.changed_after, "row totals differ");
    require(o, std::abs(recomputed - rep.reduction_pct) <= 1e-12,
            "recomputed " + num(recomputed) + " vs " + num(rep.reduction_pct));
    ++checked;
  };
  for (const auto& path : paths) {
    if (!std::filesystem::exists(path)) continue;
    check(Report::from_json(nlohmann::ordered_json::parse(cola::testing::read_file(path))));
  }
  for (int t = 0; t < 20; ++t) {
    const auto pr = random_problem(rng, 2 + rng.below(6), 15, 15);
    check(sparsify(pr.model, pr.f, pr.c, SparsifyConfig{}).report);
  }
  if (o.pass) o.detail = std::to_string(checked) + " reports recomputed within 1e-12; 10 -> 5 gives 50%";
  return o;
}

}  // namespace

int main() {
  const auto dir = cola::testing::scratch_dir("acceptance");
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double time_limit = 0.0;  // seconds; 0 = unbounded
  };
  const std::vector<Criterion> criteria{
      {"shapley efficiency", shapley_efficiency, 30.0},
      {"shapley oracle equivalence", shapley_oracle},
      {"assignment optimality", assignment_optimality, 10.0},
      {"gradient correctness", gradient_correctness},
      {"validity preservation", validity_preservation},
      {"budget respect", budget_respect},
      {"synthetic sparsification magnitude", [&] { return fixture_magnitude(dir / "fixture"); }},
      {"greedy vs exhaustive oracle", greedy_vs_exhaustive},
      {"determinism", [&] { return determinism(dir / "determinism"); }},
      {"report arithmetic", [&] { return report_arithmetic(dir / "fixture"); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.pass && criteria[i].time_limit > 0.0 && secs >= criteria[i].time_limit) {
      o = {false, "exceeded " + num(criteria[i].time_limit) + " s"};
    }
    std::printf("%s [%zu] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
