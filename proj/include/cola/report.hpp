#pragma once

// Sparsity/validity reporting for a refinement run.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/composer.hpp"
#include "cola/error.hpp"
#include "cola/matcher.hpp"
#include "cola/model.hpp"
#include "cola/schema.hpp"

namespace cola {

using ordered_json = nlohmann::ordered_json;

// Relative reduction of the changed-feature count, in percent; 0 when nothing
// was changed to begin with.
inline double reduction_pct(std::size_t changed_before, std::size_t changed_after) {
  if (changed_before == 0) return 0.0;
  return 100.0 * (static_cast<double>(changed_before) - static_cast<double>(changed_after)) /
         static_cast<double>(changed_before);
}

struct PolicyNames {
  std::string matcher = "index";
  std::string attributor = "shapley-exact";
  std::string mode = "sparsest-valid";
};

struct RowRecord {
  std::size_t factual = 0;
  std::size_t counterfactual = 0;
  std::string status;
  std::size_t changed_before = 0;
  std::size_t changed_after = 0;
  bool valid_before = false;
  bool valid_after = false;

  friend bool operator==(const RowRecord&, const RowRecord&) = default;
};

struct Report {
  PolicyNames policy;
  std::optional<std::string> allocation;
  std::optional<std::size_t> budget;
  std::string score_scale = "probability";
  std::string target;
  std::vector<std::string> features;
  std::uint64_t seed = 0;
  std::optional<double> runtime_ms;
  std::size_t changed_before = 0;
  std::size_t changed_after = 0;
  double reduction_pct = 0.0;
  double validity_before = 0.0;
  double validity_after = 0.0;
  std::vector<RowRecord> rows;

  std::string policy_label() const {
    return policy.matcher + "/" + policy.attributor + "/" + policy.mode;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["policy"] = {{"matcher", policy.matcher},
                   {"attributor", policy.attributor},
                   {"mode", policy.mode}};
    j["allocation"] = allocation ? ordered_json(*allocation) : ordered_json(nullptr);
    j["budget"] = budget ? ordered_json(*budget) : ordered_json(nullptr);
    j["score_scale"] = score_scale;
    j["target"] = target;
    j["features"] = features;
    j["seed"] = seed;
    j["runtime_ms"] = runtime_ms ? ordered_json(*runtime_ms) : ordered_json(nullptr);
    j["pairs"] = rows.size();
    j["changed_before"] = changed_before;
    j["changed_after"] = changed_after;
    j["reduction_pct"] = reduction_pct;
    j["validity_before"] = validity_before;
    j["validity_after"] = validity_after;
    ordered_json arr = ordered_json::array();
    for (const auto& r : rows) {
      arr.push_back({{"factual", r.factual},
                     {"counterfactual", r.counterfactual},
                     {"status", r.status},
                     {"changed_before", r.changed_before},
                     {"changed_after", r.changed_after},
                     {"valid_before", r.valid_before},
                     {"valid_after", r.valid_after}});
    }
    j["rows"] = std::move(arr);
    return j;
  }

  static Report from_json(const ordered_json& j) {
    Report r;
    try {
      const auto& pol = j.at("policy");
      r.policy = {pol.at("matcher").get<std::string>(), pol.at("attributor").get<std::string>(),
                  pol.at("mode").get<std::string>()};
      if (!j.at("allocation").is_null()) r.allocation = j.at("allocation").get<std::string>();
      if (!j.at("budget").is_null()) r.budget = j.at("budget").get<std::size_t>();
      r.score_scale = j.at("score_scale").get<std::string>();
      r.target = j.at("target").get<std::string>();
      r.features = j.at("features").get<std::vector<std::string>>();
      r.seed = j.at("seed").get<std::uint64_t>();
      if (!j.at("runtime_ms").is_null()) r.runtime_ms = j.at("runtime_ms").get<double>();
      r.changed_before = j.at("changed_before").get<std::size_t>();
      r.changed_after = j.at("changed_after").get<std::size_t>();
      r.reduction_pct = j.at("reduction_pct").get<double>();
      r.validity_before = j.at("validity_before").get<double>();
      r.validity_after = j.at("validity_after").get<double>();
      for (const auto& row : j.at("rows")) {
        r.rows.push_back({row.at("factual").get<std::size_t>(),
                          row.at("counterfactual").get<std::size_t>(),
                          row.at("status").get<std::string>(),
                          row.at("changed_before").get<std::size_t>(),
                          row.at("changed_after").get<std::size_t>(),
                          row.at("valid_before").get<bool>(),
                          row.at("valid_after").get<bool>()});
      }
      if (j.at("pairs").get<std::size_t>() != r.rows.size()) fail("pair count mismatch");
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("invalid report: ") + e.what());
    }
    return r;
  }
};

struct ReportContext {
  PolicyNames policy;
  int target = 1;
  ScoreScale scale = ScoreScale::kProbability;
  std::uint64_t seed = 0;
  std::optional<double> runtime_ms;
};

// Builds the report for a refinement. Validity on both sides is re-evaluated
// with the model rather than taken from the composer's status flags.
inline Report sparsity_report(const InstanceSet& factuals, const InstanceSet& counterfactuals,
                              const RefinementResult& refined, const Matching& matching,
                              const ModelSpec& model, const ReportContext& ctx) {
  if (refined.pairs != matching.pairs || refined.refined.rows() != matching.pairs.size() ||
      refined.status.size() != matching.pairs.size()) {
    fail("sparsity_report: refinement is not aligned with the matching");
  }
  const FeatureSchema& schema = factuals.schema();
  const ChangeMask before = pair_diffs(matching, factuals, counterfactuals);
  std::vector<std::size_t> fi;
  for (const auto& p : matching.pairs) fi.push_back(p.factual);
  const ChangeMask after = diff_features(factuals.select(fi), refined.refined);

  Report r;
  r.policy = ctx.policy;
  if (refined.mode == ComposeMode::kBudget) {
    r.allocation = to_string(refined.allocation);
    r.budget = refined.budget;
  }
  r.score_scale = to_string(ctx.scale);
  r.target = schema.label.classes.at(static_cast<std::size_t>(ctx.target));
  r.features = schema.feature_names();
  r.seed = ctx.seed;
  r.runtime_ms = ctx.runtime_ms;

  std::vector<double> scratch(model.input_width);
  auto valid = [&](std::span<const double> row) {
    encode_row(row, model.preprocess, scratch);
    return predict_label_row(model, scratch) == ctx.target;
  };
  std::size_t valid_before = 0, valid_after = 0;
  for (std::size_t k = 0; k < matching.pairs.size(); ++k) {
    const Pair p = matching.pairs[k];
    RowRecord rec;
    rec.factual = p.factual;
    rec.counterfactual = p.counterfactual;
    rec.status = to_string(refined.status[k]);
    rec.changed_before = before.per_row[k];
    rec.changed_after = refined.status[k] == RowStatus::kFallbackOriginalCf ? before.per_row[k]
                                                                            : after.per_row[k];
    rec.valid_before = valid(counterfactuals.row(p.counterfactual));
    rec.valid_after = valid(refined.refined.row(k));
    valid_before += rec.valid_before;
    valid_after += rec.valid_after;
    r.changed_before += rec.changed_before;
    r.changed_after += rec.changed_after;
    r.rows.push_back(std::move(rec));
  }
  const double n = static_cast<double>(matching.pairs.size());
  r.validity_before = matching.pairs.empty() ? 0.0 : static_cast<double>(valid_before) / n;
  r.validity_after = matching.pairs.empty() ? 0.0 : static_cast<double>(valid_after) / n;
  r.reduction_pct = reduction_pct(r.changed_before, r.changed_after);
  return r;
}

// Reports can be compared only if they describe the same features and target.
inline void check_comparable(const std::vector<Report>& reports) {
  if (reports.empty()) fail("no reports to compare");
  for (const auto& r : reports) {
    if (r.features != reports.front().features || r.target != reports.front().target) {
      fail("incompatible reports: feature lists or targets differ");
    }
  }
}

}  // namespace cola
