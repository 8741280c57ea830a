#pragma once

// match -> attribute -> compose -> report, as one call.

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "cola/attributor.hpp"
#include "cola/composer.hpp"
#include "cola/matcher.hpp"
#include "cola/model.hpp"
#include "cola/report.hpp"
#include "cola/schema.hpp"

namespace cola {

enum class MatcherPolicy { kIndex, kNearest, kOt };

inline MatcherPolicy parse_matcher(std::string_view s) {
  if (s == "index") return MatcherPolicy::kIndex;
  if (s == "nearest") return MatcherPolicy::kNearest;
  if (s == "ot") return MatcherPolicy::kOt;
  fail("unknown matcher \"" + std::string(s) + "\" (expected index|nearest|ot)");
}

inline std::string to_string(MatcherPolicy m) {
  switch (m) {
    case MatcherPolicy::kIndex: return "index";
    case MatcherPolicy::kNearest: return "nearest";
    case MatcherPolicy::kOt: return "ot";
  }
  return "unknown";
}

struct SparsifyConfig {
  MatcherPolicy matcher = MatcherPolicy::kIndex;
  AttributionParams attribution;
  ComposeMode mode = ComposeMode::kSparsestValid;
  long long budget = 0;
  Allocation allocation = Allocation::kGlobalGreedy;
  std::optional<std::vector<std::size_t>> external_index;
  std::size_t threads = 1;
  bool record_runtime = false;
};

struct SparsifyOutput {
  Matching matching;
  std::vector<AttributionTable> tables;
  RefinementResult result;
  Report report;
};

inline SparsifyOutput sparsify(const ModelSpec& model, const InstanceSet& factuals,
                               const InstanceSet& counterfactuals, SparsifyConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (factuals.schema() != counterfactuals.schema()) {
    fail("factuals and counterfactuals use different schemas");
  }
  if (factuals.rows() == 0) fail("no factual rows");
  if (counterfactuals.rows() == 0) fail("no counterfactual rows");
  cfg.attribution.threads = cfg.threads;

  SparsifyOutput out;
  const EncodedMatrix f = encode(factuals, model.preprocess);
  const EncodedMatrix c = encode(counterfactuals, model.preprocess);
  switch (cfg.matcher) {
    case MatcherPolicy::kIndex:
      out.matching = match_index(cost_matrix(f, c), cfg.external_index);
      break;
    case MatcherPolicy::kNearest:
      out.matching = match_nearest(cost_matrix(f, c));
      break;
    case MatcherPolicy::kOt:
      out.matching = match_ot(cost_matrix(f, c));
      break;
  }
  out.tables = attribute_all(model, out.matching, f, c, cfg.attribution);
  const ComposeInputs in{model,           out.matching,           factuals, counterfactuals,
                         out.tables,      cfg.attribution.target, cfg.threads};
  out.result = cfg.mode == ComposeMode::kSparsestValid
                   ? compose_sparsest_valid(in)
                   : compose_budget(in, cfg.budget, cfg.allocation);

  ReportContext ctx;
  ctx.policy = {to_string(cfg.matcher), to_string(cfg.attribution.method), to_string(cfg.mode)};
  ctx.target = cfg.attribution.target;
  ctx.scale = cfg.attribution.scale;
  ctx.seed = cfg.attribution.seed;
  if (cfg.record_runtime) {
    ctx.runtime_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  }
  out.report = sparsity_report(factuals, counterfactuals, out.result, out.matching, model, ctx);
  return out;
}

}  // namespace cola
