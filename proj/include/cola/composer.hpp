#pragma once

// Composition of refined counterfactuals: starting from each factual, copy
// the matched counterfactual's feature values in descending-attribution order
// and stop at the first state the model classifies as the target class.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cola/attributor.hpp"
#include "cola/error.hpp"
#include "cola/matcher.hpp"
#include "cola/model.hpp"
#include "cola/parallel.hpp"
#include "cola/schema.hpp"

namespace cola {

enum class RowStatus { kRefinedValid, kFallbackOriginalCf, kInvalidPartial, kAlreadyValid };

inline std::string to_string(RowStatus s) {
  switch (s) {
    case RowStatus::kRefinedValid: return "refined_valid";
    case RowStatus::kFallbackOriginalCf: return "fallback_original_cf";
    case RowStatus::kInvalidPartial: return "invalid_partial";
    case RowStatus::kAlreadyValid: return "already_valid";
  }
  return "unknown";
}

inline RowStatus parse_row_status(std::string_view s) {
  for (auto st : {RowStatus::kRefinedValid, RowStatus::kFallbackOriginalCf,
                  RowStatus::kInvalidPartial, RowStatus::kAlreadyValid}) {
    if (to_string(st) == s) return st;
  }
  fail("unknown row status \"" + std::string(s) + "\"");
}

enum class ComposeMode { kSparsestValid, kBudget };
enum class Allocation { kGlobalGreedy, kPerPairCap };

inline std::string to_string(ComposeMode m) {
  return m == ComposeMode::kSparsestValid ? "sparsest-valid" : "budget";
}

inline std::string to_string(Allocation a) {
  return a == Allocation::kGlobalGreedy ? "global-greedy" : "per-pair-cap";
}

inline ComposeMode parse_compose_mode(std::string_view s) {
  if (s == "sparsest-valid") return ComposeMode::kSparsestValid;
  if (s == "budget") return ComposeMode::kBudget;
  fail("unknown mode \"" + std::string(s) + "\" (expected sparsest-valid|budget)");
}

inline Allocation parse_allocation(std::string_view s) {
  if (s == "global-greedy" || s == "global_greedy") return Allocation::kGlobalGreedy;
  if (s == "per-pair-cap" || s == "per_pair_cap") return Allocation::kPerPairCap;
  fail("unknown allocation \"" + std::string(s) + "\" (expected global-greedy|per-pair-cap)");
}

struct Action {
  std::size_t pair = 0;
  std::size_t feature = 0;
  double phi = 0.0;

  friend bool operator==(const Action&, const Action&) = default;
};

// Row k of the mask compares the factual and counterfactual of pair k.
inline ChangeMask pair_diffs(const Matching& matching, const InstanceSet& factuals,
                             const InstanceSet& counterfactuals,
                             double numeric_tol = kNumericChangeTolerance) {
  if (factuals.schema() != counterfactuals.schema()) fail("pair_diffs: schemas differ");
  std::vector<std::size_t> fi, ci;
  for (const auto& p : matching.pairs) {
    if (p.factual >= factuals.rows() || p.counterfactual >= counterfactuals.rows()) {
      fail("matching references a row out of range");
    }
    fi.push_back(p.factual);
    ci.push_back(p.counterfactual);
  }
  return diff_features(factuals.select(fi), counterfactuals.select(ci), numeric_tol);
}

inline bool action_before(const Action& a, const Action& b) {
  if (a.phi != b.phi) return a.phi > b.phi;
  if (a.pair != b.pair) return a.pair < b.pair;
  return a.feature < b.feature;
}

// Actions on differing features only, by descending phi, then (pair, feature).
inline std::vector<Action> rank_actions(const std::vector<AttributionTable>& tables,
                                        const ChangeMask& diffs) {
  if (tables.size() != diffs.rows) fail("rank_actions: tables and diffs are not aligned");
  std::vector<Action> out;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    if (tables[k].phi.size() != diffs.cols) fail("rank_actions: attribution width mismatch");
    for (std::size_t j = 0; j < diffs.cols; ++j) {
      if (diffs.at(k, j)) out.push_back({k, j, tables[k].phi[j]});
    }
  }
  std::stable_sort(out.begin(), out.end(), action_before);
  return out;
}

struct RefinementResult {
  InstanceSet refined;  // one row per pair, in matching order
  std::vector<Pair> pairs;
  std::vector<RowStatus> status;
  std::vector<std::size_t> edits;
  std::size_t total_edits = 0;    // over non-fallback rows
  std::size_t applied_edits = 0;  // every copied feature, fallback rows included
  ComposeMode mode = ComposeMode::kSparsestValid;
  Allocation allocation = Allocation::kGlobalGreedy;
  std::optional<std::size_t> budget;
};

struct ComposeInputs {
  const ModelSpec& model;
  const Matching& matching;
  const InstanceSet& factuals;
  const InstanceSet& counterfactuals;
  const std::vector<AttributionTable>& tables;
  int target = 1;
  std::size_t threads = 1;
};

namespace detail {

struct PairOutcome {
  std::vector<double> row;
  RowStatus status = RowStatus::kInvalidPartial;
  std::size_t applied = 0;
};

inline bool is_target(const ModelSpec& model, std::span<const double> original_row, int target,
                      std::vector<double>& scratch) {
  encode_row(original_row, model.preprocess, scratch);
  return predict_label_row(model, scratch) == target;
}

// Applies `features` in order, at most `limit` of them, re-evaluating after
// each copy.
inline PairOutcome refine_pair(const ModelSpec& model, int target,
                               std::span<const double> factual,
                               std::span<const double> counterfactual,
                               const std::vector<std::size_t>& features, std::size_t limit) {
  std::vector<double> scratch(model.input_width);
  PairOutcome out{std::vector<double>(factual.begin(), factual.end()),
                  RowStatus::kInvalidPartial, 0};
  if (is_target(model, factual, target, scratch)) {
    out.status = RowStatus::kAlreadyValid;
    return out;
  }
  for (std::size_t j : features) {
    if (out.applied == limit) return out;
    out.row[j] = counterfactual[j];
    ++out.applied;
    if (is_target(model, out.row, target, scratch)) {
      out.status = RowStatus::kRefinedValid;
      return out;
    }
  }
  if (out.applied == features.size() && is_target(model, counterfactual, target, scratch)) {
    out.row.assign(counterfactual.begin(), counterfactual.end());
    out.status = RowStatus::kFallbackOriginalCf;
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> per_pair_order(
    const std::vector<Action>& ranked, std::size_t pairs) {
  std::vector<std::vector<std::size_t>> out(pairs);
  for (const auto& a : ranked) out[a.pair].push_back(a.feature);
  return out;
}

inline void check_inputs(const ComposeInputs& in) {
  if (in.tables.size() != in.matching.pairs.size()) {
    fail("compose: attribution tables do not match the pair count");
  }
  in.model.preprocess.check_compatible(in.factuals.schema());
  for (std::size_t k = 0; k < in.tables.size(); ++k) {
    if (in.tables[k].pair != in.matching.pairs[k]) fail("compose: tables not in matching order");
  }
}

inline RefinementResult assemble(const ComposeInputs& in, std::vector<PairOutcome>& outcomes) {
  RefinementResult r;
  r.refined = InstanceSet(in.factuals.schema_ptr());
  r.pairs = in.matching.pairs;
  for (auto& o : outcomes) {
    r.refined.append_row(o.row);
    r.status.push_back(o.status);
    r.edits.push_back(o.applied);
    r.applied_edits += o.applied;
    if (o.status != RowStatus::kFallbackOriginalCf) r.total_edits += o.applied;
  }
  return r;
}

}  // namespace detail

inline RefinementResult compose_sparsest_valid(const ComposeInputs& in) {
  detail::check_inputs(in);
  const ChangeMask diffs = pair_diffs(in.matching, in.factuals, in.counterfactuals);
  const auto order = detail::per_pair_order(rank_actions(in.tables, diffs), in.tables.size());
  std::vector<detail::PairOutcome> outcomes(in.matching.pairs.size());
  parallel_for(outcomes.size(), in.threads, [&](std::size_t k) {
    const Pair p = in.matching.pairs[k];
    outcomes[k] = detail::refine_pair(in.model, in.target, in.factuals.row(p.factual),
                                      in.counterfactuals.row(p.counterfactual), order[k],
                                      std::numeric_limits<std::size_t>::max());
  });
  auto r = detail::assemble(in, outcomes);
  r.mode = ComposeMode::kSparsestValid;
  return r;
}

// Refinement under an edit budget q: either shared by all pairs
// (global_greedy, pairs visited by their best single-action phi) or applied
// to each pair separately (per_pair_cap).
inline RefinementResult compose_budget(const ComposeInputs& in, long long q,
                                       Allocation allocation = Allocation::kGlobalGreedy) {
  if (q < 0) fail("budget must be >= 0, got " + std::to_string(q));
  detail::check_inputs(in);
  const auto budget = static_cast<std::size_t>(q);
  const ChangeMask diffs = pair_diffs(in.matching, in.factuals, in.counterfactuals);
  const auto ranked = rank_actions(in.tables, diffs);
  const auto order = detail::per_pair_order(ranked, in.tables.size());
  const std::size_t n = in.matching.pairs.size();
  std::vector<detail::PairOutcome> outcomes(n);

  if (allocation == Allocation::kPerPairCap) {
    parallel_for(n, in.threads, [&](std::size_t k) {
      const Pair p = in.matching.pairs[k];
      outcomes[k] = detail::refine_pair(in.model, in.target, in.factuals.row(p.factual),
                                        in.counterfactuals.row(p.counterfactual), order[k],
                                        budget);
    });
  } else {
    // Ranked actions are sorted, so each pair's first appearance carries its
    // best single-action phi; pairs without actions go last.
    std::vector<std::size_t> visit;
    std::vector<bool> seen(n, false);
    for (const auto& a : ranked) {
      if (!seen[a.pair]) {
        seen[a.pair] = true;
        visit.push_back(a.pair);
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!seen[k]) visit.push_back(k);
    }
    std::size_t remaining = budget;
    for (std::size_t k : visit) {
      const Pair p = in.matching.pairs[k];
      outcomes[k] = detail::refine_pair(in.model, in.target, in.factuals.row(p.factual),
                                        in.counterfactuals.row(p.counterfactual), order[k],
                                        remaining);
      remaining -= outcomes[k].applied;
    }
  }
  auto r = detail::assemble(in, outcomes);
  r.mode = ComposeMode::kBudget;
  r.allocation = allocation;
  r.budget = budget;
  return r;
}

// Brute-force minimal valid coalition: subsets by increasing size, each size
// in lexicographic order. Test oracle for the greedy composer.
inline std::optional<std::vector<std::size_t>> exhaustive_sparsest(
    const ModelSpec& model, std::span<const double> factual_encoded,
    std::span<const double> counterfactual_encoded, std::span<const ColumnGroup> groups,
    int target) {
  const std::size_t p = groups.size();
  if (p > kDefaultExactLimit) fail("exhaustive_sparsest: too many features");
  std::vector<std::uint8_t> coalition(p, 0);
  std::vector<double> scratch(factual_encoded.size());
  for (std::size_t size = 0; size <= p; ++size) {
    // Lexicographic k-combinations of {0..p-1}.
    std::vector<std::size_t> combo(size);
    for (std::size_t i = 0; i < size; ++i) combo[i] = i;
    while (true) {
      std::fill(coalition.begin(), coalition.end(), std::uint8_t{0});
      for (std::size_t j : combo) coalition[j] = 1;
      hybrid_into(factual_encoded, counterfactual_encoded, coalition, groups, scratch);
      if (predict_label_row(model, scratch) == target) return combo;
      std::size_t i = size;
      while (i > 0 && combo[i - 1] == p - size + i - 1) --i;
      if (i == 0) break;
      ++combo[i - 1];
      for (std::size_t t = i; t < size; ++t) combo[t] = combo[t - 1] + 1;
    }
  }
  return std::nullopt;
}

}  // namespace cola
