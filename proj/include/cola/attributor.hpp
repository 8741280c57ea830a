#pragma once

// Shapley attribution of a factual -> counterfactual score change to the
// original (pre-encoding) features. Players are original features; a one-hot
// group always moves as a whole.

#include <bit>
#include <cmath>
#include <limits>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/error.hpp"
#include "cola/matcher.hpp"
#include "cola/model.hpp"
#include "cola/parallel.hpp"
#include "cola/random.hpp"
#include "cola/schema.hpp"

namespace cola {

inline constexpr std::size_t kDefaultExactLimit = 12;

// Writes into `out` the row that takes the columns of every feature in the
// coalition from `counterfactual` and all other columns from `factual`.
inline void hybrid_into(std::span<const double> factual, std::span<const double> counterfactual,
                        std::span<const std::uint8_t> coalition,
                        std::span<const ColumnGroup> groups, std::span<double> out) {
  std::copy(factual.begin(), factual.end(), out.begin());
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (!coalition[j]) continue;
    const auto& g = groups[j];
    std::copy_n(counterfactual.begin() + static_cast<std::ptrdiff_t>(g.offset), g.width,
                out.begin() + static_cast<std::ptrdiff_t>(g.offset));
  }
}

inline std::vector<double> hybrid(std::span<const double> factual,
                                  std::span<const double> counterfactual,
                                  std::span<const std::size_t> subset,
                                  std::span<const ColumnGroup> groups) {
  std::vector<std::uint8_t> coalition(groups.size(), 0);
  for (std::size_t j : subset) {
    if (j >= groups.size()) fail("hybrid: feature index " + std::to_string(j) + " out of range");
    coalition[j] = 1;
  }
  std::vector<double> out(factual.size());
  hybrid_into(factual, counterfactual, coalition, groups, out);
  return out;
}

// Cooperative game v(S) = score(hybrid(factual, counterfactual, S)).
struct SwapGame {
  std::span<const double> factual;
  std::span<const double> counterfactual;
  const ModelSpec* model = nullptr;
  int target = 1;
  ScoreScale scale = ScoreScale::kProbability;
  std::vector<ColumnGroup> groups;

  std::size_t players() const noexcept { return groups.size(); }

  void validate() const {
    if (model == nullptr) fail_internal("SwapGame without model");
    if (factual.size() != counterfactual.size() || factual.size() != model->input_width) {
      fail("swap game: row widths do not match the model input width");
    }
    std::size_t next = 0;
    for (const auto& g : groups) {
      if (g.offset != next || g.width == 0) fail("swap game: column groups must tile the row");
      next += g.width;
    }
    if (next != factual.size()) fail("swap game: column groups do not cover every column");
  }

  double value(std::span<const std::uint8_t> coalition, std::span<double> scratch) const {
    hybrid_into(factual, counterfactual, coalition, groups, scratch);
    return score(*model, scratch, target, scale);
  }
};

struct ShapleyValues {
  std::vector<double> phi;
  double v_empty = 0.0;
  double v_full = 0.0;
  std::size_t evaluations = 0;
};

// Exact Shapley values by enumerating all 2^p coalitions once each.
inline ShapleyValues shapley_exact(const SwapGame& game,
                                   std::size_t exact_limit = kDefaultExactLimit) {
  game.validate();
  const std::size_t p = game.players();
  if (p > exact_limit) {
    fail("shapley_exact: " + std::to_string(p) + " features exceed the exact limit of " +
         std::to_string(exact_limit) + "; use shapley-sample");
  }
  if (p >= 63) fail("shapley_exact: too many features");
  const std::uint64_t subsets = std::uint64_t{1} << p;
  std::vector<double> v(subsets);
  std::vector<std::uint8_t> coalition(p);
  std::vector<double> scratch(game.factual.size());
  for (std::uint64_t mask = 0; mask < subsets; ++mask) {
    for (std::size_t j = 0; j < p; ++j) coalition[j] = (mask >> j) & 1U;
    v[mask] = game.value(coalition, scratch);
  }

  // weight(s) = s!(p-s-1)!/p! = 1 / (p * C(p-1, s))
  std::vector<double> weight(p, 0.0);
  double binom = 1.0;
  for (std::size_t s = 0; s < p; ++s) {
    weight[s] = 1.0 / (static_cast<double>(p) * binom);
    binom = binom * static_cast<double>(p - 1 - s) / static_cast<double>(s + 1);
  }

  ShapleyValues out{std::vector<double>(p, 0.0), v.front(), v.back(), subsets};
  for (std::size_t j = 0; j < p; ++j) {
    const std::uint64_t bit = std::uint64_t{1} << j;
    double acc = 0.0;
    for (std::uint64_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
    out.phi[j] = acc;
  }
  return out;
}

namespace detail {

// Sets the last coordinate so the left-to-right sum hits `total`; returns
// whether an exact hit exists near the residual.
inline bool absorb_in_last(std::vector<double>& phi, double total) {
  double head = 0.0;
  for (std::size_t j = 0; j + 1 < phi.size(); ++j) head += phi[j];
  phi.back() = total - head;
  double best = phi.back();
  double best_gap = std::abs(head + best - total);
  for (int iter = 0; iter < 64 && best_gap != 0.0; ++iter) {
    const double s = head + phi.back();
    double next = phi.back() + (total - s);
    if (next == phi.back()) {
      next = std::nextafter(phi.back(), s < total ? std::numeric_limits<double>::infinity()
                                                  : -std::numeric_limits<double>::infinity());
    }
    phi.back() = next;
    const double gap = std::abs(head + next - total);
    if (gap < best_gap) {
      best_gap = gap;
      best = next;
    }
  }
  phi.back() = best;
  return best_gap == 0.0;
}

}  // namespace detail

// Shifts phi so that its left-to-right sum equals `total` in floating point:
// an even share first, then the last coordinate absorbs the residual. When
// rounding makes that impossible, earlier coordinates are moved by a few ulps
// and the last one retried. Returns false if no exact closure was found; the
// sum is then within rounding of `total`.
inline bool close_efficiency_gap(std::vector<double>& phi, double total) {
  if (phi.empty()) return total == 0.0;
  double sum = 0.0;
  for (double v : phi) sum += v;
  const double share = (total - sum) / static_cast<double>(phi.size());
  for (double& v : phi) v += share;
  if (detail::absorb_in_last(phi, total)) return true;
  const std::vector<double> base = phi;
  constexpr int kMaxUlps = 4;
  for (std::size_t j = phi.size() - 1; j-- > 0;) {
    for (int step = 1; step <= kMaxUlps; ++step) {
      for (double dir : {1.0, -1.0}) {
        phi = base;
        for (int s = 0; s < step; ++s) {
          phi[j] = std::nextafter(phi[j], dir * std::numeric_limits<double>::infinity());
        }
        if (detail::absorb_in_last(phi, total)) return true;
      }
    }
  }
  phi = base;
  detail::absorb_in_last(phi, total);
  return false;
}

// Monte Carlo permutation estimate, closure-corrected so that efficiency holds.
inline ShapleyValues shapley_sample(const SwapGame& game, std::size_t permutations,
                                    std::uint64_t seed) {
  game.validate();
  if (permutations < 1) fail("shapley_sample: need at least one permutation");
  const std::size_t p = game.players();
  std::vector<std::uint8_t> coalition(p, 0);
  std::vector<double> scratch(game.factual.size());
  ShapleyValues out;
  out.phi.assign(p, 0.0);
  out.v_empty = game.value(coalition, scratch);
  std::fill(coalition.begin(), coalition.end(), std::uint8_t{1});
  out.v_full = game.value(coalition, scratch);
  out.evaluations = 2;

  Rng rng(seed);
  std::vector<std::size_t> order(p);
  for (std::size_t k = 0; k < permutations; ++k) {
    for (std::size_t j = 0; j < p; ++j) order[j] = j;
    rng.shuffle(order.begin(), order.end());
    std::fill(coalition.begin(), coalition.end(), std::uint8_t{0});
    double prev = out.v_empty;
    for (std::size_t pos = 0; pos < p; ++pos) {
      const std::size_t j = order[pos];
      coalition[j] = 1;
      double cur;
      if (pos + 1 == p) {
        cur = out.v_full;
      } else {
        cur = game.value(coalition, scratch);
        ++out.evaluations;
      }
      out.phi[j] += cur - prev;
      prev = cur;
    }
  }
  for (double& v : out.phi) v /= static_cast<double>(permutations);
  close_efficiency_gap(out.phi, out.v_full - out.v_empty);
  return out;
}

enum class AttributionMethod { kExact, kSampled };

inline AttributionMethod parse_attribution_method(std::string_view s) {
  if (s == "shapley-exact" || s == "exact") return AttributionMethod::kExact;
  if (s == "shapley-sample" || s == "sampled") return AttributionMethod::kSampled;
  fail("unknown attributor \"" + std::string(s) + "\" (expected shapley-exact|shapley-sample)");
}

inline std::string to_string(AttributionMethod m) {
  return m == AttributionMethod::kExact ? "shapley-exact" : "shapley-sample";
}

struct AttributionParams {
  AttributionMethod method = AttributionMethod::kExact;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  int target = 1;
  ScoreScale scale = ScoreScale::kProbability;
  std::size_t exact_limit = kDefaultExactLimit;
  std::size_t threads = 1;
};

struct AttributionTable {
  Pair pair;
  std::vector<double> phi;
  double v_empty = 0.0;
  double v_full = 0.0;
  AttributionMethod method = AttributionMethod::kExact;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t evaluations = 0;
};

inline std::vector<AttributionTable> attribute_all(const ModelSpec& model,
                                                   const Matching& matching,
                                                   const EncodedMatrix& factuals,
                                                   const EncodedMatrix& counterfactuals,
                                                   const AttributionParams& params) {
  if (params.method == AttributionMethod::kSampled && params.samples < 1) {
    fail("shapley-sample needs at least one permutation");
  }
  const auto groups = model.preprocess.groups();
  std::vector<AttributionTable> tables(matching.pairs.size());
  for (const auto& pair : matching.pairs) {
    if (pair.factual >= factuals.values.rows() ||
        pair.counterfactual >= counterfactuals.values.rows()) {
      fail("attribute_all: matching references a row out of range");
    }
  }
  parallel_for(matching.pairs.size(), params.threads, [&](std::size_t k) {
    const Pair pair = matching.pairs[k];
    SwapGame game{factuals.values.row(pair.factual),
                  counterfactuals.values.row(pair.counterfactual),
                  &model,
                  params.target,
                  params.scale,
                  groups};
    AttributionTable& t = tables[k];
    t.pair = pair;
    t.method = params.method;
    ShapleyValues sv;
    if (params.method == AttributionMethod::kExact) {
      sv = shapley_exact(game, params.exact_limit);
    } else {
      t.samples = params.samples;
      t.seed = params.seed ^ static_cast<std::uint64_t>(k);
      sv = shapley_sample(game, params.samples, t.seed);
    }
    t.phi = std::move(sv.phi);
    t.v_empty = sv.v_empty;
    t.v_full = sv.v_full;
    t.evaluations = sv.evaluations;
  });
  return tables;
}

inline nlohmann::ordered_json attributions_to_json(const std::vector<AttributionTable>& tables,
                                                   const FeatureSchema& schema) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& t : tables) {
    nlohmann::ordered_json phi = nlohmann::ordered_json::object();
    for (std::size_t j = 0; j < t.phi.size(); ++j) phi[schema.features[j].name] = t.phi[j];
    nlohmann::ordered_json item = {{"factual", t.pair.factual},
                                   {"counterfactual", t.pair.counterfactual},
                                   {"method", to_string(t.method)},
                                   {"v_empty", t.v_empty},
                                   {"v_full", t.v_full},
                                   {"phi", phi}};
    if (t.method == AttributionMethod::kSampled) {
      item["samples"] = t.samples;
      item["seed"] = t.seed;
    }
    arr.push_back(std::move(item));
  }
  return arr;
}

}  // namespace cola
