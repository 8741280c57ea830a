#pragma once

// Counterfactual generators: a gradient-based generator with a squared-hinge
// validity loss and distance penalty, a seeded random-search generator that
// favours few changed features, and import of externally generated sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cola/csv.hpp"
#include "cola/error.hpp"
#include "cola/model.hpp"
#include "cola/parallel.hpp"
#include "cola/random.hpp"
#include "cola/schema.hpp"

namespace cola {

enum class DistanceKind { kL1, kL2 };

inline DistanceKind parse_distance(std::string_view s) {
  if (s == "l1") return DistanceKind::kL1;
  if (s == "l2") return DistanceKind::kL2;
  fail("unknown distance \"" + std::string(s) + "\" (expected l1|l2)");
}

inline std::string to_string(DistanceKind d) { return d == DistanceKind::kL1 ? "l1" : "l2"; }

struct GeneratorParams {
  int target_class = 1;
  std::size_t max_iters = 1000;
  double step_size = 0.05;
  double lambda_init = 0.1;
  double lambda_growth = 1.1;
  std::size_t lambda_interval = 50;
  double margin = 0.0;
  DistanceKind distance = DistanceKind::kL1;
  std::size_t k_per_instance = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (!(step_size > 0.0)) fail("generator: step_size must be > 0");
    if (!(lambda_growth >= 1.0)) fail("generator: lambda_growth must be >= 1");
    if (!(lambda_init >= 0.0)) fail("generator: lambda_init must be >= 0");
    if (max_iters < 1) fail("generator: max_iters must be >= 1");
    if (k_per_instance < 1) fail("generator: k_per_instance must be >= 1");
    if (lambda_interval < 1) fail("generator: lambda_interval must be >= 1");
  }
};

enum class GenerationFlag { kValid, kInvalid, kAlreadyValid };

inline std::string to_string(GenerationFlag f) {
  switch (f) {
    case GenerationFlag::kValid: return "valid";
    case GenerationFlag::kInvalid: return "invalid";
    case GenerationFlag::kAlreadyValid: return "already_valid";
  }
  return "unknown";
}

struct GeneratedSet {
  InstanceSet counterfactuals;
  std::vector<std::size_t> factual_index;  // one per counterfactual row
  std::vector<GenerationFlag> flags;

  bool valid(std::size_t i) const { return flags[i] != GenerationFlag::kInvalid; }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](auto f) {
      return f != GenerationFlag::kInvalid;
    }));
  }

  void write_csv(std::ostream& out, bool with_factual_index) const {
    std::vector<ExtraColumn> extra;
    if (with_factual_index) {
      ExtraColumn col{"_factual_index", {}};
      for (auto i : factual_index) col.values.push_back(std::to_string(i));
      extra.push_back(std::move(col));
    }
    ExtraColumn valid_col{"_valid", {}};
    for (std::size_t i = 0; i < flags.size(); ++i) {
      valid_col.values.push_back(valid(i) ? "true" : "false");
    }
    extra.push_back(std::move(valid_col));
    write_table(out, counterfactuals, extra, false);
  }
};

namespace detail {

// Snaps every one-hot group of `z` to its argmax vertex.
inline void snap_to_vertices(std::span<const double> z, const PreprocessSpec& prep,
                             std::span<double> out) {
  std::copy(z.begin(), z.end(), out.begin());
  const auto groups = prep.groups();
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (prep.features[j].kind != FeatureKind::kCategorical) continue;
    const auto g = out.subspan(groups[j].offset, groups[j].width);
    const std::size_t best = argmax_level(g);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = k == best ? 1.0 : 0.0;
  }
}

inline double encoded_distance(std::span<const double> a, std::span<const double> b,
                               DistanceKind kind) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += kind == DistanceKind::kL1 ? std::abs(d) : d * d;
  }
  return s;
}

// Probability level the target class must exceed for the hinge to vanish.
inline double hinge_level(const ModelSpec& model, int target, double margin) {
  if (model.binary()) return (target == 1 ? model.threshold : 1.0 - model.threshold) + margin;
  return 0.5 + margin;
}

// Decodes an encoded counterfactual; numeric columns the search never moved
// keep the factual's exact original value.
inline std::vector<double> decode_counterfactual(std::span<const double> encoded,
                                                 std::span<const double> factual_encoded,
                                                 std::span<const double> factual_original,
                                                 const PreprocessSpec& prep) {
  std::vector<double> out(prep.features.size());
  decode_row(encoded, prep, out);
  const auto groups = prep.groups();
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (prep.features[j].kind == FeatureKind::kNumeric &&
        encoded[groups[j].offset] == factual_encoded[groups[j].offset]) {
      out[j] = factual_original[j];
    }
  }
  return out;
}

}  // namespace detail

struct WachterTrace {
  std::optional<std::size_t> first_valid_iter;  // first iterate with a zero hinge
  double first_valid_distance = 0.0;
  double returned_distance = 0.0;
};

// Searches one counterfactual for an already-encoded factual. Returns the
// encoded result: the closest iterate whose hinge term is zero, else the
// closest iterate with the target label, else the iterate with the highest
// target probability. `valid` reports whether the result has the target label.
inline std::vector<double> wachter_search(const ModelSpec& model, std::span<const double> x0,
                                          const GeneratorParams& params, bool* valid,
                                          WachterTrace* trace = nullptr) {
  const std::size_t d = x0.size();
  const int target = params.target_class;
  const double level = detail::hinge_level(model, target, params.margin);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> z(x0.begin(), x0.end());
  std::vector<double> snapped(d);
  std::vector<double> best_clear, best_flip, best_invalid(x0.begin(), x0.end());
  double best_clear_dist = kInf, best_flip_dist = kInf;
  double best_invalid_p = score(model, x0, target, ScoreScale::kProbability);
  double lambda = params.lambda_init;

  detail::snap_to_vertices(z, model.preprocess, snapped);
  double p = best_invalid_p;
  for (std::size_t iter = 1; iter <= params.max_iters; ++iter) {
    // Gradient of the validity loss at the decodable (snapped) point, applied
    // to the continuous iterate.
    const double hinge = std::max(0.0, level - p);
    std::vector<double> grad(d, 0.0);
    if (hinge > 0.0) {
      grad = gradient_score(model, snapped, target, ScoreScale::kProbability);
      for (double& g : grad) g *= -2.0 * lambda * hinge;
    }
    if (params.distance == DistanceKind::kL2) {
      for (std::size_t k = 0; k < d; ++k) z[k] -= params.step_size * (grad[k] + 2.0 * (z[k] - x0[k]));
    } else {
      // Proximal step for the l1 term (soft thresholding towards x0).
      for (std::size_t k = 0; k < d; ++k) {
        const double moved = z[k] - params.step_size * grad[k] - x0[k];
        const double shrunk = std::max(0.0, std::abs(moved) - params.step_size);
        z[k] = x0[k] + std::copysign(shrunk, moved);
      }
    }
    detail::snap_to_vertices(z, model.preprocess, snapped);
    p = score(model, snapped, target, ScoreScale::kProbability);
    const bool is_valid = predict_label_row(model, snapped) == target;
    if (is_valid) {
      const double dist = detail::encoded_distance(snapped, x0, params.distance);
      if (p >= level) {
        if (trace && !trace->first_valid_iter) {
          trace->first_valid_iter = iter;
          trace->first_valid_distance = dist;
        }
        if (dist < best_clear_dist) {
          best_clear_dist = dist;
          best_clear = snapped;
        }
      }
      if (dist < best_flip_dist) {
        best_flip_dist = dist;
        best_flip = snapped;
      }
    } else if (p > best_invalid_p) {
      best_invalid_p = p;
      best_invalid = snapped;
    }
    if (iter % params.lambda_interval == 0 && p < level) lambda *= params.lambda_growth;
  }
  if (!best_clear.empty()) {
    *valid = true;
    if (trace) trace->returned_distance = best_clear_dist;
    return best_clear;
  }
  *valid = !best_flip.empty();
  if (trace) trace->returned_distance = *valid ? best_flip_dist : 0.0;
  return *valid ? best_flip : best_invalid;
}

inline GeneratedSet wachter_generate(const ModelSpec& model, const InstanceSet& factuals,
                                     const GeneratorParams& params) {
  params.validate();
  model.preprocess.check_compatible(factuals.schema());
  detail::check_target(model, params.target_class);
  const std::size_t n = factuals.rows();
  std::vector<std::vector<double>> rows(n);
  std::vector<GenerationFlag> flags(n);
  parallel_for(n, params.threads, [&](std::size_t i) {
    std::vector<double> x0(model.input_width);
    encode_row(factuals.row(i), model.preprocess, x0);
    const auto original = factuals.row(i);
    if (predict_label_row(model, x0) == params.target_class) {
      rows[i].assign(original.begin(), original.end());
      flags[i] = GenerationFlag::kAlreadyValid;
      return;
    }
    bool found = false;
    const auto cf = wachter_search(model, x0, params, &found);
    rows[i] = detail::decode_counterfactual(cf, x0, original, model.preprocess);
    std::vector<double> check(model.input_width);
    encode_row(rows[i], model.preprocess, check);
    flags[i] = predict_label_row(model, check) == params.target_class ? GenerationFlag::kValid
                                                                       : GenerationFlag::kInvalid;
  });
  GeneratedSet out{InstanceSet(factuals.schema_ptr()), {}, std::move(flags)};
  for (std::size_t i = 0; i < n; ++i) {
    out.counterfactuals.append_row(rows[i]);
    out.factual_index.push_back(i);
  }
  return out;
}

// Seeded random search: resample random feature subsets (numeric uniform on
// the factual set's observed range, categorical uniform over levels) and keep
// the valid candidates with the fewest changed features.
inline GeneratedSet diverse_generate(const ModelSpec& model, const InstanceSet& factuals,
                                     const GeneratorParams& params) {
  params.validate();
  model.preprocess.check_compatible(factuals.schema());
  detail::check_target(model, params.target_class);
  const FeatureSchema& schema = factuals.schema();
  const std::size_t n = factuals.rows();
  const std::size_t p = schema.size();
  const std::size_t k = params.k_per_instance;

  std::vector<double> lo(p, 0.0), hi(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    if (schema.features[j].categorical() || n == 0) continue;
    lo[j] = hi[j] = factuals.cell(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      lo[j] = std::min(lo[j], factuals.cell(i, j));
      hi[j] = std::max(hi[j], factuals.cell(i, j));
    }
  }

  struct Candidate {
    std::vector<double> row;
    std::size_t changes;
    double distance;
  };
  std::vector<std::vector<std::vector<double>>> rows(n);
  std::vector<std::vector<GenerationFlag>> flags(n);

  parallel_for(n, params.threads, [&](std::size_t i) {
    const auto factual = factuals.row(i);
    std::vector<double> x0(model.input_width), enc(model.input_width);
    encode_row(factual, model.preprocess, x0);
    if (predict_label_row(model, x0) == params.target_class) {
      rows[i].assign(k, std::vector<double>(factual.begin(), factual.end()));
      flags[i].assign(k, GenerationFlag::kAlreadyValid);
      return;
    }
    Rng rng = Rng::for_item(params.seed, i);
    std::vector<Candidate> found;
    std::vector<std::size_t> idx(p);
    std::vector<double> cand(p);
    for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
      const std::size_t size = 1 + static_cast<std::size_t>(rng.below(p));
      for (std::size_t j = 0; j < p; ++j) idx[j] = j;
      // Partial Fisher-Yates: the first `size` entries form the subset.
      for (std::size_t s = 0; s < size; ++s) {
        const std::size_t r = s + static_cast<std::size_t>(rng.below(p - s));
        std::swap(idx[s], idx[r]);
      }
      std::copy(factual.begin(), factual.end(), cand.begin());
      for (std::size_t s = 0; s < size; ++s) {
        const std::size_t j = idx[s];
        const Feature& f = schema.features[j];
        cand[j] = f.categorical() ? static_cast<double>(rng.below(f.levels.size()))
                                  : rng.uniform(lo[j], hi[j]);
      }
      encode_row(cand, model.preprocess, enc);
      if (predict_label_row(model, enc) != params.target_class) continue;
      const bool duplicate = std::any_of(found.begin(), found.end(),
                                         [&](const Candidate& c) { return c.row == cand; });
      if (duplicate) continue;
      std::size_t changes = 0;
      for (std::size_t j = 0; j < p; ++j) {
        changes += cell_changed(schema.features[j], factual[j], cand[j], kNumericChangeTolerance);
      }
      found.push_back({cand, changes, detail::encoded_distance(enc, x0, DistanceKind::kL1)});
    }
    std::stable_sort(found.begin(), found.end(), [](const Candidate& a, const Candidate& b) {
      if (a.changes != b.changes) return a.changes < b.changes;
      return a.distance < b.distance;
    });
    for (std::size_t c = 0; c < k; ++c) {
      if (c < found.size()) {
        rows[i].push_back(found[c].row);
        flags[i].push_back(GenerationFlag::kValid);
      } else {
        rows[i].emplace_back(factual.begin(), factual.end());
        flags[i].push_back(GenerationFlag::kInvalid);
      }
    }
  });

  GeneratedSet out{InstanceSet(factuals.schema_ptr()), {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      out.counterfactuals.append_row(rows[i][c]);
      out.factual_index.push_back(i);
      out.flags.push_back(flags[i][c]);
    }
  }
  return out;
}

enum class Pairing { kAligned, kIndexed, kAuto };

inline Pairing parse_pairing(std::string_view s) {
  if (s == "aligned") return Pairing::kAligned;
  if (s == "indexed") return Pairing::kIndexed;
  if (s == "auto") return Pairing::kAuto;
  fail("unknown pairing \"" + std::string(s) + "\" (expected aligned|indexed|auto)");
}

struct ImportedCounterfactuals {
  InstanceSet data;
  std::optional<std::vector<std::size_t>> factual_index;
};

// Loads counterfactuals produced by any external generator. With indexed
// pairing the `_factual_index` column maps each row to a factual in
// [0, n_factuals); auto uses indexed pairing iff the column exists.
inline ImportedCounterfactuals import_external(const std::string& path, const SchemaPtr& schema,
                                               Pairing pairing, std::size_t n_factuals) {
  auto loaded = parse_table(csv::read_file(path), schema, {false, false}, path);
  ImportedCounterfactuals out{std::move(loaded.data), std::nullopt};
  const auto it = loaded.metadata.find("_factual_index");
  if (pairing == Pairing::kAuto) {
    pairing = it == loaded.metadata.end() ? Pairing::kAligned : Pairing::kIndexed;
  }
  if (pairing == Pairing::kAligned) return out;
  if (it == loaded.metadata.end()) fail(path + ": indexed pairing needs a _factual_index column");
  std::vector<std::size_t> index;
  for (std::size_t r = 0; r < it->second.size(); ++r) {
    const std::string& text = it->second[r];
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
      fail(path + ": row " + std::to_string(r + 1) + ": _factual_index \"" + text +
           "\" is not a non-negative integer");
    }
    if (value >= n_factuals) {
      fail(path + ": row " + std::to_string(r + 1) + ": _factual_index " + text +
           " out of range for " + std::to_string(n_factuals) + " factuals");
    }
    index.push_back(value);
  }
  out.factual_index = std::move(index);
  return out;
}

}  // namespace cola
