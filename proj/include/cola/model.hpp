#pragma once

// Portable classifiers (logistic regression and ReLU feed-forward networks)
// defined over the encoded feature space, with probability, label and
// input-gradient queries.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/error.hpp"
#include "cola/matrix.hpp"
#include "cola/schema.hpp"

namespace cola {

enum class ModelKind { kLogistic, kMlp };
enum class Activation { kRelu, kIdentity };

// Scale on which a class score is reported: the class probability, or the
// class logit (for binary models the logit of class 0 is the negated logit).
enum class ScoreScale { kProbability, kLogit };

inline ScoreScale parse_score_scale(std::string_view s) {
  if (s == "probability") return ScoreScale::kProbability;
  if (s == "logit") return ScoreScale::kLogit;
  fail("unknown score scale \"" + std::string(s) + "\" (expected probability|logit)");
}

inline std::string to_string(ScoreScale s) {
  return s == ScoreScale::kProbability ? "probability" : "logit";
}

struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::kIdentity;

  std::size_t in() const noexcept { return weights.cols(); }
  std::size_t out() const noexcept { return weights.rows(); }
};

struct ModelSpec {
  ModelKind kind = ModelKind::kLogistic;
  std::size_t input_width = 0;
  std::vector<double> weights;  // logistic
  double bias = 0.0;            // logistic
  std::vector<DenseLayer> layers;
  PreprocessSpec preprocess;
  double threshold = 0.5;

  std::size_t output_width() const {
    return kind == ModelKind::kLogistic ? 1 : layers.back().out();
  }
  bool binary() const { return output_width() == 1; }
  std::size_t num_classes() const { return binary() ? 2 : output_width(); }

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) fail("model: threshold must lie in (0, 1)");
    if (input_width != preprocess.width()) {
      fail("model: input width " + std::to_string(input_width) +
           " does not match encoded width " + std::to_string(preprocess.width()));
    }
    if (kind == ModelKind::kLogistic) {
      if (weights.size() != input_width) {
        fail("model: logistic has " + std::to_string(weights.size()) + " weights, expected " +
             std::to_string(input_width));
      }
      return;
    }
    if (layers.empty()) fail("model: mlp has no layers");
    std::size_t width = input_width;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.in() != width) {
        fail("model: layer " + std::to_string(l) + " expects input " +
             std::to_string(layer.in()) + ", got " + std::to_string(width));
      }
      if (layer.bias.size() != layer.out()) {
        fail("model: layer " + std::to_string(l) + " bias has " +
             std::to_string(layer.bias.size()) + " entries, expected " +
             std::to_string(layer.out()));
      }
      width = layer.out();
    }
    if (width == 0) fail("model: mlp output width is 0");
  }

  json to_json() const {
    json j;
    if (kind == ModelKind::kLogistic) {
      j = {{"kind", "logistic"}, {"weights", weights}, {"bias", bias}};
    } else {
      json arr = json::array();
      for (const auto& layer : layers) {
        json w = json::array();
        for (std::size_t r = 0; r < layer.out(); ++r) {
          auto row = layer.weights.row(r);
          w.push_back(std::vector<double>(row.begin(), row.end()));
        }
        arr.push_back({{"w", w},
                       {"b", layer.bias},
                       {"act", layer.activation == Activation::kRelu ? "relu" : "identity"}});
      }
      j = {{"kind", "mlp"}, {"layers", arr}};
    }
    j["threshold"] = threshold;
    j["preprocess"] = preprocess.to_json();
    return j;
  }

  static ModelSpec from_json(const json& j) {
    ModelSpec m;
    try {
      m.preprocess = PreprocessSpec::from_json(j.at("preprocess"));
      m.input_width = m.preprocess.width();
      if (j.contains("input_width")) {
        const auto declared = j.at("input_width").get<std::size_t>();
        if (declared != m.input_width) {
          fail("model: input_width " + std::to_string(declared) +
               " does not match encoded width " + std::to_string(m.input_width));
        }
      }
      m.threshold = j.value("threshold", 0.5);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "logistic") {
        m.kind = ModelKind::kLogistic;
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
      } else if (kind == "mlp") {
        m.kind = ModelKind::kMlp;
        for (const auto& lj : j.at("layers")) {
          const auto rows = lj.at("w").get<std::vector<std::vector<double>>>();
          DenseLayer layer;
          const std::size_t in = rows.empty() ? 0 : rows.front().size();
          layer.weights = Matrix(rows.size(), in);
          for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != in) {
              fail("model: layer " + std::to_string(m.layers.size()) + " has ragged weight rows");
            }
            std::copy(rows[r].begin(), rows[r].end(), layer.weights.row(r).begin());
          }
          layer.bias = lj.at("b").get<std::vector<double>>();
          const auto act = lj.value("act", std::string("identity"));
          if (act == "relu") {
            layer.activation = Activation::kRelu;
          } else if (act == "identity") {
            layer.activation = Activation::kIdentity;
          } else {
            fail("model: unknown activation \"" + act + "\" in layer " +
                 std::to_string(m.layers.size()));
          }
          m.layers.push_back(std::move(layer));
        }
      } else {
        fail("model: unknown kind \"" + kind + "\"");
      }
    } catch (const json::exception& e) {
      fail(std::string("model: ") + e.what());
    }
    m.validate();
    return m;
  }
};

inline ModelSpec load_model(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return ModelSpec::from_json(j);
  } catch (const Error& e) {
    fail(path + ": " + e.what());
  }
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

namespace detail {

inline void check_width(const ModelSpec& model, std::size_t width) {
  if (width != model.input_width) {
    fail("model expects " + std::to_string(model.input_width) + " encoded columns, got " +
         std::to_string(width));
  }
}

inline void check_target(const ModelSpec& model, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= model.num_classes()) {
    fail("target class " + std::to_string(target) + " out of range for a " +
         std::to_string(model.num_classes()) + "-class model");
  }
}

// Forward pass keeping every layer's pre-activation for backpropagation.
inline std::vector<std::vector<double>> forward_trace(const ModelSpec& model,
                                                      std::span<const double> x) {
  std::vector<std::vector<double>> pre;
  std::vector<double> act(x.begin(), x.end());
  for (const auto& layer : model.layers) {
    std::vector<double> z(layer.bias);
    for (std::size_t r = 0; r < layer.out(); ++r) {
      const auto w = layer.weights.row(r);
      double s = 0.0;
      for (std::size_t c = 0; c < w.size(); ++c) s += w[c] * act[c];
      z[r] += s;
    }
    act = z;
    if (layer.activation == Activation::kRelu) {
      for (double& v : act) v = v > 0.0 ? v : 0.0;
    }
    pre.push_back(std::move(z));
  }
  pre.push_back(std::move(act));  // final post-activation output = logits
  return pre;
}

}  // namespace detail

inline std::vector<double> logits(const ModelSpec& model, std::span<const double> x) {
  detail::check_width(model, x.size());
  if (model.kind == ModelKind::kLogistic) {
    double z = model.bias;
    for (std::size_t k = 0; k < x.size(); ++k) z += model.weights[k] * x[k];
    return {z};
  }
  auto trace = detail::forward_trace(model, x);
  return std::move(trace.back());
}

inline std::vector<double> probabilities_from_logits(std::span<const double> z) {
  if (z.size() == 1) return {sigmoid(-z[0]), sigmoid(z[0])};
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp(z[k] - top);
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> predict_proba_row(const ModelSpec& model, std::span<const double> x) {
  return probabilities_from_logits(logits(model, x));
}

inline int label_from_probabilities(const ModelSpec& model, std::span<const double> p) {
  if (model.binary()) return p[1] >= model.threshold ? 1 : 0;
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline int predict_label_row(const ModelSpec& model, std::span<const double> x) {
  const auto p = predict_proba_row(model, x);
  return label_from_probabilities(model, p);
}

inline Matrix predict_proba(const ModelSpec& model, const Matrix& x) {
  detail::check_width(model, x.cols());
  Matrix out(x.rows(), model.num_classes());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto p = predict_proba_row(model, x.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix predict_proba(const ModelSpec& model, const EncodedMatrix& x) {
  return predict_proba(model, x.values);
}

inline std::vector<int> predict_label(const ModelSpec& model, const Matrix& x) {
  detail::check_width(model, x.cols());
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_label_row(model, x.row(i));
  return out;
}

inline std::vector<int> predict_label(const ModelSpec& model, const EncodedMatrix& x) {
  return predict_label(model, x.values);
}

// Score of `target` on the requested scale.
inline double score(const ModelSpec& model, std::span<const double> x, int target,
                    ScoreScale scale) {
  detail::check_target(model, target);
  const auto z = logits(model, x);
  if (scale == ScoreScale::kLogit) {
    if (model.binary()) return target == 1 ? z[0] : -z[0];
    return z[static_cast<std::size_t>(target)];
  }
  if (model.binary()) return target == 1 ? sigmoid(z[0]) : sigmoid(-z[0]);
  return probabilities_from_logits(z)[static_cast<std::size_t>(target)];
}

// d score_target / d x by reverse-mode accumulation. The ReLU derivative at 0
// is taken as 0.
inline std::vector<double> gradient_score(const ModelSpec& model, std::span<const double> x,
                                          int target, ScoreScale scale) {
  detail::check_width(model, x.size());
  detail::check_target(model, target);
  const auto t = static_cast<std::size_t>(target);

  std::vector<std::vector<double>> trace;
  std::vector<double> z;
  if (model.kind == ModelKind::kLogistic) {
    z = logits(model, x);
  } else {
    trace = detail::forward_trace(model, x);
    z = trace.back();
  }

  // Gradient of the score w.r.t. the logits.
  std::vector<double> g(z.size(), 0.0);
  if (model.binary()) {
    const double sign = target == 1 ? 1.0 : -1.0;
    if (scale == ScoreScale::kLogit) {
      g[0] = sign;
    } else {
      const double p1 = sigmoid(z[0]);
      g[0] = sign * p1 * (1.0 - p1);
    }
  } else if (scale == ScoreScale::kLogit) {
    g[t] = 1.0;
  } else {
    const auto p = probabilities_from_logits(z);
    for (std::size_t k = 0; k < p.size(); ++k) g[k] = p[t] * ((k == t ? 1.0 : 0.0) - p[k]);
  }

  if (model.kind == ModelKind::kLogistic) {
    std::vector<double> out(model.weights);
    for (double& v : out) v *= g[0];
    return out;
  }

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    if (layer.activation == Activation::kRelu) {
      for (std::size_t r = 0; r < g.size(); ++r) {
        if (!(trace[l][r] > 0.0)) g[r] = 0.0;
      }
    }
    std::vector<double> prev(layer.in(), 0.0);
    for (std::size_t r = 0; r < layer.out(); ++r) {
      if (g[r] == 0.0) continue;
      const auto w = layer.weights.row(r);
      for (std::size_t c = 0; c < w.size(); ++c) prev[c] += w[c] * g[r];
    }
    g = std::move(prev);
  }
  return g;
}

}  // namespace cola
