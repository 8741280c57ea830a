#pragma once

// Feature schema, tabular data, and the standardize/one-hot encoding that maps
// original rows into the model's input space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/csv.hpp"
#include "cola/error.hpp"
#include "cola/matrix.hpp"

namespace cola {

using json = nlohmann::json;

enum class FeatureKind { kNumeric, kCategorical };

inline std::string to_string(FeatureKind kind) {
  return kind == FeatureKind::kNumeric ? "numeric" : "categorical";
}

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  std::vector<std::string> levels;  // categorical only

  bool categorical() const noexcept { return kind == FeatureKind::kCategorical; }

  std::optional<int> level_index(std::string_view level) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] == level) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  friend bool operator==(const Feature&, const Feature&) = default;
};

struct LabelSpec {
  std::string name;
  std::vector<std::string> classes;

  friend bool operator==(const LabelSpec&, const LabelSpec&) = default;
};

struct FeatureSchema {
  std::vector<Feature> features;
  LabelSpec label;

  std::size_t size() const noexcept { return features.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::optional<int> class_index(std::string_view name) const {
    for (std::size_t i = 0; i < label.classes.size(); ++i) {
      if (label.classes[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }

  void validate() const {
    if (features.empty()) fail("schema: no features declared");
    std::set<std::string> seen;
    for (const auto& f : features) {
      if (f.name.empty()) fail("schema: feature with empty name");
      if (f.name.starts_with('_')) {
        fail("schema: feature name \"" + f.name + "\" must not start with '_'");
      }
      if (!seen.insert(f.name).second) {
        fail("schema: duplicate feature name \"" + f.name + "\"");
      }
      if (f.categorical()) {
        std::set<std::string> levels(f.levels.begin(), f.levels.end());
        if (levels.size() != f.levels.size()) {
          fail("schema: feature \"" + f.name + "\" has duplicate levels");
        }
        if (levels.size() < 2) {
          fail("schema: categorical feature \"" + f.name + "\" has fewer than 2 levels");
        }
      } else if (!f.levels.empty()) {
        fail("schema: numeric feature \"" + f.name + "\" must not declare levels");
      }
    }
    if (label.name.empty()) fail("schema: label name is empty");
    if (seen.contains(label.name)) {
      fail("schema: label name \"" + label.name + "\" collides with a feature name");
    }
    std::set<std::string> classes(label.classes.begin(), label.classes.end());
    if (classes.size() != label.classes.size()) fail("schema: duplicate label classes");
    if (classes.size() < 2) fail("schema: label \"" + label.name + "\" needs at least 2 classes");
  }

  json to_json() const {
    json feats = json::array();
    for (const auto& f : features) {
      json item = {{"name", f.name}, {"kind", to_string(f.kind)}};
      if (f.categorical()) item["levels"] = f.levels;
      feats.push_back(std::move(item));
    }
    return {{"features", feats}, {"label", {{"name", label.name}, {"classes", label.classes}}}};
  }

  static FeatureSchema from_json(const json& j) {
    FeatureSchema schema;
    try {
      for (const auto& item : j.at("features")) {
        Feature f;
        f.name = item.at("name").get<std::string>();
        const auto kind = item.at("kind").get<std::string>();
        if (kind == "numeric") {
          f.kind = FeatureKind::kNumeric;
        } else if (kind == "categorical") {
          f.kind = FeatureKind::kCategorical;
          f.levels = item.at("levels").get<std::vector<std::string>>();
        } else {
          fail("schema: feature \"" + f.name + "\" has unknown kind \"" + kind + "\"");
        }
        schema.features.push_back(std::move(f));
      }
      const auto& lab = j.at("label");
      schema.label.name = lab.at("name").get<std::string>();
      schema.label.classes = lab.at("classes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(std::string("schema: ") + e.what());
    }
    schema.validate();
    return schema;
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

using SchemaPtr = std::shared_ptr<const FeatureSchema>;

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(path + ": parse error: " + e.what());
  }
}

inline FeatureSchema load_schema(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return FeatureSchema::from_json(j);
  } catch (const Error& e) {
    fail(path + ": " + e.what());
  }
}

// Rows in original space. Numeric cells hold their value; categorical cells
// hold the index of their level in the schema.
class InstanceSet {
 public:
  InstanceSet() = default;
  explicit InstanceSet(SchemaPtr schema) : schema_(std::move(schema)) {}

  const FeatureSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return schema_ ? schema_->size() : 0; }

  std::span<const double> row(std::size_t i) const {
    return {cells_.data() + i * cols(), cols()};
  }
  std::span<double> row(std::size_t i) { return {cells_.data() + i * cols(), cols()}; }

  double cell(std::size_t i, std::size_t j) const { return cells_[i * cols() + j]; }
  void set_cell(std::size_t i, std::size_t j, double v) { cells_[i * cols() + j] = v; }

  int level(std::size_t i, std::size_t j) const { return static_cast<int>(cell(i, j)); }

  std::string cell_text(std::size_t i, std::size_t j) const {
    const Feature& f = schema_->features[j];
    if (f.categorical()) return f.levels[static_cast<std::size_t>(level(i, j))];
    return csv::format_double(cell(i, j));
  }

  void append_row(std::span<const double> values) {
    if (values.size() != cols()) fail_internal("append_row: width mismatch");
    cells_.insert(cells_.end(), values.begin(), values.end());
    ++rows_;
  }

  const std::optional<std::vector<int>>& labels() const noexcept { return labels_; }
  void set_labels(std::vector<int> labels) { labels_ = std::move(labels); }

  InstanceSet select(std::span<const std::size_t> indices) const {
    InstanceSet out(schema_);
    std::vector<int> labels;
    for (std::size_t i : indices) {
      out.append_row(row(i));
      if (labels_) labels.push_back((*labels_)[i]);
    }
    if (labels_) out.set_labels(std::move(labels));
    return out;
  }

  friend bool operator==(const InstanceSet& a, const InstanceSet& b) {
    return *a.schema_ == *b.schema_ && a.rows_ == b.rows_ && a.cells_ == b.cells_ &&
           a.labels_ == b.labels_;
  }

 private:
  SchemaPtr schema_;
  std::size_t rows_ = 0;
  std::vector<double> cells_;
  std::optional<std::vector<int>> labels_;
};

// Underscore-prefixed metadata columns recognised in data files.
inline bool is_metadata_column(std::string_view name) {
  return name == "_factual_index" || name == "_valid" || name == "_status" ||
         name == "_edits";
}

struct TableOptions {
  bool expect_label = false;
  bool allow_empty = false;
};

// Parsed table plus the raw text of any metadata columns, keyed by name.
struct LoadedTable {
  InstanceSet data;
  std::map<std::string, std::vector<std::string>> metadata;
};

inline LoadedTable parse_table(const csv::Table& table, const SchemaPtr& schema,
                               const TableOptions& options, const std::string& source) {
  const FeatureSchema& s = *schema;
  std::vector<std::optional<std::size_t>> feature_col(s.size());
  std::optional<std::size_t> label_col;
  std::map<std::string, std::size_t> meta_cols;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const std::string& name = table.header[c];
    if (!seen.insert(name).second) fail(source + ": duplicate column \"" + name + "\"");
    if (auto idx = s.index_of(name)) {
      feature_col[*idx] = c;
    } else if (name == s.label.name) {
      label_col = c;
    } else if (is_metadata_column(name)) {
      meta_cols[name] = c;
    } else {
      fail(source + ": unknown column \"" + name + "\"");
    }
  }
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!feature_col[j]) fail(source + ": missing column \"" + s.features[j].name + "\"");
  }
  if (options.expect_label && !label_col) {
    fail(source + ": missing label column \"" + s.label.name + "\"");
  }
  if (table.rows.empty() && !options.allow_empty) fail(source + ": no rows");

  LoadedTable out{InstanceSet(schema), {}};
  std::vector<double> values(s.size());
  std::vector<int> labels;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& rec = table.rows[r];
    const std::string where = source + ": row " + std::to_string(r + 1);
    for (std::size_t j = 0; j < s.size(); ++j) {
      const Feature& f = s.features[j];
      const std::string& text = rec[*feature_col[j]];
      if (f.categorical()) {
        auto lvl = f.level_index(text);
        if (!lvl) {
          fail(where + ", feature \"" + f.name + "\": value \"" + text +
               "\" is not a declared level");
        }
        values[j] = *lvl;
      } else {
        auto v = csv::parse_double(text);
        if (!v || !std::isfinite(*v)) {
          fail(where + ", feature \"" + f.name + "\": \"" + text + "\" is not a finite number");
        }
        values[j] = *v;
      }
    }
    out.data.append_row(values);
    if (label_col) {
      const std::string& text = rec[*label_col];
      auto cls = s.class_index(text);
      if (!cls) fail(where + ": label \"" + text + "\" is not a declared class");
      labels.push_back(*cls);
    }
  }
  if (label_col) out.data.set_labels(std::move(labels));
  for (const auto& [name, col] : meta_cols) {
    auto& column = out.metadata[name];
    for (const auto& rec : table.rows) column.push_back(rec[col]);
  }
  return out;
}

inline InstanceSet load_table(const std::string& path, const SchemaPtr& schema,
                              bool expect_label, bool allow_empty = false) {
  return parse_table(csv::read_file(path), schema, {expect_label, allow_empty}, path).data;
}

// Extra trailing columns appended verbatim to every row of a written table.
struct ExtraColumn {
  std::string name;
  std::vector<std::string> values;
};

inline void write_table(std::ostream& out, const InstanceSet& data,
                        std::span<const ExtraColumn> extra = {}, bool with_labels = true) {
  const FeatureSchema& s = data.schema();
  csv::Record header = s.feature_names();
  const bool labels = with_labels && data.labels().has_value();
  if (labels) header.push_back(s.label.name);
  for (const auto& col : extra) header.push_back(col.name);
  csv::write_record(out, header);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    csv::Record rec;
    for (std::size_t j = 0; j < s.size(); ++j) rec.push_back(data.cell_text(i, j));
    if (labels) rec.push_back(s.label.classes[static_cast<std::size_t>((*data.labels())[i])]);
    for (const auto& col : extra) rec.push_back(col.values.at(i));
    csv::write_record(out, rec);
  }
}

inline void write_table_file(const std::string& path, const InstanceSet& data,
                             std::span<const ExtraColumn> extra = {}, bool with_labels = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file: " + path);
  write_table(out, data, extra, with_labels);
  if (!out) fail("write failed: " + path);
}

// Column range [offset, offset + width) occupied by one original feature.
struct ColumnGroup {
  std::size_t offset = 0;
  std::size_t width = 0;
};

struct PreprocessFeature {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  double mean = 0.0;
  double std = 1.0;
  std::vector<std::string> levels;
  bool degenerate = false;  // constant column, std forced to 1

  friend bool operator==(const PreprocessFeature&, const PreprocessFeature&) = default;
};

struct PreprocessSpec {
  std::vector<PreprocessFeature> features;

  std::size_t width() const {
    std::size_t d = 0;
    for (const auto& f : features) d += f.kind == FeatureKind::kNumeric ? 1 : f.levels.size();
    return d;
  }

  std::vector<ColumnGroup> groups() const {
    std::vector<ColumnGroup> out;
    std::size_t offset = 0;
    for (const auto& f : features) {
      const std::size_t w = f.kind == FeatureKind::kNumeric ? 1 : f.levels.size();
      out.push_back({offset, w});
      offset += w;
    }
    return out;
  }

  std::vector<std::size_t> column_map() const {
    std::vector<std::size_t> out;
    const auto gs = groups();
    for (std::size_t j = 0; j < gs.size(); ++j) out.insert(out.end(), gs[j].width, j);
    return out;
  }

  void validate() const {
    for (const auto& f : features) {
      if (f.kind == FeatureKind::kNumeric) {
        if (!std::isfinite(f.mean)) fail("preprocess: feature \"" + f.name + "\" mean is not finite");
        if (!(f.std > 0.0) || !std::isfinite(f.std)) {
          fail("preprocess: feature \"" + f.name + "\" needs std > 0");
        }
      } else if (f.levels.size() < 2) {
        fail("preprocess: categorical feature \"" + f.name + "\" has fewer than 2 levels");
      }
    }
  }

  // Errors unless the spec was built for exactly this schema's features.
  void check_compatible(const FeatureSchema& schema) const {
    if (features.size() != schema.size()) {
      fail("preprocess has " + std::to_string(features.size()) + " features, schema has " +
           std::to_string(schema.size()));
    }
    for (std::size_t j = 0; j < features.size(); ++j) {
      const auto& p = features[j];
      const auto& f = schema.features[j];
      if (p.name != f.name || p.kind != f.kind || p.levels != f.levels) {
        fail("preprocess feature " + std::to_string(j) + " (\"" + p.name +
             "\") does not match schema feature \"" + f.name + "\"");
      }
    }
  }

  json to_json() const {
    json feats = json::array();
    for (const auto& f : features) {
      json item = {{"name", f.name}, {"kind", to_string(f.kind)}};
      if (f.kind == FeatureKind::kNumeric) {
        item["mean"] = f.mean;
        item["std"] = f.std;
      } else {
        item["levels"] = f.levels;
      }
      feats.push_back(std::move(item));
    }
    return {{"features", feats}};
  }

  static PreprocessSpec from_json(const json& j) {
    PreprocessSpec spec;
    try {
      for (const auto& item : j.at("features")) {
        PreprocessFeature f;
        f.name = item.at("name").get<std::string>();
        const auto kind = item.at("kind").get<std::string>();
        if (kind == "numeric") {
          f.mean = item.at("mean").get<double>();
          f.std = item.at("std").get<double>();
        } else if (kind == "categorical") {
          f.kind = FeatureKind::kCategorical;
          f.levels = item.at("levels").get<std::vector<std::string>>();
        } else {
          fail("preprocess: unknown kind \"" + kind + "\"");
        }
        spec.features.push_back(std::move(f));
      }
    } catch (const json::exception& e) {
      fail(std::string("preprocess: ") + e.what());
    }
    spec.validate();
    return spec;
  }

  friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

inline constexpr double kDegenerateStd = 1e-12;

// Population mean/std per numeric feature; constant columns fall back to std 1.
inline PreprocessSpec fit_preprocess(const InstanceSet& data) {
  if (data.rows() < 2) fail("fit_preprocess: needs at least 2 rows");
  const FeatureSchema& s = data.schema();
  PreprocessSpec spec;
  const double n = static_cast<double>(data.rows());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const Feature& f = s.features[j];
    PreprocessFeature p{f.name, f.kind, 0.0, 1.0, f.levels, false};
    if (!f.categorical()) {
      double sum = 0.0;
      for (std::size_t i = 0; i < data.rows(); ++i) sum += data.cell(i, j);
      const double mean = sum / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < data.rows(); ++i) {
        const double dev = data.cell(i, j) - mean;
        ss += dev * dev;
      }
      const double sd = std::sqrt(ss / n);
      p.mean = mean;
      if (sd < kDegenerateStd) {
        p.std = 1.0;
        p.degenerate = true;
      } else {
        p.std = sd;
      }
    }
    spec.features.push_back(std::move(p));
  }
  return spec;
}

struct EncodedMatrix {
  Matrix values;
  std::vector<std::size_t> column_map;  // encoded column -> original feature
};

// Encodes one original-space row into `out` (width prep.width()).
inline void encode_row(std::span<const double> cells, const PreprocessSpec& prep,
                       std::span<double> out) {
  std::size_t c = 0;
  for (std::size_t j = 0; j < prep.features.size(); ++j) {
    const auto& f = prep.features[j];
    if (f.kind == FeatureKind::kNumeric) {
      out[c++] = (cells[j] - f.mean) / f.std;
    } else {
      const auto lvl = static_cast<std::size_t>(cells[j]);
      for (std::size_t k = 0; k < f.levels.size(); ++k) out[c + k] = k == lvl ? 1.0 : 0.0;
      c += f.levels.size();
    }
  }
}

inline std::vector<double> encode_row(std::span<const double> cells, const PreprocessSpec& prep) {
  std::vector<double> out(prep.width());
  encode_row(cells, prep, out);
  return out;
}

inline EncodedMatrix encode(const InstanceSet& data, const PreprocessSpec& prep) {
  prep.check_compatible(data.schema());
  EncodedMatrix m{Matrix(data.rows(), prep.width()), prep.column_map()};
  for (std::size_t i = 0; i < data.rows(); ++i) encode_row(data.row(i), prep, m.values.row(i));
  return m;
}

inline constexpr double kOneHotTolerance = 1e-9;

// Index of the largest entry in a one-hot group; lowest index wins ties.
inline std::size_t argmax_level(std::span<const double> group) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < group.size(); ++k) {
    if (group[k] > group[best]) best = k;
  }
  return best;
}

// Decodes one encoded row. Returns false if some group needed argmax repair.
inline bool decode_row(std::span<const double> encoded, const PreprocessSpec& prep,
                       std::span<double> out) {
  bool on_grid = true;
  std::size_t c = 0;
  for (std::size_t j = 0; j < prep.features.size(); ++j) {
    const auto& f = prep.features[j];
    if (f.kind == FeatureKind::kNumeric) {
      out[j] = encoded[c++] * f.std + f.mean;
      continue;
    }
    const auto group = encoded.subspan(c, f.levels.size());
    c += f.levels.size();
    const std::size_t best = argmax_level(group);
    if (!(group[best] > 0.0)) {
      fail("undecodable one-hot group for feature \"" + f.name + "\"");
    }
    double sum = 0.0;
    bool binary = true;
    for (double v : group) {
      sum += v;
      binary = binary && (std::abs(v) <= kOneHotTolerance || std::abs(v - 1.0) <= kOneHotTolerance);
    }
    if (!binary || std::abs(sum - 1.0) > kOneHotTolerance) on_grid = false;
    out[j] = static_cast<double>(best);
  }
  return on_grid;
}

inline InstanceSet decode(const EncodedMatrix& m, const PreprocessSpec& prep,
                          const SchemaPtr& schema, std::vector<std::string>* warnings = nullptr) {
  prep.check_compatible(*schema);
  if (m.values.cols() != prep.width()) {
    fail("decode: matrix width " + std::to_string(m.values.cols()) + " != encoded width " +
         std::to_string(prep.width()));
  }
  InstanceSet out(schema);
  std::vector<double> cells(schema->size());
  for (std::size_t i = 0; i < m.values.rows(); ++i) {
    if (!decode_row(m.values.row(i), prep, cells) && warnings) {
      warnings->push_back("row " + std::to_string(i) +
                          ": off-grid one-hot group resolved by argmax");
    }
    out.append_row(cells);
  }
  return out;
}

inline constexpr double kNumericChangeTolerance = 1e-9;

struct ChangeMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> per_row;
  std::size_t total = 0;

  bool at(std::size_t i, std::size_t j) const { return mask[i * cols + j] != 0; }
};

inline bool cell_changed(const Feature& f, double a, double b, double numeric_tol) {
  if (f.categorical()) return a != b;
  return std::abs(a - b) > numeric_tol;
}

inline ChangeMask diff_features(const InstanceSet& a, const InstanceSet& b,
                                double numeric_tol = kNumericChangeTolerance) {
  if (a.schema() != b.schema()) fail("diff_features: schemas differ");
  if (a.rows() != b.rows()) {
    fail("diff_features: row counts differ (" + std::to_string(a.rows()) + " vs " +
         std::to_string(b.rows()) + ")");
  }
  const FeatureSchema& s = a.schema();
  ChangeMask out{a.rows(), s.size(), std::vector<std::uint8_t>(a.rows() * s.size(), 0),
                 std::vector<std::size_t>(a.rows(), 0), 0};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (cell_changed(s.features[j], a.cell(i, j), b.cell(i, j), numeric_tol)) {
        out.mask[i * s.size() + j] = 1;
        ++out.per_row[i];
        ++out.total;
      }
    }
  }
  return out;
}

}  // namespace cola
