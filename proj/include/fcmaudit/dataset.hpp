#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcmaudit/csv.hpp"
#include "fcmaudit/rng.hpp"

namespace fcmaudit {

enum class FeatureKind { numeric, nominal };

struct FeatureSchema {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  bool is_protected = false;
  std::vector<std::string> categories;  // nominal only
  std::string id_label;                 // short code, e.g. "F13"
};

// Typed tabular data. Cells are stored row-major as doubles; nominal cells
// hold the category index. Immutable after construction in normal use.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<FeatureSchema> schema, std::vector<std::string> class_names)
      : schema_(std::move(schema)), class_names_(std::move(class_names)) {}

  std::size_t rows() const { return labels_.size(); }
  std::size_t features() const { return schema_.size(); }

  const std::vector<FeatureSchema>& schema() const { return schema_; }
  std::vector<FeatureSchema>& schema() { return schema_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<int>& labels() const { return labels_; }

  double value(std::size_t r, std::size_t c) const { return cells_[r * features() + c]; }
  int category(std::size_t r, std::size_t c) const {
    return static_cast<int>(cells_[r * features() + c]);
  }

  void add_row(const std::vector<double>& cells, int label) {
    cells_.insert(cells_.end(), cells.begin(), cells.end());
    labels_.push_back(label);
  }

  std::vector<double> row(std::size_t r) const {
    return {cells_.begin() + static_cast<long>(r * features()),
            cells_.begin() + static_cast<long>((r + 1) * features())};
  }

  std::vector<double> numeric_column(std::size_t c) const {
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = value(r, c);
    return out;
  }

  std::vector<int> nominal_column(std::size_t c) const {
    std::vector<int> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = category(r, c);
    return out;
  }

  int feature_index(const std::string& id_or_name) const {
    for (std::size_t j = 0; j < schema_.size(); ++j)
      if (schema_[j].id_label == id_or_name || schema_[j].name == id_or_name)
        return static_cast<int>(j);
    return -1;
  }

  std::vector<std::string> feature_ids() const {
    std::vector<std::string> ids(schema_.size());
    for (std::size_t j = 0; j < schema_.size(); ++j) ids[j] = schema_[j].id_label;
    return ids;
  }

  // Checks the structural invariants; throws on violation.
  void validate() const {
    if (rows() == 0) throw std::runtime_error("dataset has no rows");
    if (features() == 0) throw std::runtime_error("dataset has no features");
    std::set<std::string> names;
    for (const auto& f : schema_) {
      if (!names.insert(f.name).second)
        throw std::runtime_error("duplicate feature name: " + f.name);
      if (f.kind == FeatureKind::nominal) {
        std::set<std::string> cats(f.categories.begin(), f.categories.end());
        if (cats.size() != f.categories.size() || f.categories.empty())
          throw std::runtime_error("feature " + f.name +
                                   ": nominal categories must be unique and non-empty");
      }
    }
    for (std::size_t r = 0; r < rows(); ++r) {
      if (labels_[r] < 0 || labels_[r] >= static_cast<int>(class_names_.size()))
        throw std::runtime_error("label out of range at row " + std::to_string(r + 1));
      for (std::size_t c = 0; c < features(); ++c) {
        if (schema_[c].kind == FeatureKind::nominal) {
          const double v = value(r, c);
          if (v != std::floor(v) || v < 0 ||
              v >= static_cast<double>(schema_[c].categories.size()))
            throw std::runtime_error("invalid category index at row " + std::to_string(r + 1) +
                                     ", column " + schema_[c].name);
        } else if (!std::isfinite(value(r, c))) {
          throw std::runtime_error("non-finite value at row " + std::to_string(r + 1) +
                                   ", column " + schema_[c].name);
        }
      }
    }
  }

  bool operator==(const Dataset& other) const {
    if (labels_ != other.labels_ || class_names_ != other.class_names_ ||
        cells_ != other.cells_ || schema_.size() != other.schema_.size())
      return false;
    for (std::size_t j = 0; j < schema_.size(); ++j) {
      const auto& a = schema_[j];
      const auto& b = other.schema_[j];
      if (a.name != b.name || a.kind != b.kind || a.is_protected != b.is_protected ||
          a.categories != b.categories || a.id_label != b.id_label)
        return false;
    }
    return true;
  }

 private:
  std::vector<FeatureSchema> schema_;
  std::vector<double> cells_;
  std::vector<int> labels_;
  std::vector<std::string> class_names_;
};

// Sidecar schema file: JSON with per-column name/kind/protected and optional
// class declarations.
struct SchemaFile {
  std::vector<FeatureSchema> features;
  std::vector<std::string> classes;  // optional; fixes class index order
  std::string positive_class;        // optional; class whose probability is explained
};

inline SchemaFile load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file: " + path);
  nlohmann::json j;
  in >> j;
  SchemaFile out;
  if (!j.contains("features") || !j["features"].is_array() || j["features"].empty())
    throw std::runtime_error("schema file " + path + ": missing non-empty 'features' array");
  int idx = 0;
  for (const auto& f : j["features"]) {
    FeatureSchema fs;
    fs.name = f.at("name").get<std::string>();
    const std::string kind = f.at("kind").get<std::string>();
    if (kind == "numeric")
      fs.kind = FeatureKind::numeric;
    else if (kind == "nominal")
      fs.kind = FeatureKind::nominal;
    else
      throw std::runtime_error("schema feature " + fs.name + ": unknown kind '" + kind + "'");
    fs.is_protected = f.value("protected", false);
    fs.id_label = f.value("id", "F" + std::to_string(idx + 1));
    if (f.contains("categories"))
      fs.categories = f["categories"].get<std::vector<std::string>>();
    out.features.push_back(std::move(fs));
    ++idx;
  }
  if (j.contains("classes")) out.classes = j["classes"].get<std::vector<std::string>>();
  out.positive_class = j.value("positive_class", "");
  return out;
}

// Loads a delimited text file against a declared schema. The label column is
// last. Nominal strings map to category indices; unseen category strings are
// appended in first-seen order. Label strings map to class indices, using the
// declared class order when given, else first-seen order.
inline Dataset load_csv(const std::string& path, const std::vector<FeatureSchema>& schema,
                        const csv::Options& opt = {},
                        const std::vector<std::string>& declared_classes = {}) {
  const auto raw = csv::read_rows(path, opt);
  if (raw.empty()) throw std::runtime_error("no rows in " + path);

  std::vector<FeatureSchema> schema_out = schema;
  std::vector<std::map<std::string, int>> cat_index(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j)
    for (std::size_t k = 0; k < schema[j].categories.size(); ++k)
      cat_index[j][schema[j].categories[k]] = static_cast<int>(k);

  std::vector<std::string> class_names = declared_classes;
  std::map<std::string, int> class_index;
  for (std::size_t k = 0; k < class_names.size(); ++k)
    class_index[class_names[k]] = static_cast<int>(k);

  const std::size_t m = schema.size();
  std::vector<std::vector<double>> cells;
  std::vector<int> labels;
  for (std::size_t r = 0; r < raw.size(); ++r) {
    const auto& row = raw[r];
    if (row.size() != m + 1)
      throw std::runtime_error(path + ": row " + std::to_string(r + 1) + " has " +
                               std::to_string(row.size()) + " fields, expected " +
                               std::to_string(m + 1));
    std::vector<double> out(m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::string& cell = row[j];
      if (cell.empty())
        throw std::runtime_error(path + ": row " + std::to_string(r + 1) + ", column " +
                                 schema[j].name + ": empty cell");
      if (schema[j].kind == FeatureKind::numeric) {
        double v;
        if (!csv::parse_double(cell, v) || !std::isfinite(v))
          throw std::runtime_error(path + ": row " + std::to_string(r + 1) + ", column " +
                                   schema[j].name + ": cannot parse numeric value '" + cell +
                                   "'");
        out[j] = v;
      } else {
        auto it = cat_index[j].find(cell);
        if (it == cat_index[j].end()) {
          const int next = static_cast<int>(schema_out[j].categories.size());
          schema_out[j].categories.push_back(cell);
          it = cat_index[j].emplace(cell, next).first;
        }
        out[j] = it->second;
      }
    }
    const std::string& label = row[m];
    auto it = class_index.find(label);
    if (it == class_index.end()) {
      if (!declared_classes.empty())
        throw std::runtime_error(path + ": row " + std::to_string(r + 1) + ": unknown class '" +
                                 label + "'");
      const int next = static_cast<int>(class_names.size());
      class_names.push_back(label);
      it = class_index.emplace(label, next).first;
    }
    cells.push_back(std::move(out));
    labels.push_back(it->second);
  }

  Dataset ds(std::move(schema_out), std::move(class_names));
  for (std::size_t r = 0; r < cells.size(); ++r) ds.add_row(cells[r], labels[r]);
  ds.validate();
  return ds;
}

// Min-max scales every numeric column to [0,1]; constant columns map to 0.
// Nominal columns are untouched. Returns a new Dataset.
inline Dataset normalize_numeric(const Dataset& ds) {
  const std::size_t m = ds.features();
  std::vector<double> lo(m, 0.0), span(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    if (ds.schema()[j].kind != FeatureKind::numeric) continue;
    double mn = ds.value(0, j), mx = mn;
    for (std::size_t r = 1; r < ds.rows(); ++r) {
      mn = std::min(mn, ds.value(r, j));
      mx = std::max(mx, ds.value(r, j));
    }
    lo[j] = mn;
    span[j] = mx - mn;
  }
  Dataset out(ds.schema(), ds.class_names());
  std::vector<double> row(m);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      if (ds.schema()[j].kind == FeatureKind::numeric)
        row[j] = span[j] > 0.0 ? (ds.value(r, j) - lo[j]) / span[j] : 0.0;
      else
        row[j] = ds.value(r, j);
    }
    out.add_row(row, ds.labels()[r]);
  }
  return out;
}

// Writes the dataset back as delimited text (nominal cells as category
// strings, label column last). Numeric formatting round-trips exactly.
inline void write_csv(const Dataset& ds, std::ostream& os, char delimiter = ',',
                      bool header = false) {
  if (header) {
    std::vector<std::string> h;
    for (const auto& f : ds.schema()) h.push_back(f.name);
    h.push_back("class");
    csv::write_row(os, h, delimiter);
  }
  std::vector<std::string> cells(ds.features() + 1);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t j = 0; j < ds.features(); ++j) {
      if (ds.schema()[j].kind == FeatureKind::numeric)
        cells[j] = csv::format_double(ds.value(r, j));
      else
        cells[j] = ds.schema()[j].categories[ds.category(r, j)];
    }
    cells[ds.features()] = ds.class_names()[ds.labels()[r]];
    csv::write_row(os, cells, delimiter);
  }
}

inline void write_csv_file(const Dataset& ds, const std::string& path, char delimiter = ',',
                           bool header = false) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_csv(ds, os, delimiter, header);
}

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

// Deterministic stratified split. Rows are shuffled per class with a seeded
// generator, then allocated by largest-remainder quotas so every part's class
// count is within one row of proportional (ties prefer train, validation,
// test in that order).
inline SplitIndices stratified_split(const Dataset& ds,
                                     const std::array<double, 3>& fractions,
                                     std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f <= 0.0) throw std::invalid_argument("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1 (got " + std::to_string(sum) +
                                ")");

  const std::size_t k = ds.class_names().size();
  std::vector<std::vector<int>> by_class(k);
  for (std::size_t r = 0; r < ds.rows(); ++r)
    by_class[ds.labels()[r]].push_back(static_cast<int>(r));

  SplitIndices out;
  out.seed = seed;
  Rng rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 3)
      throw std::runtime_error("class '" + ds.class_names()[c] + "' has " +
                               std::to_string(idx.size()) + " rows, fewer than the 3 parts");
    rng.shuffle(idx);

    const double nc = static_cast<double>(idx.size());
    std::array<std::size_t, 3> count;
    std::array<double, 3> frac;
    std::size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double quota = fractions[p] * nc;
      count[p] = static_cast<std::size_t>(std::floor(quota));
      frac[p] = quota - static_cast<double>(count[p]);
      assigned += count[p];
    }
    for (std::size_t leftover = idx.size() - assigned; leftover > 0; --leftover) {
      int best = 0;
      for (int p = 1; p < 3; ++p)
        if (frac[p] > frac[best]) best = p;
      ++count[best];
      frac[best] = -1.0;
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < count[0]; ++i) out.train.push_back(idx[pos++]);
    for (std::size_t i = 0; i < count[1]; ++i) out.validation.push_back(idx[pos++]);
    for (std::size_t i = 0; i < count[2]; ++i) out.test.push_back(idx[pos++]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// Seeded row subsample without replacement, original order kept. Used to cut
// large files down to desk scale. max_rows <= 0 means no subsampling.
inline Dataset subsample(const Dataset& ds, int max_rows, std::uint64_t seed) {
  if (max_rows <= 0 || static_cast<std::size_t>(max_rows) >= ds.rows()) return ds;
  std::vector<int> idx(ds.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  Dataset out(ds.schema(), ds.class_names());
  for (int r : idx) out.add_row(ds.row(r), ds.labels()[r]);
  return out;
}

}  // namespace fcmaudit
