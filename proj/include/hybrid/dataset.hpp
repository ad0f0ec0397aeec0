#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hybrid/binary_io.hpp"
#include "hybrid/error.hpp"
#include "hybrid/random.hpp"

namespace hybrid {

using Label = std::uint32_t;
using FeatureVector = std::span<const float>;

/// Immutable labelled feature matrix: n rows of d float32 features, one class id
/// per row, and the class-name table. Unlabelled datasets (features to be
/// predicted) carry no labels and possibly an empty class table.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t d, std::vector<float> features, std::vector<Label> labels,
          std::vector<std::string> class_names)
      : d_(d),
        features_(std::move(features)),
        labels_(std::move(labels)),
        class_names_(std::move(class_names)),
        labelled_(true) {
    validate();
  }

  static Dataset unlabelled(std::size_t d, std::vector<float> features,
                            std::vector<std::string> class_names = {}) {
    Dataset ds;
    ds.d_ = d;
    ds.features_ = std::move(features);
    ds.class_names_ = std::move(class_names);
    ds.labelled_ = false;
    ds.validate();
    return ds;
  }

  std::size_t n() const noexcept { return d_ == 0 ? 0 : features_.size() / d_; }
  std::size_t d() const noexcept { return d_; }
  std::size_t k() const noexcept { return class_names_.size(); }
  bool has_labels() const noexcept { return labelled_; }

  FeatureVector row(std::size_t i) const { return {features_.data() + i * d_, d_}; }
  Label label(std::size_t i) const { return labels_[i]; }

  const std::vector<float>& features() const noexcept { return features_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  /// Rows at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<float> f;
    f.reserve(indices.size() * d_);
    std::vector<Label> l;
    for (auto i : indices) {
      if (i >= n()) throw InvalidInput("subset index out of range");
      auto r = row(i);
      f.insert(f.end(), r.begin(), r.end());
      if (labelled_) l.push_back(labels_[i]);
    }
    if (!labelled_) return unlabelled(d_, std::move(f), class_names_);
    return Dataset(d_, std::move(f), std::move(l), class_names_);
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(k(), 0);
    for (auto y : labels_) ++counts[y];
    return counts;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    if (a.d_ != b.d_ || a.labelled_ != b.labelled_ || a.labels_ != b.labels_ ||
        a.class_names_ != b.class_names_ || a.features_.size() != b.features_.size()) {
      return false;
    }
    // bitwise, so -0.0f and 0.0f are distinguished
    return std::equal(a.features_.begin(), a.features_.end(), b.features_.begin(),
                      [](float x, float y) {
                        return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                      });
  }

 private:
  void validate() const {
    if (d_ == 0) {
      if (!features_.empty()) throw InvalidInput("d = 0 with non-empty feature payload");
    } else if (features_.size() % d_ != 0) {
      throw InvalidInput("feature payload is not a multiple of d");
    }
    if (labelled_) {
      if (class_names_.empty()) throw InvalidInput("labelled dataset needs K >= 1 classes");
      if (labels_.size() != n()) throw InvalidInput("label count does not match row count");
      for (auto y : labels_) {
        if (y >= class_names_.size()) throw InvalidInput("label out of range [0, K)");
      }
    }
    std::set<std::string> seen;
    for (const auto& name : class_names_) {
      if (!seen.insert(name).second) throw InvalidInput("duplicate class name '" + name + "'");
    }
    for (float v : features_) {
      if (!std::isfinite(v)) throw InvalidInput("non-finite feature value");
    }
  }

  std::size_t d_ = 0;
  std::vector<float> features_;
  std::vector<Label> labels_;
  std::vector<std::string> class_names_;
  bool labelled_ = false;
};

// ---------------------------------------------------------------------------
// FVEC / FMAP shared blocks

namespace detail {

inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::uint8_t kFlagLabels = 0x01;

inline void write_label_and_class_blocks(io::ByteWriter& w, bool labelled,
                                         const std::vector<Label>& labels,
                                         const std::vector<std::string>& class_names) {
  if (labelled) {
    for (auto y : labels) w.u32(y);
  }
  w.u32(static_cast<std::uint32_t>(class_names.size()));
  for (const auto& name : class_names) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidInput("class name longer than 65535 bytes");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
}

struct LabelBlocks {
  std::vector<Label> labels;
  std::vector<std::string> class_names;
};

inline LabelBlocks read_label_and_class_blocks(io::ByteReader& r, std::size_t n, bool labelled) {
  LabelBlocks out;
  const std::size_t label_offset = r.offset();
  if (labelled) {
    if (n > r.remaining() / 4) throw FormatError("truncated label block", r.offset());
    out.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.labels.push_back(r.u32("label block"));
  }
  const std::uint32_t k = r.u32("class count");
  std::set<std::string> seen;
  for (std::uint32_t c = 0; c < k; ++c) {
    const std::size_t at = r.offset();
    const std::uint16_t len = r.u16("class name length");
    std::string name(r.bytes(len, "class name"));
    if (!seen.insert(name).second) throw FormatError("duplicate class name '" + name + "'", at);
    out.class_names.push_back(std::move(name));
  }
  if (labelled && k == 0 && n > 0) throw FormatError("labels present but class table empty", r.offset());
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    if (out.labels[i] >= k) {
      throw FormatError("label " + std::to_string(out.labels[i]) + " >= K = " + std::to_string(k),
                        label_offset + 4 * i);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after class table", r.offset());
  return out;
}

inline std::uint8_t read_header_prefix(io::ByteReader& r, std::string_view magic) {
  if (r.remaining() < 4 || r.bytes(4, "magic") != magic) {
    throw FormatError("bad magic, expected '" + std::string(magic) + "'", 0);
  }
  const std::size_t at = r.offset();
  const std::uint8_t version = r.u8("version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported version " + std::to_string(version), at);
  }
  const std::size_t flags_at = r.offset();
  const std::uint8_t flags = r.u8("flags");
  if ((flags & ~kFlagLabels) != 0) throw FormatError("unknown flag bits", flags_at);
  const std::size_t reserved_at = r.offset();
  if (r.u16("reserved") != 0) throw FormatError("reserved field must be 0", reserved_at);
  return flags;
}

inline void check_finite(const std::vector<float>& v, std::size_t payload_offset) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw FormatError("non-finite feature value", payload_offset + 4 * i);
  }
}

}  // namespace detail

inline std::string encode_feature_file(const Dataset& ds) {
  if (ds.n() > std::numeric_limits<std::uint32_t>::max() ||
      ds.d() > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidInput("dataset too large for FVEC");
  }
  io::ByteWriter w;
  w.bytes("FVEC");
  w.u8(detail::kFormatVersion);
  w.u8(ds.has_labels() ? detail::kFlagLabels : 0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(ds.n()));
  w.u32(static_cast<std::uint32_t>(ds.d()));
  w.f32s(ds.features());
  detail::write_label_and_class_blocks(w, ds.has_labels(), ds.labels(), ds.class_names());
  return w.data();
}

inline Dataset read_feature_bytes(std::string_view bytes) {
  io::ByteReader r(bytes);
  const std::uint8_t flags = detail::read_header_prefix(r, "FVEC");
  const std::uint32_t n = r.u32("n");
  const std::size_t d_at = r.offset();
  const std::uint32_t d = r.u32("d");
  if (d == 0 && n > 0) throw FormatError("d must be >= 1 when n > 0", d_at);
  const std::size_t payload_at = r.offset();
  const std::uint64_t count = std::uint64_t{n} * d;
  if (count > r.remaining() / 4) throw FormatError("truncated feature payload", payload_at);
  std::vector<float> features;
  r.f32s(features, static_cast<std::size_t>(count), "feature payload");
  detail::check_finite(features, payload_at);
  const bool labelled = (flags & detail::kFlagLabels) != 0;
  auto blocks = detail::read_label_and_class_blocks(r, n, labelled);
  Dataset ds;
  if (labelled && !blocks.class_names.empty()) {
    ds = Dataset(d, std::move(features), std::move(blocks.labels), std::move(blocks.class_names));
  } else if (labelled) {
    // n == 0 with no classes: structurally valid but carries no label information
    ds = Dataset::unlabelled(d, std::move(features), {});
  } else {
    ds = Dataset::unlabelled(d, std::move(features), std::move(blocks.class_names));
  }
  return ds;
}

inline Dataset read_feature_file(const std::filesystem::path& path) {
  return read_feature_bytes(io::read_file(path));
}

inline void write_feature_file(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_feature_file(ds));
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string path;
  std::string label;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  /// Sorted distinct labels; a label's position is its class id.
  std::vector<std::string> class_table() const {
    std::set<std::string> names;
    for (const auto& e : entries) names.insert(e.label);
    return {names.begin(), names.end()};
  }
  Label class_id(const std::string& label) const {
    const auto table = class_table();
    return static_cast<Label>(std::lower_bound(table.begin(), table.end(), label) - table.begin());
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline Manifest parse_manifest(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != "path,label") throw FormatError("manifest header must be 'path,label'");
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 2) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 2 fields");
    }
    if (fields[0].empty()) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": empty path");
    }
    if (fields[1].empty()) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": empty label");
    }
    m.entries.push_back({std::move(fields[0]), std::move(fields[1])});
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path));
}

inline std::string format_manifest(const Manifest& m) {
  std::string out = "path,label\n";
  for (const auto& e : m.entries) {
    out += detail::csv_field(e.path) + "," + detail::csv_field(e.label) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and balancing

struct SplitResult {
  Dataset train;
  Dataset holdout;
  std::vector<std::size_t> train_indices;    // ascending, into the source
  std::vector<std::size_t> holdout_indices;  // ascending, into the source
  double ratio = 0.8;
  std::uint64_t seed = 0;
};

/// Number of training rows for a class of size n_c: round-half-up of ratio*n_c.
inline std::size_t stratified_train_count(std::size_t n_c, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_c) + 0.5));
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.k());
  for (std::size_t i = 0; i < ds.n(); ++i) by_class[ds.label(i)].push_back(i);
  return by_class;
}

/// Per-class random split; each class keeps round_half_up(ratio * n_c) rows for
/// training. Both outputs preserve source row order.
inline SplitResult stratified_split(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("split ratio must lie in (0, 1)");
  if (!ds.has_labels()) throw InvalidInput("stratified split needs labels");
  auto by_class = indices_by_class(ds);
  SplitResult out;
  out.ratio = ratio;
  out.seed = seed;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) {
      throw InvalidInput("class '" + ds.class_names()[c] + "' has no samples");
    }
    Rng rng(seed, "stratified_split", c);
    shuffle(members, rng);
    const std::size_t n_train = stratified_train_count(members.size(), ratio);
    out.train_indices.insert(out.train_indices.end(), members.begin(),
                             members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.holdout_indices.insert(out.holdout_indices.end(),
                               members.begin() + static_cast<std::ptrdiff_t>(n_train),
                               members.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.holdout_indices.begin(), out.holdout_indices.end());
  out.train = ds.subset(out.train_indices);
  out.holdout = ds.subset(out.holdout_indices);
  return out;
}

/// Indices retained by random undersampling, ascending.
inline std::vector<std::size_t> undersample_indices(const Dataset& ds, std::uint64_t seed) {
  if (!ds.has_labels()) throw InvalidInput("undersampling needs labels");
  auto by_class = indices_by_class(ds);
  std::size_t target = std::numeric_limits<std::size_t>::max();
  for (const auto& members : by_class) {
    if (!members.empty()) target = std::min(target, members.size());
  }
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) continue;
    Rng rng(seed, "undersample", c);
    auto chosen = sample_without_replacement(by_class[c], target, rng);
    keep.insert(keep.end(), chosen.begin(), chosen.end());
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Every populated class is reduced to the smallest populated class count by a
/// uniform draw without replacement. Row order is preserved.
inline Dataset undersample(const Dataset& ds, std::uint64_t seed) {
  const auto keep = undersample_indices(ds, seed);
  return ds.subset(keep);
}

}  // namespace hybrid
