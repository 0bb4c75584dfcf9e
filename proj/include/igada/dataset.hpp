#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "igada/core.hpp"

namespace igada {

enum class Origin { real, generated };

struct Provenance {
  Origin origin = Origin::real;
  std::string generator_id;
  int round = -1;
  std::optional<std::size_t> source_index;

  static Provenance real() { return {}; }
  static Provenance generated(std::string id, int round, std::optional<std::size_t> source = std::nullopt) {
    return {Origin::generated, std::move(id), round, source};
  }

  bool is_real() const noexcept { return origin == Origin::real; }
  bool operator==(const Provenance&) const = default;
};

/// One T x F sample, stored row-major (time-major): value(t, f) = values[t * F + f].
class TimeWindow {
 public:
  TimeWindow(std::size_t T, std::size_t F, std::vector<double> values, std::size_t label,
             std::string group_key = {}, Provenance provenance = Provenance::real())
      : T_(T), F_(F), values_(std::move(values)), label_(label),
        group_key_(std::move(group_key)), provenance_(std::move(provenance)) {
    if (T_ == 0 || F_ == 0) throw ValidationError("window shape must be positive");
    if (values_.size() != T_ * F_)
      throw ValidationError("window has " + std::to_string(values_.size()) + " values, expected " +
                            std::to_string(T_ * F_));
    for (double v : values_)
      if (!std::isfinite(v)) throw ValidationError("window contains a non-finite value");
    if (provenance_.is_real() && (!provenance_.generator_id.empty() || provenance_.source_index))
      throw ValidationError("real window cannot carry generator provenance");
    if (!provenance_.is_real() && provenance_.generator_id.empty())
      throw ValidationError("generated window must record its generator id");
  }

  std::size_t T() const noexcept { return T_; }
  std::size_t F() const noexcept { return F_; }
  std::size_t label() const noexcept { return label_; }
  const std::string& group_key() const noexcept { return group_key_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double at(std::size_t t, std::size_t f) const { return values_[t * F_ + f]; }

  bool operator==(const TimeWindow&) const = default;

 private:
  std::size_t T_, F_;
  std::vector<double> values_;
  std::size_t label_;
  std::string group_key_;
  Provenance provenance_;
};

class LabeledDataset {
 public:
  LabeledDataset(std::size_t T, std::size_t F, std::size_t C, std::vector<TimeWindow> windows = {})
      : T_(T), F_(F), C_(C), windows_(std::move(windows)) {
    if (T_ == 0 || F_ == 0 || C_ == 0) throw ValidationError("dataset T, F, C must be positive");
    for (const auto& w : windows_) check(w);
  }

  std::size_t T() const noexcept { return T_; }
  std::size_t F() const noexcept { return F_; }
  std::size_t C() const noexcept { return C_; }
  std::size_t size() const noexcept { return windows_.size(); }
  bool empty() const noexcept { return windows_.empty(); }
  const TimeWindow& operator[](std::size_t i) const { return windows_[i]; }
  const std::vector<TimeWindow>& windows() const noexcept { return windows_; }
  auto begin() const { return windows_.begin(); }
  auto end() const { return windows_.end(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(C_, 0);
    for (const auto& w : windows_) ++counts[w.label()];
    return counts;
  }

  std::vector<TimeWindow> windows_of_class(std::size_t c) const {
    std::vector<TimeWindow> out;
    for (const auto& w : windows_)
      if (w.label() == c) out.push_back(w);
    return out;
  }

  std::set<std::string> group_keys() const {
    std::set<std::string> keys;
    for (const auto& w : windows_) keys.insert(w.group_key());
    return keys;
  }

  std::size_t generated_count() const {
    return static_cast<std::size_t>(std::count_if(windows_.begin(), windows_.end(),
                                                  [](const TimeWindow& w) { return !w.provenance().is_real(); }));
  }

  LabeledDataset with_appended(const std::vector<TimeWindow>& extra) const {
    std::vector<TimeWindow> all = windows_;
    all.insert(all.end(), extra.begin(), extra.end());
    return LabeledDataset(T_, F_, C_, std::move(all));
  }

  LabeledDataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<TimeWindow> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(windows_.at(i));
    return LabeledDataset(T_, F_, C_, std::move(out));
  }

  bool operator==(const LabeledDataset&) const = default;

 private:
  void check(const TimeWindow& w) const {
    if (w.T() != T_ || w.F() != F_) throw ValidationError("window shape differs from dataset shape");
    if (w.label() >= C_)
      throw ValidationError("label " + std::to_string(w.label()) + " out of range for C=" + std::to_string(C_));
  }

  std::size_t T_, F_, C_;
  std::vector<TimeWindow> windows_;
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train > 0 && val > 0 && test > 0)) throw ValidationError("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  }
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

/// Whole-group split: no group key is shared between the three outputs.
///
/// Groups are sorted, shuffled with the seed, then assigned one at a time to
/// the split whose window fill fraction lies furthest below its target ratio
/// (ties go to the earlier split). Once the remaining groups only just cover
/// the still-empty splits, they are forced into those splits.
inline DatasetSplits split_by_group(const LabeledDataset& ds, const SplitSpec& spec) {
  spec.validate();
  if (ds.empty()) throw ValidationError("cannot split an empty dataset");

  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ds.size(); ++i) members[ds[i].group_key()].push_back(i);
  if (members.size() < 3)
    throw ValidationError("split_by_group needs at least 3 distinct group keys (found " +
                          std::to_string(members.size()) + "); use the group-free stratified split instead");

  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [key, idx] : members) groups.push_back(&idx);
  Rng rng = make_rng(spec.seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  const double ratios[3] = {spec.train, spec.val, spec.test};
  const double total = static_cast<double>(ds.size());
  std::size_t filled[3] = {0, 0, 0};
  std::vector<std::size_t> assigned[3];

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::size_t remaining = groups.size() - gi;
    std::vector<int> empty_splits;
    for (int s = 0; s < 3; ++s)
      if (filled[s] == 0) empty_splits.push_back(s);

    int target = -1;
    if (!empty_splits.empty() && remaining <= empty_splits.size()) {
      target = empty_splits.front();
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < 3; ++s) {
        double deficit = ratios[s] - static_cast<double>(filled[s]) / total;
        if (deficit > best + 1e-12) {
          best = deficit;
          target = s;
        }
      }
    }
    filled[target] += groups[gi]->size();
    assigned[target].insert(assigned[target].end(), groups[gi]->begin(), groups[gi]->end());
  }
  for (auto& a : assigned) std::sort(a.begin(), a.end());
  return {ds.subset(assigned[0]), ds.subset(assigned[1]), ds.subset(assigned[2])};
}

/// Group-free fallback: per-class shuffled split into (train, val).
inline std::pair<LabeledDataset, LabeledDataset> split_stratified(const LabeledDataset& ds, double val_fraction,
                                                                  std::uint64_t seed) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw ValidationError("val_fraction must lie in (0, 1)");
  Rng rng = make_rng(seed);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t c = 0; c < ds.C(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].label() == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    else n_val = 0;
    val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {ds.subset(train_idx), ds.subset(val_idx)};
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  auto d = parse_double(s);
  if (!d || !std::isfinite(*d) || std::floor(*d) != *d) return std::nullopt;
  return static_cast<long long>(*d);
}

inline std::string group_of(std::string_view id) {
  auto pos = id.find('#');
  return std::string(pos == std::string_view::npos ? id : id.substr(0, pos));
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Maps raw integer labels to [0, K) in ascending order.
inline std::map<long long, std::size_t> contiguous_labels(const std::set<long long>& raw) {
  std::map<long long, std::size_t> out;
  std::size_t next = 0;
  for (long long l : raw) out[l] = next++;
  return out;
}

}  // namespace detail

/// Parses the windows CSV. Two layouts are auto-detected from the header:
///   long:  group,label,t,f0,...,f{F-1}          (one row per time step)
///   flat:  group,label,v_0_0,...,v_{T-1}_{F-1}  (one row per window)
/// Either layout may carry provenance columns (provenance,generator,round,source)
/// directly after `label`. The group column may encode a window ordinal as
/// `key#idx`; the split group key is the part before '#'.
///
/// When num_classes is given, labels must already lie in [0, C). Otherwise the
/// distinct labels are remapped to contiguous indices in ascending order.
inline LabeledDataset parse_windows_csv(std::istream& in, std::size_t T, std::size_t F,
                                        std::optional<std::size_t> num_classes = std::nullopt) {
  using namespace detail;
  if (T == 0 || F == 0) throw ValidationError("T and F must be positive");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    for (auto f : split_fields(line, ',')) header.emplace_back(trim(f));
    break;
  }
  if (header.empty()) throw ValidationError("no records");
  if (header.size() < 3 || header[0] != "group" || header[1] != "label")
    throw ParseError(line_no, "header must start with group,label");

  std::size_t col = 2;
  bool has_provenance = header.size() > 2 && header[2] == "provenance";
  if (has_provenance) {
    if (header.size() < 6 || header[3] != "generator" || header[4] != "round" || header[5] != "source")
      throw ParseError(line_no, "provenance columns must be provenance,generator,round,source");
    col = 6;
  }
  bool long_layout = header.size() > col && header[col] == "t";
  std::size_t value_cols = long_layout ? F : T * F;
  std::size_t expected = col + (long_layout ? 1 : 0) + value_cols;
  if (header.size() != expected)
    throw ParseError(line_no, "header has " + std::to_string(header.size()) + " columns, expected " +
                                  std::to_string(expected) + " for T=" + std::to_string(T) + ", F=" + std::to_string(F));

  struct Raw {
    std::string id;
    long long label;
    Provenance prov;
    std::vector<double> values;
    std::size_t line;
  };
  std::vector<Raw> raws;
  std::size_t next_t = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, ',');
    if (fields.size() != expected)
      throw ParseError(line_no, "expected " + std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
    std::string id(trim(fields[0]));
    auto label = parse_integer(fields[1]);
    if (!label || *label < 0) throw ParseError(line_no, "label is not a non-negative integer");
    if (num_classes && static_cast<std::size_t>(*label) >= *num_classes)
      throw ParseError(line_no, "label " + std::to_string(*label) + " >= C=" + std::to_string(*num_classes));

    Provenance prov;
    if (has_provenance) {
      auto kind = trim(fields[2]);
      if (kind == "generated") {
        auto round = parse_integer(fields[4]);
        if (!round) throw ParseError(line_no, "round is not an integer");
        std::optional<std::size_t> src;
        if (!trim(fields[5]).empty()) {
          auto s = parse_integer(fields[5]);
          if (!s || *s < 0) throw ParseError(line_no, "source is not a non-negative integer");
          src = static_cast<std::size_t>(*s);
        }
        std::string gen(trim(fields[3]));
        if (gen.empty()) throw ParseError(line_no, "generated row without generator id");
        prov = Provenance::generated(gen, static_cast<int>(*round), src);
      } else if (kind != "real") {
        throw ParseError(line_no, "provenance must be real or generated");
      }
    }

    std::vector<double> vals;
    vals.reserve(value_cols);
    std::size_t vstart = col + (long_layout ? 1 : 0);
    for (std::size_t j = vstart; j < fields.size(); ++j) {
      auto v = parse_double(fields[j]);
      if (!v) throw ParseError(line_no, "non-numeric value in column " + std::to_string(j + 1));
      if (!std::isfinite(*v)) throw ParseError(line_no, "non-finite value in column " + std::to_string(j + 1));
      vals.push_back(*v);
    }

    if (!long_layout) {
      raws.push_back({id, *label, prov, std::move(vals), line_no});
      continue;
    }
    auto t = parse_integer(fields[col]);
    if (!t || *t < 0) throw ParseError(line_no, "t is not a non-negative integer");
    if (static_cast<std::size_t>(*t) != next_t)
      throw ParseError(line_no, "expected t=" + std::to_string(next_t) + ", got " + std::to_string(*t));
    if (next_t == 0) {
      raws.push_back({id, *label, prov, {}, line_no});
      raws.back().values.reserve(T * F);
    } else if (raws.back().id != id || raws.back().label != *label || !(raws.back().prov == prov)) {
      throw ParseError(line_no, "rows of one window must share group, label and provenance");
    }
    raws.back().values.insert(raws.back().values.end(), vals.begin(), vals.end());
    next_t = (next_t + 1) % T;
  }
  if (long_layout && next_t != 0) throw ParseError(line_no, "last window is truncated");
  if (raws.empty()) throw ValidationError("no records");

  std::map<long long, std::size_t> remap;
  std::size_t C = 0;
  if (num_classes) {
    C = *num_classes;
    for (const auto& r : raws) remap[r.label] = static_cast<std::size_t>(r.label);
  } else {
    std::set<long long> distinct;
    for (const auto& r : raws) distinct.insert(r.label);
    remap = contiguous_labels(distinct);
    C = remap.size();
  }

  std::vector<TimeWindow> windows;
  windows.reserve(raws.size());
  for (auto& r : raws) {
    try {
      windows.emplace_back(T, F, std::move(r.values), remap.at(r.label), group_of(r.id), std::move(r.prov));
    } catch (const ValidationError& e) {
      throw ParseError(r.line, e.what());
    }
  }
  return LabeledDataset(T, F, C, std::move(windows));
}

inline LabeledDataset ingest_windows_csv(const std::string& path, std::size_t T, std::size_t F,
                                         std::optional<std::size_t> num_classes = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_windows_csv(in, T, F, num_classes);
}

/// Writes the flat layout. Group ids are written as `key#ordinal` so windows
/// stay distinguishable; reading back recovers the same group keys.
inline void write_windows_csv(std::ostream& out, const LabeledDataset& ds, bool with_provenance = false) {
  out << "group,label";
  if (with_provenance) out << ",provenance,generator,round,source";
  for (std::size_t t = 0; t < ds.T(); ++t)
    for (std::size_t f = 0; f < ds.F(); ++f) out << ",v_" << t << '_' << f;
  out << '\n';
  std::map<std::string, std::size_t> ordinal;
  for (const auto& w : ds) {
    out << w.group_key() << '#' << ordinal[w.group_key()]++ << ',' << w.label();
    if (with_provenance) {
      const auto& p = w.provenance();
      if (p.is_real()) {
        out << ",real,,,";
      } else {
        out << ",generated," << p.generator_id << ',' << p.round << ',';
        if (p.source_index) out << *p.source_index;
      }
    }
    for (double v : w.values()) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

/// UCR archive TSV: label first, then the univariate series.
inline std::vector<std::pair<long long, std::vector<double>>> parse_ucr_rows(std::istream& in) {
  using namespace detail;
  std::vector<std::pair<long long, std::vector<double>>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t length = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    char sep = line.find('\t') != std::string::npos ? '\t' : ',';
    auto fields = split_fields(trim(line), sep);
    if (fields.size() < 2) throw ParseError(line_no, "row has no series values");
    auto label = parse_integer(fields[0]);
    if (!label) throw ParseError(line_no, "label is not an integer");
    std::vector<double> series;
    series.reserve(fields.size() - 1);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      auto v = parse_double(fields[j]);
      if (!v || !std::isfinite(*v)) throw ParseError(line_no, "bad value in column " + std::to_string(j + 1));
      series.push_back(*v);
    }
    if (length == 0) length = series.size();
    else if (series.size() != length)
      throw ParseError(line_no, "series length " + std::to_string(series.size()) + " differs from " +
                                    std::to_string(length));
    rows.emplace_back(*label, std::move(series));
  }
  if (rows.empty()) throw ValidationError("no records");
  return rows;
}

/// Loads a UCR train/test pair with F = 1. Labels are remapped jointly so both
/// splits share the same contiguous label space. Each series is its own group.
inline std::pair<LabeledDataset, LabeledDataset> ingest_ucr_tsv(const std::string& train_path,
                                                                const std::string& test_path) {
  auto load = [](const std::string& p) {
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open " + p);
    return parse_ucr_rows(in);
  };
  auto train_rows = load(train_path);
  auto test_rows = load(test_path);
  const std::size_t T = train_rows.front().second.size();
  if (test_rows.front().second.size() != T) throw ValidationError("train and test series lengths differ");

  std::set<long long> distinct;
  for (const auto& r : train_rows) distinct.insert(r.first);
  for (const auto& r : test_rows) distinct.insert(r.first);
  auto remap = detail::contiguous_labels(distinct);

  auto build = [&](std::vector<std::pair<long long, std::vector<double>>>& rows, const std::string& tag) {
    std::vector<TimeWindow> ws;
    ws.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      ws.emplace_back(T, 1, std::move(rows[i].second), remap.at(rows[i].first), tag + std::to_string(i));
    return LabeledDataset(T, 1, remap.size(), std::move(ws));
  };
  return {build(train_rows, "train"), build(test_rows, "test")};
}

}  // namespace igada
