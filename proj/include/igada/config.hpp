#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/gcm.hpp"
#include "igada/generators.hpp"
#include "igada/loop.hpp"
#include "igada/models.hpp"

namespace igada {

/// Run configuration read from a JSON file. Relative paths resolve against
/// the directory holding the file. Unknown keys are rejected.
struct RunConfig {
  struct Dataset {
    std::string format = "ucr";  // "ucr" (train/test TSV) or "csv" (one windows file)
    std::string train_path, test_path, path;
    std::size_t T = 0, F = 1;
    std::optional<std::size_t> C;
  } dataset;
  SplitSpec split;            // csv: group split into train/val/test
  double val_fraction = 0.2;  // ucr: stratified validation share of the train file
  std::vector<nlohmann::json> generators;
  nlohmann::json classifier = {{"type", "logistic"}};
  StatsConfig stats;
  LoopConfig loop;
  bool b_max_set = false;  // unset: half the training split
  std::string out_dir = "out";
  int repeats = 3;
  std::size_t jobs = 1;
  bool canonical = true;  // leave wall-clock times out of the artifacts

  void validate() const {
    stats.validate();
    if (dataset.format == "ucr") {
      for (const auto& p : {dataset.train_path, dataset.test_path})
        if (p.empty() || !std::filesystem::exists(p)) throw ValidationError("dataset file not found: " + p);
      if (!(val_fraction > 0 && val_fraction < 1)) throw ValidationError("val_fraction must lie in (0, 1)");
    } else if (dataset.format == "csv") {
      if (dataset.path.empty() || !std::filesystem::exists(dataset.path))
        throw ValidationError("dataset file not found: " + dataset.path);
      if (dataset.T == 0 || dataset.F == 0) throw ValidationError("csv datasets need positive T and F");
      split.validate();
    } else {
      throw ValidationError("unknown dataset format: " + dataset.format);
    }
    if (generators.empty()) throw ValidationError("no generators configured");
    if (repeats < 1) throw ValidationError("repeats must be >= 1");
    if (jobs < 1) throw ValidationError("jobs must be >= 1");
    LoopConfig probe = loop;
    if (!b_max_set) probe.B_max = std::max(probe.B_min, probe.B_max);
    probe.validate();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path q(p);
  return q.is_absolute() ? p : (base / q).lexically_normal().string();
}

}  // namespace detail

inline std::vector<nlohmann::json> default_generator_roster() {
  return {{{"type", "gmx"}}, {{"type", "rim"}}, {{"type", "dtw"}}, {{"type", "tsw"}}};
}

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  using detail::check_keys;
  using detail::read_opt;
  check_keys(j, {"dataset", "split", "val_fraction", "generators", "classifier", "stats", "loop", "out", "repeats", "jobs",
                 "canonical"},
             "config");
  RunConfig cfg;
  if (!j.contains("dataset")) throw ValidationError("config lacks a dataset section");
  const auto& d = j.at("dataset");
  check_keys(d, {"format", "train", "test", "path", "T", "F", "C"}, "dataset");
  read_opt(d, "format", cfg.dataset.format);
  read_opt(d, "train", cfg.dataset.train_path);
  read_opt(d, "test", cfg.dataset.test_path);
  read_opt(d, "path", cfg.dataset.path);
  read_opt(d, "T", cfg.dataset.T);
  read_opt(d, "F", cfg.dataset.F);
  if (d.contains("C")) cfg.dataset.C = d.at("C").get<std::size_t>();
  cfg.dataset.train_path = detail::resolve_path(base_dir, cfg.dataset.train_path);
  cfg.dataset.test_path = detail::resolve_path(base_dir, cfg.dataset.test_path);
  cfg.dataset.path = detail::resolve_path(base_dir, cfg.dataset.path);

  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"train", "val", "test", "seed"}, "split");
    read_opt(s, "train", cfg.split.train);
    read_opt(s, "val", cfg.split.val);
    read_opt(s, "test", cfg.split.test);
    read_opt(s, "seed", cfg.split.seed);
  }
  read_opt(j, "val_fraction", cfg.val_fraction);

  if (j.contains("generators")) {
    for (const auto& g : j.at("generators")) cfg.generators.push_back(g);
  } else {
    cfg.generators = default_generator_roster();
  }
  read_opt(j, "classifier", cfg.classifier);

  if (j.contains("stats")) {
    const auto& s = j.at("stats");
    check_keys(s, {"k", "n_perm", "bins", "variance_threshold", "d_max", "probe_count", "eps", "entropy_floor"}, "stats");
    read_opt(s, "k", cfg.stats.k);
    read_opt(s, "n_perm", cfg.stats.n_perm);
    read_opt(s, "bins", cfg.stats.bins);
    read_opt(s, "variance_threshold", cfg.stats.variance_threshold);
    read_opt(s, "d_max", cfg.stats.d_max);
    read_opt(s, "probe_count", cfg.stats.probe_count);
    read_opt(s, "eps", cfg.stats.eps);
    read_opt(s, "entropy_floor", cfg.stats.entropy_floor);
  }
  if (j.contains("loop")) {
    const auto& l = j.at("loop");
    check_keys(l, {"eta", "B_min", "B_max", "kappa", "rho_r", "s", "r_max", "stop_fraction", "eps", "mu0", "seed", "max_rounds"},
               "loop");
    if (l.contains("eta")) {
      auto eta = l.at("eta").get<std::vector<double>>();
      if (eta.size() != 5) throw ValidationError("loop.eta needs exactly 5 weights");
      std::copy(eta.begin(), eta.end(), cfg.loop.eta.begin());
    }
    read_opt(l, "B_min", cfg.loop.B_min);
    if (l.contains("B_max")) {
      read_opt(l, "B_max", cfg.loop.B_max);
      cfg.b_max_set = true;
    }
    read_opt(l, "kappa", cfg.loop.kappa);
    read_opt(l, "rho_r", cfg.loop.rho_r);
    read_opt(l, "s", cfg.loop.s);
    read_opt(l, "r_max", cfg.loop.r_max);
    read_opt(l, "stop_fraction", cfg.loop.stop_fraction);
    read_opt(l, "eps", cfg.loop.eps);
    read_opt(l, "mu0", cfg.loop.mu0);
    read_opt(l, "seed", cfg.loop.seed);
    read_opt(l, "max_rounds", cfg.loop.max_rounds);
  }
  read_opt(j, "out", cfg.out_dir);
  read_opt(j, "repeats", cfg.repeats);
  read_opt(j, "jobs", cfg.jobs);
  read_opt(j, "canonical", cfg.canonical);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return parse_run_config(j, std::filesystem::path(path).parent_path());
}

inline GeneratorPtr make_generator(const nlohmann::json& g, const StatsConfig& stats) {
  if (!g.contains("type")) throw ValidationError("generator entry lacks a type");
  const auto type = g.at("type").get<std::string>();
  auto id = g.value("id", type);
  if (type == "rim") {
    detail::check_keys(g, {"type", "id", "depth"}, "generator " + id);
    return std::make_shared<RimGenerator>(g.value("depth", std::size_t{2}), id);
  }
  if (type == "tsw") {
    detail::check_keys(g, {"type", "id", "segments", "ratio"}, "generator " + id);
    return std::make_shared<TswGenerator>(g.value("segments", std::size_t{4}), g.value("ratio", 0.8), id);
  }
  if (type == "dtw") {
    detail::check_keys(g, {"type", "id", "blend"}, "generator " + id);
    return std::make_shared<DtwWarpGenerator>(g.value("blend", 0.5), id);
  }
  if (type == "gmx") {
    detail::check_keys(g, {"type", "id", "components"}, "generator " + id);
    return std::make_shared<GmxGenerator>(g.value("components", std::size_t{3}), id, stats.variance_threshold,
                                          stats.d_max);
  }
  if (type == "copy") {
    detail::check_keys(g, {"type", "id", "noise"}, "generator " + id);
    return std::make_shared<CopyGenerator>(id, g.value("noise", 0.0));
  }
  if (type == "subprocess") {
    detail::check_keys(g, {"type", "id", "command", "pairing", "timeout_s"}, "generator " + id);
    auto mode = g.value("pairing", std::string("independent"));
    if (mode != "aligned" && mode != "independent") throw ValidationError("generator " + id + ": unknown pairing " + mode);
    return std::make_shared<SubprocessGenerator>(id, g.at("command").get<std::string>(),
                                                 mode == "aligned" ? PairingMode::aligned : PairingMode::independent,
                                                 std::chrono::seconds(g.value("timeout_s", 300)));
  }
  throw ValidationError("unknown generator '" + type + "'");
}

inline std::vector<GeneratorPtr> make_generators(const RunConfig& cfg) {
  std::vector<GeneratorPtr> out;
  std::set<std::string> seen;
  for (const auto& g : cfg.generators) {
    out.push_back(make_generator(g, cfg.stats));
    if (!seen.insert(out.back()->id()).second) throw ValidationError("duplicate generator id " + out.back()->id());
  }
  return out;
}

inline ClassifierPtr make_classifier(const nlohmann::json& c) {
  if (!c.contains("type")) throw ValidationError("classifier entry lacks a type");
  const auto type = c.at("type").get<std::string>();
  if (type == "logistic") {
    detail::check_keys(c, {"type", "l2", "epochs", "lr"}, "classifier");
    return std::make_shared<LogisticClassifier>(c.value("l2", 1.0), c.value("epochs", std::size_t{500}), c.value("lr", 0.1));
  }
  if (type == "mlp") {
    detail::check_keys(c, {"type", "hidden", "epochs", "lr"}, "classifier");
    return std::make_shared<MlpClassifier>(c.value("hidden", std::vector<std::size_t>{64}),
                                           c.value("epochs", std::size_t{300}), c.value("lr", 0.05));
  }
  if (type == "subprocess") {
    detail::check_keys(c, {"type", "id", "command", "timeout_s"}, "classifier");
    return std::make_shared<SubprocessClassifier>(c.value("id", std::string("subprocess")),
                                                  c.at("command").get<std::string>(),
                                                  std::chrono::seconds(c.value("timeout_s", 300)));
  }
  throw ValidationError("unknown classifier '" + type + "'");
}

/// Train/val/test for a run. UCR: the train file is split into train and
/// val per class, the test file is the test split. CSV: whole-group split.
inline DatasetSplits load_splits(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.format == "ucr") {
    auto [train, test] = ingest_ucr_tsv(cfg.dataset.train_path, cfg.dataset.test_path);
    auto [tr, val] = split_stratified(train, cfg.val_fraction, derive_seed(seed, hash_string("split")));
    return {std::move(tr), std::move(val), std::move(test)};
  }
  auto ds = ingest_windows_csv(cfg.dataset.path, cfg.dataset.T, cfg.dataset.F, cfg.dataset.C);
  SplitSpec spec = cfg.split;
  spec.seed = derive_seed(seed, spec.seed);
  return split_by_group(ds, spec);
}

/// LoopConfig with the run seed applied and B_max defaulted to half the
/// training split when the config leaves it unset.
inline LoopConfig effective_loop_config(const RunConfig& cfg, std::size_t train_size, std::uint64_t seed) {
  LoopConfig l = cfg.loop;
  l.seed = seed;
  if (!cfg.b_max_set) l.B_max = std::max<long long>(l.B_min, static_cast<long long>(train_size / 2));
  l.validate();
  return l;
}

}  // namespace igada
