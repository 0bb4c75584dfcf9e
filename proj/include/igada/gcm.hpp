#pragma once

#include <algorithm>
#include <future>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/embed.hpp"
#include "igada/generators.hpp"
#include "igada/stats.hpp"

namespace igada {

struct PairedSamples {
  PointSet x;  // real side
  PointSet y;  // generated side
};

/// Joins real and generated embeddings into a paired sample.
/// Aligned: (real[source[j]], gen[j]) for every generated j.
/// Independent: both lists shuffled with the seed, truncated to the shorter, zipped.
inline PairedSamples pair_samples(const PointSet& real_z, const PointSet& gen_z, PairingMode mode,
                                  const std::vector<std::optional<std::size_t>>& sources, std::uint64_t seed) {
  if (real_z.empty() || gen_z.empty()) throw ValidationError("pair_samples: empty input");
  PairedSamples out{PointSet(real_z.dim()), PointSet(gen_z.dim())};
  if (mode == PairingMode::aligned) {
    if (sources.size() != gen_z.size()) throw ValidationError("pair_samples: aligned pairing needs a source per sample");
    for (std::size_t j = 0; j < gen_z.size(); ++j) {
      if (!sources[j]) throw ValidationError("pair_samples: generated sample " + std::to_string(j) + " has no source index");
      if (*sources[j] >= real_z.size()) throw ValidationError("pair_samples: source index out of range");
      out.x.push_back(real_z.row(*sources[j]));
      out.y.push_back(gen_z.row(j));
    }
    return out;
  }
  Rng rng = make_rng(seed);
  auto ix = detail::shuffled_indices(real_z.size(), rng);
  auto iy = detail::shuffled_indices(gen_z.size(), rng);
  const std::size_t m = std::min(ix.size(), iy.size());
  for (std::size_t j = 0; j < m; ++j) {
    out.x.push_back(real_z.row(ix[j]));
    out.y.push_back(gen_z.row(iy[j]));
  }
  return out;
}

struct StatsConfig {
  std::size_t k = 3;
  std::size_t n_perm = 10;
  std::size_t bins = 16;
  double variance_threshold = 0.95;
  std::size_t d_max = 10;
  std::size_t probe_count = 200;
  double eps = 1e-8;
  double entropy_floor = 1.0;

  void validate() const {
    if (k < 1) throw ValidationError("k must be >= 1");
    if (n_perm < 1) throw ValidationError("n_perm must be >= 1");
    if (bins < 1) throw ValidationError("bins must be >= 1");
    if (!(variance_threshold > 0 && variance_threshold <= 1)) throw ValidationError("variance_threshold must lie in (0, 1]");
    if (d_max < 1) throw ValidationError("d_max must be >= 1");
    if (probe_count < k + 2) throw ValidationError("probe_count must be >= k + 2");
    if (!(eps > 0)) throw ValidationError("eps must be positive");
  }
};

struct CellScore {
  double S = 0;
  double C = 1;
  double raw_mi = 0;
  double baseline_mi = 0;
  double entropy = 0;
  bool entropy_floored = false;
  std::string error;  // nonempty when the generator failed on this cell
};

/// S = clamp(I_corr / (H' + eps), 0, 1), C = 1 - S, where H' is the real-side
/// entropy, replaced by `entropy_floor` when the estimate is not positive.
inline CellScore score_from_estimates(const MiEstimate& mi, double entropy, double eps, double entropy_floor) {
  CellScore cell;
  cell.raw_mi = mi.raw;
  cell.baseline_mi = mi.baseline;
  cell.entropy = entropy;
  double denom = entropy;
  if (entropy <= 0) {
    cell.entropy_floored = true;
    denom = std::max(entropy, entropy_floor);
  }
  cell.S = std::clamp(mi.corrected / (denom + eps), 0.0, 1.0);
  cell.C = 1.0 - cell.S;
  return cell;
}

inline CellScore similarity_score(const PointSet& real_z, const PointSet& gen_z, PairingMode mode,
                                  const std::vector<std::optional<std::size_t>>& sources, const StatsConfig& cfg,
                                  std::uint64_t seed) {
  if (real_z.size() < cfg.k + 2 || gen_z.size() < cfg.k + 2)
    throw ValidationError("similarity_score: need at least k + 2 real and generated samples");
  MiEstimate mi;
  if (mode == PairingMode::aligned) {
    auto pairs = pair_samples(real_z, gen_z, mode, sources, seed);
    mi = permutation_corrected_mi(pairs.x, pairs.y, PairingMode::aligned, cfg.k, cfg.n_perm, derive_seed(seed, 1));
  } else {
    mi = permutation_corrected_mi(real_z, gen_z, PairingMode::independent, cfg.k, cfg.n_perm, derive_seed(seed, 1));
  }
  double h = kl_entropy(real_z, cfg.k, derive_seed(seed, 2));
  auto cell = score_from_estimates(mi, h, cfg.eps, cfg.entropy_floor);
  if (cell.entropy_floored)
    log_warning("entropy estimate " + std::to_string(h) + " <= 0; using floor " + std::to_string(cfg.entropy_floor));
  return cell;
}

/// G x C x 2 array of (S, C) scores.
class CapabilityTensor {
 public:
  CapabilityTensor() = default;
  CapabilityTensor(std::vector<std::string> generator_ids, std::size_t num_classes)
      : ids_(std::move(generator_ids)), classes_(num_classes), cells_(ids_.size() * num_classes),
        filled_(ids_.size() * num_classes, false) {}

  std::size_t generators() const noexcept { return ids_.size(); }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<std::string>& generator_ids() const noexcept { return ids_; }

  void set(std::size_t g, std::size_t c, CellScore cell) {
    cells_.at(g * classes_ + c) = std::move(cell);
    filled_[g * classes_ + c] = true;
  }
  const CellScore& cell(std::size_t g, std::size_t c) const { return cells_.at(g * classes_ + c); }
  double S(std::size_t g, std::size_t c) const { return cell(g, c).S; }
  double C(std::size_t g, std::size_t c) const { return cell(g, c).C; }
  bool complete() const { return std::all_of(filled_.begin(), filled_.end(), [](bool b) { return b; }); }

  nlohmann::json to_json() const {
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t g = 0; g < generators(); ++g)
      for (std::size_t c = 0; c < classes_; ++c) {
        const auto& x = cell(g, c);
        nlohmann::json j = {{"g", g},           {"c", c},
                            {"S", x.S},         {"C", x.C},
                            {"raw_mi", x.raw_mi}, {"baseline_mi", x.baseline_mi},
                            {"entropy", x.entropy}};
        if (x.entropy_floored) j["entropy_floored"] = true;
        if (!x.error.empty()) j["error"] = x.error;
        cells.push_back(std::move(j));
      }
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < classes_; ++c) classes.push_back(c);
    return {{"generator_ids", ids_}, {"classes", classes}, {"cells", cells}};
  }

  static CapabilityTensor from_json(const nlohmann::json& j) {
    CapabilityTensor t(j.at("generator_ids").get<std::vector<std::string>>(), j.at("classes").size());
    for (const auto& c : j.at("cells")) {
      CellScore cell;
      cell.S = c.at("S").get<double>();
      cell.C = c.at("C").get<double>();
      cell.raw_mi = c.value("raw_mi", 0.0);
      cell.baseline_mi = c.value("baseline_mi", 0.0);
      cell.entropy = c.value("entropy", 0.0);
      cell.entropy_floored = c.value("entropy_floored", false);
      cell.error = c.value("error", std::string{});
      t.set(c.at("g").get<std::size_t>(), c.at("c").get<std::size_t>(), cell);
    }
    if (!t.complete()) throw ValidationError("capability tensor JSON does not cover every cell");
    return t;
  }

  /// C and S blocks, one row per class, one column per generator.
  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << std::left << std::setw(8) << "score" << std::setw(7) << "class";
    for (const auto& id : ids_) os << std::right << std::setw(12) << id;
    os << '\n';
    for (const char* which : {"C_g,c", "S_g,c"}) {
      for (std::size_t c = 0; c < classes_; ++c) {
        os << std::left << std::setw(8) << (c == 0 ? which : "") << std::setw(7) << c;
        for (std::size_t g = 0; g < generators(); ++g)
          os << std::right << std::setw(12) << (which[0] == 'C' ? C(g, c) : S(g, c));
        os << '\n';
      }
    }
    return os.str();
  }

 private:
  std::vector<std::string> ids_;
  std::size_t classes_ = 0;
  std::vector<CellScore> cells_;
  std::vector<bool> filled_;
};

/// Builds the capability tensor from the training split. Every (g, c) cell
/// generates `probe_count` samples, embeds real and generated windows with
/// the class embedding fitted on the real windows, pairs them according to
/// the generator's mode and scores the pairing. A generator that throws on a
/// class leaves that cell at (S = 0, C = 1). Cells run on up to `jobs`
/// threads; the result does not depend on `jobs`.
inline CapabilityTensor build_capability_tensor(const LabeledDataset& train, const std::vector<GeneratorPtr>& generators,
                                                const StatsConfig& cfg, std::uint64_t seed, std::size_t jobs = 1) {
  cfg.validate();
  if (generators.empty()) throw ValidationError("no generators configured");
  const std::size_t min_class = std::max<std::size_t>(cfg.k + 2, 4);
  for (const auto& w : train)
    if (!w.provenance().is_real()) throw ValidationError("capability modeling expects real training windows only");
  auto counts = train.class_counts();
  for (std::size_t c = 0; c < train.C(); ++c)
    if (counts[c] < min_class)
      throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                            " training windows; capability modeling needs >= " + std::to_string(min_class));

  std::vector<std::string> ids;
  for (const auto& g : generators) ids.push_back(g->id());
  CapabilityTensor tensor(ids, train.C());

  struct ClassContext {
    std::vector<TimeWindow> real;
    ClassEmbedding emb;
    PointSet real_z;
  };
  std::vector<ClassContext> ctx;
  for (std::size_t c = 0; c < train.C(); ++c) {
    ClassContext cc;
    cc.real = train.windows_of_class(c);
    cc.emb = fit_class_embedding(cc.real, cfg.variance_threshold, cfg.d_max);
    cc.real_z = cc.emb.transform_all(cc.real);
    ctx.push_back(std::move(cc));
  }

  auto run_cell = [&](std::size_t g, std::size_t c) -> CellScore {
    const auto& gen = *generators[g];
    const std::uint64_t cell_seed = derive_seed(seed, hash_string(gen.id()), c);
    try {
      GenerationRequest req{c, cfg.probe_count, -1, derive_seed(cell_seed, 0)};
      auto produced = gen.generate(req, ctx[c].real);
      if (produced.size() != cfg.probe_count)
        throw RuntimeFailure("generator returned " + std::to_string(produced.size()) + " windows");
      PointSet gen_z = ctx[c].emb.transform_all(produced);
      std::vector<std::optional<std::size_t>> sources;
      for (const auto& w : produced) sources.push_back(w.provenance().source_index);
      return similarity_score(ctx[c].real_z, gen_z, gen.pairing_mode(), sources, cfg, derive_seed(cell_seed, 1));
    } catch (const std::exception& e) {
      log_warning("generator " + gen.id() + " failed on class " + std::to_string(c) + ": " + e.what());
      CellScore cell;
      cell.error = e.what();
      return cell;
    }
  };

  const std::size_t total = generators.size() * train.C();
  std::vector<CellScore> results(total);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < total; ++i) results[i] = run_cell(i / train.C(), i % train.C());
  } else {
    for (std::size_t start = 0; start < total; start += jobs) {
      std::vector<std::future<CellScore>> batch;
      for (std::size_t i = start; i < std::min(total, start + jobs); ++i)
        batch.push_back(std::async(std::launch::async, run_cell, i / train.C(), i % train.C()));
      for (std::size_t i = 0; i < batch.size(); ++i) results[start + i] = batch[i].get();
    }
  }
  for (std::size_t i = 0; i < total; ++i) tensor.set(i / train.C(), i % train.C(), std::move(results[i]));
  return tensor;
}

}  // namespace igada
