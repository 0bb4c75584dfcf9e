#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/embed.hpp"
#include "igada/stats.hpp"
#include "igada/subprocess.hpp"

namespace igada {

struct GenerationRequest {
  std::size_t class_id = 0;
  std::size_t count = 0;
  int round = 0;
  std::uint64_t seed = 0;
};

/// Uniform generation contract. Implementations return exactly `count`
/// windows of the requested class; aligned generators record the index of
/// the real window each output was derived from.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual const std::string& id() const = 0;
  virtual PairingMode pairing_mode() const = 0;
  virtual std::vector<TimeWindow> generate(const GenerationRequest& req,
                                           const std::vector<TimeWindow>& real_class_windows) const = 0;
};

using GeneratorPtr = std::shared_ptr<const Generator>;

namespace detail {

inline TimeWindow make_generated(const std::vector<TimeWindow>& real, std::vector<double> values,
                                 const GenerationRequest& req, const std::string& id,
                                 std::optional<std::size_t> source) {
  const auto& ref = real.front();
  return TimeWindow(ref.T(), ref.F(), std::move(values), req.class_id,
                    "gen-" + id + "-r" + std::to_string(req.round),
                    Provenance::generated(id, req.round, source));
}

inline void require_real(const std::vector<TimeWindow>& real, const GenerationRequest& req, const std::string& id) {
  if (real.empty() && req.count > 0)
    throw ValidationError(id + ": class " + std::to_string(req.class_id) + " has no real windows");
  for (const auto& w : real)
    if (w.label() != req.class_id) throw ValidationError(id + ": real windows belong to another class");
}

/// Copies of a single window with Gaussian noise at 1% of each feature's
/// standard deviation over time (1% of max(|mean|, 1) for flat features).
inline std::vector<TimeWindow> jittered_copies(const std::vector<TimeWindow>& real, const GenerationRequest& req,
                                               const std::string& id) {
  log_warning(id + ": class " + std::to_string(req.class_id) + " has a single real window; emitting jittered copies");
  const auto& w = real.front();
  std::vector<double> sigma(w.F());
  for (std::size_t f = 0; f < w.F(); ++f) {
    double m = 0, s = 0;
    for (std::size_t t = 0; t < w.T(); ++t) m += w.at(t, f);
    m /= static_cast<double>(w.T());
    for (std::size_t t = 0; t < w.T(); ++t) s += (w.at(t, f) - m) * (w.at(t, f) - m);
    s = std::sqrt(s / static_cast<double>(w.T()));
    sigma[f] = s > 0 ? 0.01 * s : 0.01 * std::max(std::abs(m), 1.0);
  }
  Rng rng = make_rng(req.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<TimeWindow> out;
  out.reserve(req.count);
  for (std::size_t i = 0; i < req.count; ++i) {
    std::vector<double> v = w.values();
    for (std::size_t t = 0; t < w.T(); ++t)
      for (std::size_t f = 0; f < w.F(); ++f) v[t * w.F() + f] += sigma[f] * noise(rng);
    out.push_back(make_generated(real, std::move(v), req, id, 0));
  }
  return out;
}

inline std::size_t other_index(Rng& rng, std::size_t n, std::size_t avoid) {
  std::size_t j = uniform_index(rng, n - 1);
  return j >= avoid ? j + 1 : j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Recursive interpolation

/// Each output starts from the midpoint of two distinct windows a, b and is
/// then pulled halfway toward a freshly drawn window `depth - 1` more times.
/// source_index = a.
inline std::vector<TimeWindow> rim_generate(const GenerationRequest& req, const std::vector<TimeWindow>& real,
                                            std::size_t depth = 2, const std::string& id = "rim") {
  if (depth < 1) throw ValidationError("rim: depth must be >= 1");
  detail::require_real(real, req, id);
  if (req.count == 0) return {};
  if (real.size() < 2) return detail::jittered_copies(real, req, id);

  Rng rng = make_rng(req.seed);
  std::vector<TimeWindow> out;
  out.reserve(req.count);
  for (std::size_t i = 0; i < req.count; ++i) {
    std::size_t a = uniform_index(rng, real.size());
    std::size_t b = detail::other_index(rng, real.size(), a);
    std::vector<double> v(real[a].values().size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = 0.5 * (real[a].values()[j] + real[b].values()[j]);
    for (std::size_t level = 1; level < depth; ++level) {
      const auto& fresh = real[uniform_index(rng, real.size())].values();
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = 0.5 * (v[j] + fresh[j]);
    }
    out.push_back(detail::make_generated(real, std::move(v), req, id, a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time-slice warping

/// Warps one window: the time axis [0, T-1] is cut into n_segments equal
/// slices whose durations are alternately scaled by ratio and 1/ratio, and
/// the result is resampled back onto T equally spaced points with linear
/// interpolation. Endpoints are preserved.
inline std::vector<double> time_slice_warp(const std::vector<double>& values, std::size_t T, std::size_t F,
                                           std::size_t n_segments, double ratio, bool compress_first = true) {
  if (n_segments < 2 || n_segments % 2 != 0) throw ValidationError("tsw: n_segments must be even and >= 2");
  if (!(ratio > 0 && ratio < 1)) throw ValidationError("tsw: warp_ratio must lie in (0, 1)");
  if (T < 2 * n_segments) throw ValidationError("tsw: window too short for " + std::to_string(n_segments) + " segments");

  const double span = static_cast<double>(T - 1);
  const double seg = span / static_cast<double>(n_segments);
  std::vector<double> warped_len(n_segments);
  for (std::size_t s = 0; s < n_segments; ++s) {
    bool compress = (s % 2 == 0) == compress_first;
    warped_len[s] = seg * (compress ? ratio : 1.0 / ratio);
  }
  double warped_total = 0;
  for (double l : warped_len) warped_total += l;

  std::vector<double> out(T * F);
  for (std::size_t j = 0; j < T; ++j) {
    double tau;
    if (j == T - 1) tau = warped_total;
    else tau = static_cast<double>(j) * warped_total / span;
    // locate the slice in warped time and map back to original time
    double start = 0;
    double orig = span;
    for (std::size_t s = 0; s < n_segments; ++s) {
      if (tau <= start + warped_len[s] || s == n_segments - 1) {
        double frac = std::clamp((tau - start) / warped_len[s], 0.0, 1.0);
        orig = (static_cast<double>(s) + frac) * seg;
        break;
      }
      start += warped_len[s];
    }
    if (j == 0) orig = 0;
    if (j == T - 1) orig = span;
    auto lo = static_cast<std::size_t>(std::floor(orig));
    lo = std::min(lo, T - 1);
    std::size_t hi = std::min(lo + 1, T - 1);
    double w = orig - static_cast<double>(lo);
    for (std::size_t f = 0; f < F; ++f)
      out[j * F + f] = (1.0 - w) * values[lo * F + f] + w * values[hi * F + f];
  }
  return out;
}

inline std::vector<TimeWindow> tsw_generate(const GenerationRequest& req, const std::vector<TimeWindow>& real,
                                            std::size_t n_segments = 4, double warp_ratio = 0.8,
                                            const std::string& id = "tsw") {
  detail::require_real(real, req, id);
  if (req.count == 0) return {};
  Rng rng = make_rng(req.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<TimeWindow> out;
  out.reserve(req.count);
  for (std::size_t i = 0; i < req.count; ++i) {
    std::size_t src = uniform_index(rng, real.size());
    bool compress_first = coin(rng);
    auto v = time_slice_warp(real[src].values(), real[src].T(), real[src].F(), n_segments, warp_ratio, compress_first);
    out.push_back(detail::make_generated(real, std::move(v), req, id, src));
  }
  return out;
}

// ---------------------------------------------------------------------------
// DTW-guided warping

struct DtwAlignment {
  double cost = 0;
  std::vector<std::pair<std::size_t, std::size_t>> path;  // (index in a, index in b), ascending
};

/// Classic DTW between two multivariate series (row-major, F features per
/// step) with Euclidean local cost. Backtracking prefers the diagonal, then
/// a step in `a`, then a step in `b`.
inline DtwAlignment dtw_align(std::span<const double> a, std::size_t Ta, std::span<const double> b, std::size_t Tb,
                              std::size_t F) {
  if (Ta == 0 || Tb == 0 || a.size() != Ta * F || b.size() != Tb * F) throw ValidationError("dtw: bad series shape");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> D(Ta * Tb, inf);
  auto local = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t f = 0; f < F; ++f) {
      double d = a[i * F + f] - b[j * F + f];
      s += d * d;
    }
    return std::sqrt(s);
  };
  auto at = [&](std::size_t i, std::size_t j) -> double& { return D[i * Tb + j]; };
  for (std::size_t i = 0; i < Ta; ++i) {
    for (std::size_t j = 0; j < Tb; ++j) {
      double best;
      if (i == 0 && j == 0) best = 0;
      else {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + local(i, j);
    }
  }
  DtwAlignment res;
  res.cost = at(Ta - 1, Tb - 1);
  std::size_t i = Ta - 1, j = Tb - 1;
  res.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) --j;
    else if (j == 0) --i;
    else {
      double diag = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    res.path.emplace_back(i, j);
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

/// Re-times `source` onto the reference's time axis along the DTW path
/// (averaging source steps matched to the same reference step) and blends:
/// out = (1 - blend) * source + blend * warped.
inline std::vector<double> dtw_warp_toward(const TimeWindow& source, const TimeWindow& reference, double blend) {
  if (!(blend >= 0 && blend <= 1)) throw ValidationError("dtw: blend must lie in [0, 1]");
  const std::size_t T = source.T(), F = source.F();
  auto align = dtw_align(source.values(), T, reference.values(), reference.T(), F);
  std::vector<double> warped(reference.T() * F, 0.0);
  std::vector<std::size_t> hits(reference.T(), 0);
  for (auto [i, j] : align.path) {
    ++hits[j];
    for (std::size_t f = 0; f < F; ++f) warped[j * F + f] += source.at(i, f);
  }
  std::vector<double> out(T * F);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      double w = warped[t * F + f] / static_cast<double>(hits[t]);
      out[t * F + f] = (1.0 - blend) * source.at(t, f) + blend * w;
    }
  return out;
}

inline std::vector<TimeWindow> dtw_warp_generate(const GenerationRequest& req, const std::vector<TimeWindow>& real,
                                                 double blend = 0.5, const std::string& id = "dtw") {
  if (!(blend > 0 && blend <= 1)) throw ValidationError("dtw: blend must lie in (0, 1]");
  detail::require_real(real, req, id);
  if (req.count == 0) return {};
  if (real.size() < 2) return detail::jittered_copies(real, req, id);
  Rng rng = make_rng(req.seed);
  std::vector<TimeWindow> out;
  out.reserve(req.count);
  for (std::size_t i = 0; i < req.count; ++i) {
    std::size_t src = uniform_index(rng, real.size());
    std::size_t ref = detail::other_index(rng, real.size(), src);
    out.push_back(detail::make_generated(real, dtw_warp_toward(real[src], real[ref], blend), req, id, src));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian-mixture resampler in the class embedding space

struct DiagonalGmm {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;

  std::size_t components() const noexcept { return weights.size(); }
};

inline DiagonalGmm fit_single_gaussian(const PointSet& z, double reg = 1e-6) {
  const std::size_t n = z.size(), d = z.dim();
  DiagonalGmm g;
  g.weights = {1.0};
  g.means.assign(1, std::vector<double>(d, 0.0));
  g.variances.assign(1, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.means[0][j] += z(i, j);
  for (double& m : g.means[0]) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double e = z(i, j) - g.means[0][j];
      g.variances[0][j] += e * e;
    }
  for (double& v : g.variances[0]) v = v / static_cast<double>(std::max<std::size_t>(n - 1, 1)) + reg;
  return g;
}

/// EM for a diagonal-covariance mixture. Returns nullopt when a component
/// collapses (fewer than one effective point) or the likelihood goes non-finite.
inline std::optional<DiagonalGmm> fit_diagonal_gmm(const PointSet& z, std::size_t K, std::uint64_t seed,
                                                   std::size_t max_iter = 100, double tol = 1e-6,
                                                   double reg = 1e-6) {
  const std::size_t n = z.size(), d = z.dim();
  if (K == 0 || n < K) return std::nullopt;
  if (K == 1) return fit_single_gaussian(z, reg);

  DiagonalGmm g = fit_single_gaussian(z, reg);
  const std::vector<double> global_var = g.variances[0];
  Rng rng = make_rng(seed);
  auto picks = detail::shuffled_indices(n, rng);
  g.weights.assign(K, 1.0 / static_cast<double>(K));
  g.means.assign(K, std::vector<double>(d));
  g.variances.assign(K, global_var);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < d; ++j) g.means[k][j] = z(picks[k], j);

  std::vector<double> resp(n * K);
  double prev_ll = -std::numeric_limits<double>::infinity();
  const double log2pi = std::log(2.0 * M_PI);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        double lp = std::log(g.weights[k]);
        for (std::size_t j = 0; j < d; ++j) {
          double e = z(i, j) - g.means[k][j];
          lp -= 0.5 * (log2pi + std::log(g.variances[k][j]) + e * e / g.variances[k][j]);
        }
        resp[i * K + k] = lp;
        mx = std::max(mx, lp);
      }
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += std::exp(resp[i * K + k] - mx);
      double lse = mx + std::log(s);
      ll += lse;
      for (std::size_t k = 0; k < K; ++k) resp[i * K + k] = std::exp(resp[i * K + k] - lse);
    }
    if (!std::isfinite(ll)) return std::nullopt;

    for (std::size_t k = 0; k < K; ++k) {
      double nk = 0;
      for (std::size_t i = 0; i < n; ++i) nk += resp[i * K + k];
      if (nk < 1.0) return std::nullopt;
      g.weights[k] = nk / static_cast<double>(n);
      for (std::size_t j = 0; j < d; ++j) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += resp[i * K + k] * z(i, j);
        m /= nk;
        double v = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double e = z(i, j) - m;
          v += resp[i * K + k] * e * e;
        }
        g.means[k][j] = m;
        g.variances[k][j] = v / nk + reg;
      }
    }
    if (std::abs(ll - prev_ll) / static_cast<double>(n) < tol) break;
    prev_ll = ll;
  }
  return g;
}

inline std::vector<TimeWindow> gmx_generate(const GenerationRequest& req, const std::vector<TimeWindow>& real,
                                            std::size_t n_components = 3, double variance_threshold = 0.95,
                                            std::size_t d_max = 10, const std::string& id = "gmx") {
  if (n_components == 0) throw ValidationError("gmx: n_components must be >= 1");
  detail::require_real(real, req, id);
  if (req.count == 0) return {};
  if (real.size() < 2) throw ValidationError("gmx: class " + std::to_string(req.class_id) + " needs >= 2 real windows");

  std::size_t K = n_components;
  if (real.size() < K + 1) {
    K = real.size() - 1;
    log_warning(id + ": class " + std::to_string(req.class_id) + " too small for " + std::to_string(n_components) +
                " components; using " + std::to_string(K));
  }
  ClassEmbedding emb = fit_class_embedding(real, variance_threshold, d_max);
  PointSet z = emb.transform_all(real);

  std::optional<DiagonalGmm> gmm;
  for (; K >= 1 && !gmm; --K) {
    gmm = fit_diagonal_gmm(z, K, derive_seed(req.seed, 7, K));
    if (!gmm && K > 1) log_warning(id + ": EM failed with " + std::to_string(K) + " components; retrying with fewer");
  }
  if (!gmm) gmm = fit_single_gaussian(z);

  Rng rng = make_rng(derive_seed(req.seed, 8));
  std::discrete_distribution<std::size_t> pick(gmm->weights.begin(), gmm->weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TimeWindow> out;
  out.reserve(req.count);
  std::vector<double> latent(emb.dim());
  for (std::size_t i = 0; i < req.count; ++i) {
    std::size_t k = pick(rng);
    for (std::size_t j = 0; j < latent.size(); ++j)
      latent[j] = gmm->means[k][j] + std::sqrt(gmm->variances[k][j]) * normal(rng);
    out.push_back(detail::make_generated(real, emb.inverse(latent), req, id, std::nullopt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator objects

class RimGenerator final : public Generator {
 public:
  explicit RimGenerator(std::size_t depth = 2, std::string id = "rim") : id_(std::move(id)), depth_(depth) {
    if (depth_ < 1) throw ValidationError("rim: depth must be >= 1");
  }
  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return PairingMode::aligned; }
  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    return rim_generate(req, real, depth_, id_);
  }

 private:
  std::string id_;
  std::size_t depth_;
};

class TswGenerator final : public Generator {
 public:
  explicit TswGenerator(std::size_t n_segments = 4, double warp_ratio = 0.8, std::string id = "tsw")
      : id_(std::move(id)), n_segments_(n_segments), ratio_(warp_ratio) {
    if (n_segments_ < 2 || n_segments_ % 2) throw ValidationError("tsw: n_segments must be even and >= 2");
    if (!(ratio_ > 0 && ratio_ < 1)) throw ValidationError("tsw: warp_ratio must lie in (0, 1)");
  }
  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return PairingMode::aligned; }
  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    return tsw_generate(req, real, n_segments_, ratio_, id_);
  }

 private:
  std::string id_;
  std::size_t n_segments_;
  double ratio_;
};

class DtwWarpGenerator final : public Generator {
 public:
  explicit DtwWarpGenerator(double blend = 0.5, std::string id = "dtw") : id_(std::move(id)), blend_(blend) {
    if (!(blend_ > 0 && blend_ <= 1)) throw ValidationError("dtw: blend must lie in (0, 1]");
  }
  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return PairingMode::aligned; }
  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    return dtw_warp_generate(req, real, blend_, id_);
  }

 private:
  std::string id_;
  double blend_;
};

class GmxGenerator final : public Generator {
 public:
  explicit GmxGenerator(std::size_t n_components = 3, std::string id = "gmx", double variance_threshold = 0.95,
                        std::size_t d_max = 10)
      : id_(std::move(id)), components_(n_components), threshold_(variance_threshold), d_max_(d_max) {
    if (components_ == 0) throw ValidationError("gmx: n_components must be >= 1");
  }
  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return PairingMode::independent; }
  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    return gmx_generate(req, real, components_, threshold_, d_max_, id_);
  }

 private:
  std::string id_;
  std::size_t components_;
  double threshold_;
  std::size_t d_max_;
};

/// Emits exact copies of real windows, cycling through a seeded permutation.
/// Handy as the upper reference for similarity scores.
class CopyGenerator final : public Generator {
 public:
  explicit CopyGenerator(std::string id = "copy", double noise = 0.0) : id_(std::move(id)), noise_(noise) {}
  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return PairingMode::aligned; }
  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    detail::require_real(real, req, id_);
    Rng rng = make_rng(req.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::size_t> order;
    std::vector<TimeWindow> out;
    out.reserve(req.count);
    for (std::size_t i = 0; i < req.count; ++i) {
      if (i % real.size() == 0) order = detail::shuffled_indices(real.size(), rng);
      std::size_t src = order[i % real.size()];
      std::vector<double> v = real[src].values();
      if (noise_ > 0)
        for (double& x : v) x += noise_ * normal(rng);
      out.push_back(detail::make_generated(real, std::move(v), req, id_, src));
    }
    return out;
  }

 private:
  std::string id_;
  double noise_;
};

// ---------------------------------------------------------------------------
// External generators over a JSON stdin/stdout protocol

inline nlohmann::json window_matrix_json(const TimeWindow& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < w.T(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t f = 0; f < w.F(); ++f) row.push_back(w.at(t, f));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<double> window_values_from_json(const nlohmann::json& m, std::size_t T, std::size_t F) {
  if (!m.is_array() || m.size() != T) throw RuntimeFailure("window must be an array of " + std::to_string(T) + " rows");
  std::vector<double> v;
  v.reserve(T * F);
  for (const auto& row : m) {
    if (!row.is_array() || row.size() != F) throw RuntimeFailure("window row must hold " + std::to_string(F) + " values");
    for (const auto& x : row) {
      if (!x.is_number()) throw RuntimeFailure("window value is not a number");
      v.push_back(x.get<double>());
    }
  }
  return v;
}

/// Request: {class_id, count, T, F, seed, round, real_windows: [T x F arrays]}.
/// Response: {"windows": [...]} where each item is a T x F array or
/// {"values": T x F array, "source_index": int}.
class SubprocessGenerator final : public Generator {
 public:
  SubprocessGenerator(std::string id, std::string command, PairingMode mode,
                      std::chrono::milliseconds timeout = std::chrono::seconds(300))
      : id_(std::move(id)), command_(std::move(command)), mode_(mode), timeout_(timeout) {}

  const std::string& id() const override { return id_; }
  PairingMode pairing_mode() const override { return mode_; }

  std::vector<TimeWindow> generate(const GenerationRequest& req, const std::vector<TimeWindow>& real) const override {
    detail::require_real(real, req, id_);
    if (req.count == 0) return {};
    const std::size_t T = real.front().T(), F = real.front().F();
    nlohmann::json request = {{"class_id", req.class_id}, {"count", req.count}, {"T", T},
                              {"F", F},                   {"seed", req.seed},   {"round", req.round}};
    nlohmann::json rw = nlohmann::json::array();
    for (const auto& w : real) rw.push_back(window_matrix_json(w));
    request["real_windows"] = std::move(rw);

    std::string reply = run_subprocess(command_, request.dump(), timeout_);
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure(id_ + ": invalid JSON from generator: " + e.what());
    }
    if (!parsed.contains("windows") || !parsed["windows"].is_array())
      throw RuntimeFailure(id_ + ": reply lacks a windows array");
    const auto& items = parsed["windows"];
    if (items.size() != req.count)
      throw RuntimeFailure(id_ + ": generator returned " + std::to_string(items.size()) + " windows, expected " +
                           std::to_string(req.count));
    std::vector<TimeWindow> out;
    out.reserve(req.count);
    for (const auto& item : items) {
      std::optional<std::size_t> src;
      const nlohmann::json* values = &item;
      if (item.is_object()) {
        if (!item.contains("values")) throw RuntimeFailure(id_ + ": window object lacks values");
        values = &item["values"];
        if (item.contains("source_index") && !item["source_index"].is_null()) {
          auto s = item["source_index"].get<long long>();
          if (s < 0 || static_cast<std::size_t>(s) >= real.size()) throw RuntimeFailure(id_ + ": source_index out of range");
          src = static_cast<std::size_t>(s);
        }
      }
      if (mode_ == PairingMode::aligned && !src)
        throw RuntimeFailure(id_ + ": aligned generator must report source_index");
      try {
        out.push_back(detail::make_generated(real, window_values_from_json(*values, T, F), req, id_, src));
      } catch (const ValidationError& e) {
        throw RuntimeFailure(id_ + ": " + e.what());
      }
    }
    return out;
  }

 private:
  std::string id_;
  std::string command_;
  PairingMode mode_;
  std::chrono::milliseconds timeout_;
};

}  // namespace igada
