#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/embed.hpp"
#include "igada/gcm.hpp"
#include "igada/models.hpp"
#include "igada/stats.hpp"

namespace igada {

struct GapVector {
  std::size_t class_id = 0;
  double h_size = 0, h_dist = 0, h_bdry = 0, h_unc = 0;
  double gamma = 0;

  /// Clamps every component to [0, 1] and sets gamma to their mean.
  static GapVector make(std::size_t c, double size, double dist, double bdry, double unc) {
    auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
    GapVector g{c, unit(size), unit(dist), unit(bdry), unit(unc), 0.0};
    g.gamma = (g.h_size + g.h_dist + g.h_bdry + g.h_unc) / 4.0;
    return g;
  }

  bool operator==(const GapVector&) const = default;
};

struct GapIndex {
  std::vector<GapVector> per_class;
  double gamma_bar = 0;

  bool operator==(const GapIndex&) const = default;
};

inline GapIndex gap_index(std::vector<GapVector> gaps) {
  if (gaps.empty()) throw ValidationError("gap_index needs at least one class");
  GapIndex g;
  for (const auto& v : gaps) g.gamma_bar += v.gamma;
  g.gamma_bar /= static_cast<double>(gaps.size());
  g.per_class = std::move(gaps);
  return g;
}

/// Per-class embeddings and coordinate histograms of the original training
/// data. Built once; later rounds compare against these frozen histograms.
struct GapReference {
  struct ClassRef {
    ClassEmbedding embedding;
    std::vector<HistogramEdges> edges;        // one per embedding coordinate
    std::vector<std::vector<double>> hists;   // reference histograms
  };
  std::vector<ClassRef> classes;
  double alpha = 1e-6;

  static GapReference build(const LabeledDataset& ref_train, double variance_threshold = 0.95, std::size_t d_max = 10,
                            std::size_t bins = 16, double alpha = 1e-6) {
    GapReference r;
    r.alpha = alpha;
    for (std::size_t c = 0; c < ref_train.C(); ++c) {
      auto ws = ref_train.windows_of_class(c);
      if (ws.size() < 2)
        throw ValidationError("class " + std::to_string(c) + " needs at least 2 reference windows for gap tracking");
      ClassRef cr;
      cr.embedding = fit_class_embedding(ws, variance_threshold, d_max);
      cr.embedding.class_id = c;
      PointSet z = cr.embedding.transform_all(ws);
      for (std::size_t j = 0; j < z.dim(); ++j) {
        auto col = z.column(j).coords();
        cr.edges.push_back(HistogramEdges::from_reference(col, bins));
        cr.hists.push_back(histogram(col, cr.edges.back(), alpha));
      }
      r.classes.push_back(std::move(cr));
    }
    return r;
  }
};

/// 1 - mean JS similarity between the frozen reference histograms of class c
/// and the histograms of `windows` (class c of the current training set).
inline double distribution_gap(const GapReference::ClassRef& ref, const std::vector<TimeWindow>& windows, double alpha) {
  if (windows.empty()) return 1.0;
  PointSet z = ref.embedding.transform_all(windows);
  double sim = 0;
  for (std::size_t j = 0; j < z.dim(); ++j) {
    auto cur = histogram(z.column(j).coords(), ref.edges[j], alpha);
    sim += js_similarity(ref.hists[j], cur);
  }
  return 1.0 - sim / static_cast<double>(z.dim());
}

/// Gap components of class c. N_max is the largest class of cur_train.
inline GapVector compute_gap_vector(std::size_t c, const GapReference& ref, const LabeledDataset& cur_train,
                                    const EvalReport& val_report) {
  if (c >= ref.classes.size()) throw ValidationError("class " + std::to_string(c) + " has no gap reference");
  if (c >= val_report.per_class_recall.size()) throw ValidationError("evaluation report lacks class " + std::to_string(c));
  auto counts = cur_train.class_counts();
  const double n_max = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
  double h_size = 1.0, h_dist = 1.0;
  if (counts[c] == 0) {
    log_warning("class " + std::to_string(c) + " is absent from the current training set");
  } else {
    h_size = std::max(0.0, (n_max - static_cast<double>(counts[c])) / n_max);
    h_dist = distribution_gap(ref.classes[c], cur_train.windows_of_class(c), ref.alpha);
  }
  return GapVector::make(c, h_size, h_dist, 1.0 - val_report.per_class_recall[c],
                         val_report.mean_normalized_entropy_per_class[c]);
}

inline GapIndex compute_gap_index(const GapReference& ref, const LabeledDataset& cur_train, const EvalReport& val_report) {
  std::vector<GapVector> gaps;
  for (std::size_t c = 0; c < cur_train.C(); ++c) gaps.push_back(compute_gap_vector(c, ref, cur_train, val_report));
  return gap_index(std::move(gaps));
}

// ---------------------------------------------------------------------------
// Scheduling

struct SchedulerConfig {
  double eps = 1e-8;
  double mu0 = 1.0;
};

namespace detail {
inline std::vector<double> normalized_or_uniform(std::vector<double> v) {
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  if (!(s > 0)) {
    std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(v.size()));
    return v;
  }
  for (double& x : v) x /= s;
  return v;
}
}  // namespace detail

struct ClassDistribution {
  std::vector<double> p_cls, p_bal, p_info;
  double lambda = 0;
};

/// Blend of the balance-driven and gap-driven class distributions.
inline ClassDistribution class_distribution(const std::vector<GapVector>& gaps, const std::vector<std::size_t>& class_counts,
                                            double eps = 1e-8) {
  const std::size_t C = gaps.size();
  if (C == 0 || class_counts.size() != C) throw ValidationError("class_distribution: gaps and counts disagree");
  if (std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0}) == 0)
    throw ValidationError("class_distribution: empty training set");
  ClassDistribution d;
  double mean_size = 0, gamma_bar = 0;
  for (const auto& g : gaps) {
    mean_size += g.h_size;
    gamma_bar += g.gamma;
  }
  mean_size /= static_cast<double>(C);
  gamma_bar /= static_cast<double>(C);
  d.lambda = std::clamp(mean_size / (4.0 * gamma_bar + eps), 0.0, 1.0);

  const std::size_t n_max = *std::max_element(class_counts.begin(), class_counts.end());
  std::vector<double> deficit(C), info(C);
  for (std::size_t c = 0; c < C; ++c) {
    deficit[c] = static_cast<double>(n_max - class_counts[c]);
    info[c] = gaps[c].gamma;
  }
  d.p_bal = detail::normalized_or_uniform(deficit);
  d.p_info = detail::normalized_or_uniform(info);
  d.p_cls.resize(C);
  for (std::size_t c = 0; c < C; ++c) d.p_cls[c] = d.lambda * d.p_bal[c] + (1.0 - d.lambda) * d.p_info[c];
  d.p_cls = detail::normalized_or_uniform(d.p_cls);
  return d;
}

struct GeneratorScores {
  std::vector<double> psi, p_gen;
  double e = 0, r = 0;
  double mu0 = 1, mu1 = 0, mu2 = 0;
};

/// Scores the generators for one class from its gap vector and the
/// capability column (S_g, C_g). The distribution is Psi normalized to sum
/// to one, uniform when every Psi is zero.
inline GeneratorScores generator_scores(const GapVector& gap, const std::vector<double>& S, const std::vector<double>& Cc,
                                        const SchedulerConfig& cfg = {}) {
  if (S.empty() || S.size() != Cc.size()) throw ValidationError("generator_scores: capability column is malformed");
  GeneratorScores out;
  out.e = (gap.h_size + gap.h_dist) / 2.0;
  out.r = (gap.h_bdry + gap.h_unc) / 2.0;
  out.mu0 = cfg.mu0;
  out.mu1 = out.e / (out.e + out.r + cfg.eps);
  out.mu2 = out.r / (out.e + out.r + cfg.eps);
  out.psi.resize(S.size());
  for (std::size_t g = 0; g < S.size(); ++g)
    out.psi[g] = std::max(0.0, out.mu0 * S[g] + out.mu1 * out.e * Cc[g] + out.mu2 * out.r * S[g]);
  out.p_gen = detail::normalized_or_uniform(out.psi);
  return out;
}

/// Integer shares of `total` under `p` by largest remainder. Equal
/// remainders (within 1e-12) go to the lower index.
inline std::vector<long long> apportion(long long total, const std::vector<double>& p) {
  if (total < 0) throw ValidationError("cannot apportion a negative total");
  if (p.empty()) throw ValidationError("cannot apportion over zero bins");
  for (double v : p)
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("apportion: invalid probability");
  auto q = detail::normalized_or_uniform(p);
  std::vector<long long> out(q.size());
  std::vector<double> frac(q.size());
  long long assigned = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double quota = static_cast<double>(total) * q[i];
    out[i] = static_cast<long long>(std::floor(quota));
    frac[i] = quota - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(q.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<long long> key(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) key[i] = std::llround(frac[i] * 1e12);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  // Rounding error can leave the floors one unit over the total.
  for (std::size_t k = order.size(); assigned > total && k-- > 0;)
    if (out[order[k]] > 0) {
      --out[order[k]];
      --assigned;
    }
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++out[order[k]];
    ++assigned;
  }
  return out;
}

struct BudgetAllocation {
  long long total = 0;
  std::vector<long long> per_class;
  std::vector<std::vector<long long>> per_cell;  // [class][generator]

  bool operator==(const BudgetAllocation&) const = default;

  nlohmann::json to_json() const { return {{"total", total}, {"per_class", per_class}, {"per_cell", per_cell}}; }
  static BudgetAllocation from_json(const nlohmann::json& j) {
    return {j.at("total").get<long long>(), j.at("per_class").get<std::vector<long long>>(),
            j.at("per_cell").get<std::vector<std::vector<long long>>>()};
  }
};

inline BudgetAllocation allocate_budget(long long total, const std::vector<double>& p_cls,
                                        const std::vector<std::vector<double>>& p_gen) {
  if (p_gen.size() != p_cls.size()) throw ValidationError("allocate_budget: p_gen needs one row per class");
  BudgetAllocation a;
  a.total = total;
  a.per_class = apportion(total, p_cls);
  for (std::size_t c = 0; c < p_cls.size(); ++c) a.per_cell.push_back(apportion(a.per_class[c], p_gen[c]));
  return a;
}

struct SchedulingPlan {
  std::vector<double> p_cls;
  std::vector<std::vector<double>> p_gen;  // [class][generator]
  double lambda = 0;
  std::vector<double> e_demand, r_demand;
  std::vector<std::vector<double>> psi;    // [class][generator]
};

struct RoundSchedule {
  GapIndex gaps;
  SchedulingPlan plan;
  BudgetAllocation allocation;

  nlohmann::json to_json(int t) const {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& g : gaps.per_class)
      per_class.push_back({{"c", g.class_id},
                           {"h_size", g.h_size},
                           {"h_dist", g.h_dist},
                           {"h_bdry", g.h_bdry},
                           {"h_unc", g.h_unc},
                           {"gamma", g.gamma}});
    return {{"t", t},
            {"per_class", per_class},
            {"Gamma", gaps.gamma_bar},
            {"lambda", plan.lambda},
            {"p_cls", plan.p_cls},
            {"p_gen", plan.p_gen},
            {"allocation", allocation.to_json()}};
  }
};

/// Plans a round from an already computed gap index.
inline RoundSchedule plan_round(const GapIndex& gaps, const std::vector<std::size_t>& class_counts,
                                const CapabilityTensor& tensor, long long budget, const SchedulerConfig& cfg = {}) {
  const std::size_t C = gaps.per_class.size();
  if (tensor.classes() != C) throw ValidationError("capability tensor and gap index disagree on classes");
  if (!tensor.complete()) throw ValidationError("capability tensor is incomplete");
  RoundSchedule r;
  r.gaps = gaps;
  auto cd = class_distribution(gaps.per_class, class_counts, cfg.eps);
  r.plan.p_cls = cd.p_cls;
  r.plan.lambda = cd.lambda;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> S, Cc;
    for (std::size_t g = 0; g < tensor.generators(); ++g) {
      S.push_back(tensor.S(g, c));
      Cc.push_back(tensor.C(g, c));
    }
    auto gs = generator_scores(gaps.per_class[c], S, Cc, cfg);
    r.plan.p_gen.push_back(gs.p_gen);
    r.plan.psi.push_back(gs.psi);
    r.plan.e_demand.push_back(gs.e);
    r.plan.r_demand.push_back(gs.r);
  }
  r.allocation = allocate_budget(budget, r.plan.p_cls, r.plan.p_gen);
  return r;
}

/// Gap measurement followed by class and generator scheduling for one round.
inline RoundSchedule schedule_round(const GapReference& ref, const LabeledDataset& cur_train, const EvalReport& val_report,
                                    const CapabilityTensor& tensor, long long budget, const SchedulerConfig& cfg = {}) {
  return plan_round(compute_gap_index(ref, cur_train, val_report), cur_train.class_counts(), tensor, budget, cfg);
}

}  // namespace igada
