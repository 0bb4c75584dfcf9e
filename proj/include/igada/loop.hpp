#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"
#include "igada/gap.hpp"
#include "igada/gcm.hpp"
#include "igada/generators.hpp"
#include "igada/models.hpp"

namespace igada {

struct LoopConfig {
  std::array<double, 5> eta{0.5, 0.3, 0.1, 0.1, 0.2};
  long long B_min = 30;
  long long B_max = 385;
  double kappa = 1.6;
  double rho_r = 0.9;
  int s = 3;      // attempts per refinement round
  int r_max = 3;  // consecutive rejected rounds before stopping
  double stop_fraction = 0.05;
  double eps = 1e-8;
  double mu0 = 1.0;  // weight of the shared term in generator scoring
  std::uint64_t seed = 0;
  int max_rounds = 200;  // refinement rounds; a safety cap on top of the two stopping rules

  void validate() const {
    for (double e : eta)
      if (!(e >= 0)) throw ValidationError("eta weights must be nonnegative");
    if (B_min < 0 || B_min > B_max) throw ValidationError("need 0 <= B_min <= B_max");
    if (!(kappa >= 1)) throw ValidationError("kappa must be >= 1");
    if (!(rho_r > 0 && rho_r < 1)) throw ValidationError("rho_r must lie in (0, 1)");
    if (s < 1) throw ValidationError("s must be >= 1");
    if (r_max < 1) throw ValidationError("r_max must be >= 1");
    if (!(stop_fraction >= 0)) throw ValidationError("stop_fraction must be >= 0");
    if (!(eps > 0)) throw ValidationError("eps must be positive");
    if (!(mu0 >= 0)) throw ValidationError("mu0 must be >= 0");
    if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
  }
};

inline double joint_score(const EvalReport& r, double gamma, const std::array<double, 5>& eta) {
  return eta[0] * r.macro_f1 + eta[1] * r.accuracy + eta[2] * r.macro_recall + eta[3] * r.macro_precision -
         eta[4] * gamma;
}

inline long long launch_budget(double gamma, const LoopConfig& cfg, bool with_kappa) {
  if (!(gamma >= 0 && gamma <= 1)) throw ValidationError("Gamma must lie in [0, 1]");
  double k = with_kappa ? cfg.kappa : 1.0;
  double b = k * (static_cast<double>(cfg.B_min) + static_cast<double>(cfg.B_max - cfg.B_min) * gamma);
  return std::max<long long>(1, std::llround(b));
}

/// round(B * rho) with halves rounded up, never below 1.
inline long long shrink_budget(long long B, double rho_r) {
  if (B < 1) throw ValidationError("budget must be >= 1");
  if (!(rho_r > 0 && rho_r < 1)) throw ValidationError("rho_r must lie in (0, 1)");
  return std::max<long long>(1, static_cast<long long>(std::floor(static_cast<double>(B) * rho_r + 0.5)));
}

/// Outcome of training on a candidate set and scoring it on the validation split.
struct Evaluation {
  ModelPtr model;
  EvalReport report;
  GapIndex gaps;
  double J = 0;
};

/// round is -1 for the baseline, attempt counts from 0.
using Evaluator = std::function<Evaluation(const LabeledDataset& train, int round, int attempt)>;

/// Trains `classifier` on the candidate set, evaluates it on `val` and
/// measures the gap against the frozen reference.
inline Evaluator make_standard_evaluator(ClassifierPtr classifier, LabeledDataset val, GapReference ref,
                                         std::array<double, 5> eta, std::uint64_t seed) {
  return [classifier = std::move(classifier), val = std::move(val), ref = std::move(ref), eta,
          seed](const LabeledDataset& train, int round, int attempt) {
    Evaluation e;
    e.model = classifier->train(train, derive_seed(seed, static_cast<std::uint64_t>(round + 1),
                                                   static_cast<std::uint64_t>(attempt)));
    e.report = evaluate(*e.model, val);
    e.gaps = compute_gap_index(ref, train, e.report);
    e.J = joint_score(e.report, e.gaps.gamma_bar, eta);
    return e;
  };
}

enum class StopReason { launch_rejected, gap_threshold, reject_streak, round_limit };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::launch_rejected: return "launch_rejected";
    case StopReason::gap_threshold: return "gap_threshold";
    case StopReason::reject_streak: return "reject_streak";
    case StopReason::round_limit: return "round_limit";
  }
  return "unknown";
}

struct RoundLog {
  int t = 0;
  long long B_t = 0;
  RoundSchedule schedule;
  double J_t = 0, Gamma_t = 0;           // state after the round (carried forward on rejection)
  double candidate_J = 0, candidate_Gamma = 0;  // accepted attempt, else the last attempt
  double delta_J = 0;
  double delta_Gamma = 0;      // candidate minus previous, negative when the gap shrank
  double gamma_reduction = 0;  // previous minus candidate
  bool accepted = false;
  int attempts = 0;
  std::vector<std::string> errors;
  double wall_time_ms = 0;
  std::uint64_t candidate_digest = 0;
  double val_acc = 0;  // state after the round
  std::vector<std::vector<long long>> generated;  // [class][generator] windows added, zero when rejected

  nlohmann::json to_json(bool canonical = true) const {
    nlohmann::json j = {{"t", t},
                        {"B_t", B_t},
                        {"allocation", schedule.allocation.to_json()},
                        {"gap_report", schedule.to_json(t)},
                        {"J_t", J_t},
                        {"Gamma_t", Gamma_t},
                        {"candidate_J", candidate_J},
                        {"candidate_Gamma", candidate_Gamma},
                        {"delta_J", delta_J},
                        {"delta_Gamma", delta_Gamma},
                        {"gamma_reduction", gamma_reduction},
                        {"accepted", accepted},
                        {"attempts", attempts},
                        {"errors", errors},
                        {"candidate_digest", candidate_digest},
                        {"val_acc", val_acc}};
    if (!canonical) j["wall_time_ms"] = wall_time_ms;
    return j;
  }
};

struct LoopResult {
  explicit LoopResult(LabeledDataset train) : final_train(std::move(train)) {}

  LabeledDataset final_train;
  ModelPtr final_model;
  std::vector<RoundLog> rounds;
  StopReason stop_reason = StopReason::launch_rejected;
  Evaluation initial;
  Evaluation final_state;
  std::vector<ModelPtr> round_models;  // state model after each round, aligned with `rounds`
};

/// Order-sensitive FNV-1a digest of labels and raw value bytes.
inline std::uint64_t windows_digest(const std::vector<TimeWindow>& ws) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& w : ws) {
    std::uint64_t label = w.label();
    mix(&label, sizeof label);
    mix(w.values().data(), w.values().size() * sizeof(double));
  }
  return h;
}

/// Generates the candidate set for one allocation. Each (g, c) cell draws
/// from the real windows of class c in `real_train`.
inline std::vector<TimeWindow> generate_candidates(const BudgetAllocation& alloc, const std::vector<GeneratorPtr>& generators,
                                                   const std::vector<std::vector<TimeWindow>>& real_by_class, int round,
                                                   std::uint64_t seed) {
  std::vector<TimeWindow> out;
  for (std::size_t c = 0; c < alloc.per_cell.size(); ++c)
    for (std::size_t g = 0; g < generators.size(); ++g) {
      auto n = alloc.per_cell[c][g];
      if (n <= 0) continue;
      GenerationRequest req{c, static_cast<std::size_t>(n), round, derive_seed(seed, g, c)};
      auto produced = generators[g]->generate(req, real_by_class[c]);
      if (produced.size() != static_cast<std::size_t>(n))
        throw RuntimeFailure("generator " + generators[g]->id() + " returned " + std::to_string(produced.size()) +
                             " windows, expected " + std::to_string(n));
      for (auto& w : produced) {
        if (w.label() != c) throw RuntimeFailure("generator " + generators[g]->id() + " returned a mislabeled window");
        out.push_back(std::move(w));
      }
    }
  return out;
}

/// Launch injection followed by refinement rounds. Candidates are accepted
/// only when the joint score rises and the gap index falls, both strictly.
inline LoopResult run_closed_loop(const LabeledDataset& train, const std::vector<GeneratorPtr>& generators,
                                  const CapabilityTensor& tensor, const LoopConfig& cfg, const Evaluator& evaluator) {
  cfg.validate();
  if (generators.size() != tensor.generators()) throw ValidationError("tensor and generator roster disagree");
  for (std::size_t g = 0; g < generators.size(); ++g)
    if (generators[g]->id() != tensor.generator_ids()[g])
      throw ValidationError("generator " + generators[g]->id() + " does not match tensor column " +
                            tensor.generator_ids()[g]);
  const SchedulerConfig sched_cfg{cfg.eps, cfg.mu0};
  std::vector<std::vector<TimeWindow>> real_by_class;
  for (std::size_t c = 0; c < train.C(); ++c) real_by_class.push_back(train.windows_of_class(c));

  LoopResult res(train);
  res.initial = evaluator(train, -1, 0);
  const double gamma0 = res.initial.gaps.gamma_bar;

  struct State {
    LabeledDataset train;
    Evaluation eval;
  } state{train, res.initial};

  // Runs one attempt; nullopt plus an error message when it throws.
  auto attempt = [&](const RoundSchedule& sched, int t, int l, std::uint64_t& digest,
                     std::vector<std::string>& errors) -> std::optional<std::pair<LabeledDataset, Evaluation>> {
    try {
      auto cand = generate_candidates(sched.allocation, generators, real_by_class, t,
                                      derive_seed(cfg.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(l)));
      digest = windows_digest(cand);
      LabeledDataset next = state.train.with_appended(cand);
      Evaluation e = evaluator(next, t, l);
      return std::make_pair(std::move(next), std::move(e));
    } catch (const std::exception& ex) {
      errors.push_back("attempt " + std::to_string(l) + ": " + ex.what());
      log_warning("round " + std::to_string(t) + " attempt " + std::to_string(l) + " failed: " + ex.what());
      return std::nullopt;
    }
  };

  auto finish_log = [&](RoundLog& log, const Evaluation& cand, bool accepted) {
    log.candidate_J = cand.J;
    log.candidate_Gamma = cand.gaps.gamma_bar;
    log.delta_J = cand.J - state.eval.J;
    log.delta_Gamma = cand.gaps.gamma_bar - state.eval.gaps.gamma_bar;
    log.gamma_reduction = -log.delta_Gamma;
    log.accepted = accepted;
  };

  auto record = [&](RoundLog log, std::chrono::steady_clock::time_point start) {
    log.J_t = state.eval.J;
    log.Gamma_t = state.eval.gaps.gamma_bar;
    log.val_acc = state.eval.report.accuracy;
    log.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (!log.accepted)
      for (auto& row : log.generated) std::fill(row.begin(), row.end(), 0);
    res.rounds.push_back(std::move(log));
    res.round_models.push_back(state.eval.model);
  };

  auto gate = [](const Evaluation& cand, const Evaluation& prev) {
    return cand.J - prev.J > 0 && cand.gaps.gamma_bar < prev.gaps.gamma_bar;
  };

  // Launch injection.
  {
    auto start = std::chrono::steady_clock::now();
    RoundLog log;
    log.t = 0;
    log.B_t = launch_budget(gamma0, cfg, true);
    log.schedule = plan_round(state.eval.gaps, state.train.class_counts(), tensor, log.B_t, sched_cfg);
    log.generated = log.schedule.allocation.per_cell;
    log.attempts = 1;
    auto out = attempt(log.schedule, 0, 0, log.candidate_digest, log.errors);
    bool ok = out && gate(out->second, state.eval);
    if (out) finish_log(log, out->second, ok);
    if (!ok) {
      record(std::move(log), start);
      res.stop_reason = StopReason::launch_rejected;
      res.final_model = res.initial.model;
      res.final_state = res.initial;
      return res;
    }
    state = {std::move(out->first), std::move(out->second)};
    record(std::move(log), start);
  }

  long long B = launch_budget(state.eval.gaps.gamma_bar, cfg, false);
  int r_rej = 0;
  res.stop_reason = StopReason::round_limit;
  for (int t = 1; t <= cfg.max_rounds; ++t) {
    auto start = std::chrono::steady_clock::now();
    RoundLog log;
    log.t = t;
    log.B_t = B;
    log.schedule = plan_round(state.eval.gaps, state.train.class_counts(), tensor, B, sched_cfg);
    log.generated = log.schedule.allocation.per_cell;
    for (int l = 0; l < cfg.s; ++l) {
      log.attempts = l + 1;
      auto out = attempt(log.schedule, t, l, log.candidate_digest, log.errors);
      if (!out) continue;
      bool ok = gate(out->second, state.eval);
      finish_log(log, out->second, ok);
      if (ok) {
        state = {std::move(out->first), std::move(out->second)};
        break;
      }
    }
    r_rej = log.accepted ? 0 : r_rej + 1;
    record(std::move(log), start);
    B = shrink_budget(B, cfg.rho_r);
    if (state.eval.gaps.gamma_bar <= cfg.stop_fraction * gamma0) {
      res.stop_reason = StopReason::gap_threshold;
      break;
    }
    if (r_rej >= cfg.r_max) {
      res.stop_reason = StopReason::reject_streak;
      break;
    }
  }
  res.final_train = state.train;
  res.final_model = state.eval.model;
  res.final_state = state.eval;
  return res;
}

inline LoopResult run_closed_loop(const LabeledDataset& train, const LabeledDataset& val,
                                  const std::vector<GeneratorPtr>& generators, ClassifierPtr classifier,
                                  const CapabilityTensor& tensor, const LoopConfig& cfg, const StatsConfig& stats = {}) {
  auto ref = GapReference::build(train, stats.variance_threshold, stats.d_max, stats.bins);
  return run_closed_loop(train, generators, tensor, cfg,
                         make_standard_evaluator(std::move(classifier), val, std::move(ref), cfg.eta,
                                                 derive_seed(cfg.seed, hash_string("classifier"))));
}

inline nlohmann::json rounds_json(const LoopResult& r, bool canonical = true) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& log : r.rounds) arr.push_back(log.to_json(canonical));
  return arr;
}

}  // namespace igada
