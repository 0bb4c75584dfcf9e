#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace igada;

namespace {

GapVector gap(std::size_t c, double size, double dist, double bdry, double unc) {
  return GapVector::make(c, size, dist, bdry, unc);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

template <class T>
T sum_ll(const std::vector<T>& v) {
  return std::accumulate(v.begin(), v.end(), T{0});
}

}  // namespace

TEST(GapVector, ComponentsAreClampedAndAveraged) {
  auto g = gap(1, 0.2, 0.4, 1.5, -0.1);
  EXPECT_EQ(g.h_bdry, 1.0);
  EXPECT_EQ(g.h_unc, 0.0);
  EXPECT_DOUBLE_EQ(g.gamma, (0.2 + 0.4 + 1.0 + 0.0) / 4);
}

TEST(GapIndex, MeanOfClassGammas) {
  std::vector<GapVector> v{gap(0, 0.2, 0.2, 0.2, 0.2), gap(1, 0.3, 0.3, 0.3, 0.3), gap(2, 0.4, 0.4, 0.4, 0.4)};
  EXPECT_NEAR(gap_index(v).gamma_bar, 0.3, 1e-15);
  EXPECT_EQ(gap_index({gap(0, 0, 0, 0, 0), gap(1, 0, 0, 0, 0)}).gamma_bar, 0.0);
  EXPECT_DOUBLE_EQ(gap_index({gap(0, 0.1, 0.5, 0.3, 0.7)}).gamma_bar, 0.4);
  EXPECT_THROW(gap_index({}), ValidationError);
}

TEST(ComputeGap, NoGapWhenTrainIsReferenceAndClassifierIsPerfect) {
  auto ds = support::sinusoid_dataset({20, 30, 25}, 16, 1, 3);
  auto ref = GapReference::build(ds);
  auto idx = compute_gap_index(ref, ds, support::uniform_report(3, 1.0, 0.0));
  const auto& largest = idx.per_class[1];
  EXPECT_EQ(largest.h_size, 0.0);
  EXPECT_NEAR(largest.h_dist, 0.0, 1e-5);
  EXPECT_EQ(largest.h_bdry, 0.0);
  EXPECT_EQ(largest.h_unc, 0.0);
  EXPECT_NEAR(largest.gamma, 0.0, 1e-5);
  for (const auto& g : idx.per_class) EXPECT_NEAR(g.h_dist, 0.0, 1e-5);
}

TEST(ComputeGap, SizeGapFromCountsAndUncertaintyFromUniformClassifier) {
  auto ds = support::sinusoid_dataset({259, 503, 228}, 4, 1, 5);
  auto ref = GapReference::build(ds);
  auto report = support::uniform_report(3, 1.0 / 3.0, 1.0);
  auto g0 = compute_gap_vector(0, ref, ds, report);
  EXPECT_NEAR(g0.h_size, 0.4851, 5e-5);
  EXPECT_DOUBLE_EQ(g0.h_size, (503.0 - 259.0) / 503.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(compute_gap_vector(c, ref, ds, report).h_unc, 1.0);
  EXPECT_DOUBLE_EQ(g0.h_bdry, 2.0 / 3.0);
}

TEST(ComputeGap, AbsentClassIsMaximallyGapped) {
  auto ds = support::sinusoid_dataset({10, 10}, 8, 1, 1);
  auto ref = GapReference::build(ds);
  auto only0 = ds.subset([&] {
    std::vector<std::size_t> ix;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].label() == 0) ix.push_back(i);
    return ix;
  }());
  std::vector<std::string> warnings;
  auto prev = set_log_sink([&](const std::string& m) { warnings.push_back(m); });
  auto g = compute_gap_vector(1, ref, only0, support::uniform_report(2, 1.0));
  set_log_sink(prev);
  EXPECT_EQ(g.h_size, 1.0);
  EXPECT_EQ(g.h_dist, 1.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(ComputeGap, ShiftedDistributionRaisesDistGap) {
  auto ds = support::sinusoid_dataset({40}, 16, 1, 4);
  auto ref = GapReference::build(ds);
  std::vector<TimeWindow> shifted;
  for (const auto& w : ds) {
    auto v = w.values();
    for (double& x : v) x = 3 * x + 2;
    shifted.emplace_back(w.T(), w.F(), std::move(v), 0, w.group_key());
  }
  double d = distribution_gap(ref.classes[0], shifted, ref.alpha);
  EXPECT_GT(d, 0.5);
  EXPECT_LE(d, 1.0);
}

TEST(ClassDistribution, SizeOnlyGapsFollowTheBalanceTerm) {
  std::vector<GapVector> g{gap(0, 0.5, 0, 0, 0), gap(1, 0, 0, 0, 0), gap(2, 0.25, 0, 0, 0)};
  auto d = class_distribution(g, {50, 100, 75});
  EXPECT_NEAR(d.lambda, 1.0, 1e-6);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(d.p_cls[c], d.p_bal[c], 1e-6);
  EXPECT_NEAR(d.p_bal[0], 50.0 / 75.0, 1e-12);
}

TEST(ClassDistribution, BalancedCountsFollowTheInformationTerm) {
  std::vector<GapVector> g{gap(0, 0, 0.4, 0.2, 0.1), gap(1, 0, 0.1, 0.1, 0.1)};
  auto d = class_distribution(g, {30, 30});
  EXPECT_EQ(d.lambda, 0.0);
  EXPECT_EQ(d.p_cls, d.p_info);
  EXPECT_NEAR(d.p_info[0], 0.7 / 1.0, 1e-12);
  EXPECT_EQ(d.p_bal, (std::vector<double>{0.5, 0.5}));  // all-equal fallback
}

TEST(ClassDistribution, ImbalancedCountsWithEqualGammas) {
  const std::vector<std::size_t> n{259, 503, 228};
  std::vector<GapVector> g;
  for (std::size_t c = 0; c < 3; ++c) {
    double hs = (503.0 - double(n[c])) / 503.0;
    g.push_back(gap(c, hs, 0, 1.0 - hs, 0));  // gamma = 0.25 for every class
  }
  auto d = class_distribution(g, n);
  EXPECT_NEAR(d.p_bal[0], 244.0 / 519.0, 1e-12);
  EXPECT_EQ(d.p_bal[1], 0.0);
  EXPECT_NEAR(d.p_bal[2], 275.0 / 519.0, 1e-12);
  EXPECT_NEAR(d.p_bal[0], 0.4701, 5e-5);
  EXPECT_NEAR(d.p_bal[2], 0.5299, 5e-5);
  for (double p : d.p_info) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
  // Independent scalar recomputation of the blend.
  double hbar = ((503.0 - 259.0) / 503.0 + 0.0 + (503.0 - 228.0) / 503.0) / 3.0;
  double lambda = hbar / (4 * 0.25 + 1e-8);
  EXPECT_NEAR(d.lambda, lambda, 1e-12);
  EXPECT_NEAR(d.p_cls[1], (1 - lambda) / 3.0, 1e-12);
  EXPECT_NEAR(d.p_cls[0], lambda * 244.0 / 519.0 + (1 - lambda) / 3.0, 1e-12);
}

TEST(GeneratorScores, CollapsesToCapabilityWithoutDemand) {
  auto s = generator_scores(gap(0, 0, 0, 0, 0), {0.2, 0.6, 0.2}, {0.8, 0.4, 0.8});
  EXPECT_EQ(s.mu1, 0.0);
  EXPECT_EQ(s.mu2, 0.0);
  EXPECT_EQ(s.psi, (std::vector<double>{0.2, 0.6, 0.2}));
  EXPECT_NEAR(s.p_gen[1], 0.6, 1e-12);
  auto one = generator_scores(gap(0, 0, 0, 0, 0), {0, 1, 0}, {1, 0, 1});
  EXPECT_EQ(one.p_gen, (std::vector<double>{0, 1, 0}));
  auto none = generator_scores(gap(0, 0, 0, 0, 0), {0, 0}, {1, 1});
  EXPECT_EQ(none.p_gen, (std::vector<double>{0.5, 0.5}));
}

TEST(GeneratorScores, ExplorationDemandLiftsComplementaryGenerator) {
  // E = (h_size + h_dist) / 2 = 1, R = 0.
  auto s = generator_scores(gap(0, 1, 1, 0, 0), {0, 1}, {1, 0});
  EXPECT_DOUBLE_EQ(s.e, 1.0);
  EXPECT_EQ(s.r, 0.0);
  EXPECT_NEAR(s.mu1, 1.0 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(s.psi[0], 1.0, 1e-7);
  EXPECT_NEAR(s.psi[1], 1.0, 1e-15);
  EXPECT_NEAR(s.p_gen[0], 0.5, 1e-7);
  EXPECT_NEAR(s.p_gen[1], 0.5, 1e-7);
  // Without the shared capability term only the complementary generator scores.
  auto pure = generator_scores(gap(0, 1, 1, 0, 0), {0, 1}, {1, 0}, SchedulerConfig{1e-8, 0.0});
  EXPECT_EQ(pure.p_gen, (std::vector<double>{1.0, 0.0}));
}

TEST(Apportion, SpecExamplesAndTies) {
  EXPECT_EQ(apportion(10, {0.5, 0.3, 0.2}), (std::vector<long long>{5, 3, 2}));
  EXPECT_EQ(apportion(0, {0.5, 0.3, 0.2}), (std::vector<long long>{0, 0, 0}));
  EXPECT_EQ(apportion(7, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::vector<long long>{3, 2, 2}));
  EXPECT_EQ(apportion(5, {0.1, 0.45, 0.45}), (std::vector<long long>{1, 2, 2}));
  EXPECT_EQ(apportion(4, {0, 0, 0}), (std::vector<long long>{2, 1, 1}));
  EXPECT_THROW(apportion(-1, {1.0}), ValidationError);
  EXPECT_THROW(apportion(3, {0.5, -0.1}), ValidationError);
}

TEST(Apportion, MatchesBruteForceLargestRemainder) {
  // Oracle: exact rational quotas with integer weights.
  Rng rng = make_rng(31);
  for (int rep = 0; rep < 500; ++rep) {
    std::size_t k = 1 + uniform_index(rng, 6);
    std::vector<long long> w(k);
    long long W = 0;
    for (auto& x : w) W += (x = static_cast<long long>(uniform_index(rng, 20)));
    if (W == 0) continue;
    long long total = static_cast<long long>(uniform_index(rng, 200));
    std::vector<double> p;
    for (auto x : w) p.push_back(double(x) / double(W));
    std::vector<long long> expect(k), rem(k);
    long long given = 0;
    for (std::size_t i = 0; i < k; ++i) {
      expect[i] = total * w[i] / W;
      rem[i] = total * w[i] % W;
      given += expect[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t j = 0; given < total; ++j, ++given) ++expect[order[j]];
    EXPECT_EQ(apportion(total, p), expect) << "rep " << rep;
  }
}

TEST(Scheduling, ConservationPropertyOverRandomCases) {
  Rng rng = make_rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 1500; ++rep) {
    const std::size_t C = 1 + uniform_index(rng, 8), G = 1 + uniform_index(rng, 6);
    std::vector<GapVector> gaps;
    std::vector<std::size_t> counts;
    for (std::size_t c = 0; c < C; ++c) {
      auto pick = [&] { return u(rng) < 0.2 ? 0.0 : u(rng); };
      gaps.push_back(gap(c, pick(), pick(), pick(), pick()));
      counts.push_back(1 + uniform_index(rng, 500));
    }
    std::vector<std::vector<double>> S(G, std::vector<double>(C));
    for (auto& row : S)
      for (auto& v : row) v = u(rng) < 0.1 ? 0.0 : u(rng);
    auto tensor = support::tensor_from_S(std::vector<std::string>(G, "g"), S);
    long long B = static_cast<long long>(uniform_index(rng, 1000));
    auto r = plan_round(gap_index(gaps), counts, tensor, B);
    ASSERT_GE(r.plan.lambda, 0.0);
    ASSERT_LE(r.plan.lambda, 1.0);
    ASSERT_NEAR(sum(r.plan.p_cls), 1.0, 1e-9);
    ASSERT_EQ(sum_ll(r.allocation.per_class), B);
    for (std::size_t c = 0; c < C; ++c) {
      ASSERT_NEAR(sum(r.plan.p_gen[c]), 1.0, 1e-9);
      ASSERT_EQ(r.allocation.per_cell[c].size(), G);
      ASSERT_EQ(sum_ll(r.allocation.per_cell[c]), r.allocation.per_class[c]);
      for (auto n : r.allocation.per_cell[c]) ASSERT_GE(n, 0);
    }
  }
}

TEST(Scheduling, MonotonicityProperties) {
  Rng rng = make_rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t C = 2 + uniform_index(rng, 4);
    std::vector<GapVector> gaps;
    std::vector<std::size_t> counts;
    for (std::size_t c = 0; c < C; ++c) {
      gaps.push_back(gap(c, u(rng), u(rng), u(rng), u(rng)));
      counts.push_back(10 + uniform_index(rng, 100));
    }
    auto base = class_distribution(gaps, counts);
    std::size_t c = uniform_index(rng, C);
    auto raised = gaps;
    raised[c] = gap(c, std::min(1.0, gaps[c].h_size + 0.1), gaps[c].h_dist, gaps[c].h_bdry, gaps[c].h_unc);
    EXPECT_GE(class_distribution(raised, counts).p_info[c] + 1e-12, base.p_info[c]);
    auto fewer = counts;
    fewer[c] = std::max<std::size_t>(1, fewer[c] / 2);
    EXPECT_GE(class_distribution(gaps, fewer).p_bal[c] + 1e-12, base.p_bal[c]);

    // Raising R with E fixed never lowers the share of the highest-S generator.
    const std::size_t G = 2 + uniform_index(rng, 4);
    std::vector<double> S(G), Cc(G);
    for (std::size_t g = 0; g < G; ++g) {
      S[g] = u(rng);
      Cc[g] = 1 - S[g];
    }
    auto best = static_cast<std::size_t>(std::max_element(S.begin(), S.end()) - S.begin());
    double hs = u(rng), hd = u(rng), hb = 0.5 * u(rng), hu = 0.5 * u(rng);
    auto lo = generator_scores(gap(0, hs, hd, hb, hu), S, Cc);
    auto hi = generator_scores(gap(0, hs, hd, hb + 0.3, hu + 0.2), S, Cc);
    EXPECT_GE(hi.p_gen[best] + 1e-12, lo.p_gen[best]);
  }
}

TEST(Scheduling, ZeroGapStillAllocatesAndShapesMatch) {
  std::vector<GapVector> g{gap(0, 0, 0, 0, 0), gap(1, 0, 0, 0, 0), gap(2, 0, 0, 0, 0)};
  auto tensor = support::tensor_from_S({"a", "b", "c", "d"}, {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  auto r = plan_round(gap_index(g), {10, 10, 10}, tensor, 12);
  EXPECT_EQ(r.allocation.per_class, (std::vector<long long>{4, 4, 4}));
  ASSERT_EQ(r.allocation.per_cell.size(), 3u);
  for (const auto& row : r.allocation.per_cell) EXPECT_EQ(row, (std::vector<long long>{1, 1, 1, 1}));
  auto j = r.to_json(0);
  EXPECT_EQ(j["allocation"]["per_cell"].size(), 3u);
  EXPECT_EQ(BudgetAllocation::from_json(j["allocation"]), r.allocation);
}

TEST(Scheduling, GoldenReplayOnSeededFixture) {
  // Seeded dataset, copy generators at two noise levels, logistic classifier.
  auto ds = support::sinusoid_dataset({30, 18, 12}, 24, 1, 2024);
  auto [train, val] = split_stratified(ds, 0.3, 1);
  std::vector<GeneratorPtr> gens{std::make_shared<CopyGenerator>("copy", 0.0),
                                 std::make_shared<CopyGenerator>("copy_noisy", 0.5)};
  StatsConfig stats;
  stats.probe_count = 40;
  stats.n_perm = 3;
  auto tensor = build_capability_tensor(train, gens, stats, 11);
  auto model = LogisticClassifier().train(train, 3);
  auto ref = GapReference::build(train);
  auto schedule = schedule_round(ref, train, evaluate(*model, val), tensor, 50);
  std::ifstream in(support::fixture_path("golden_allocation.json"));
  ASSERT_TRUE(in.good()) << "missing golden file; current allocation: " << schedule.allocation.to_json().dump();
  auto golden = BudgetAllocation::from_json(nlohmann::json::parse(in));
  EXPECT_EQ(schedule.allocation, golden) << schedule.to_json(0).dump(2);
}
