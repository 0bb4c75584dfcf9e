#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace igada;

namespace {

std::vector<TraceRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_decision_trace(in);
}

nlohmann::json trace_config() {
  return {{"dataset", {{"format", "ucr"}, {"train", "ucr/Trace/Trace_TRAIN.tsv"}, {"test", "ucr/Trace/Trace_TEST.tsv"}}}};
}

}  // namespace

TEST(EnergyLedger, CountsTimesEnergyPerSampling) {
  EXPECT_NEAR(EnergyLedger::from_counts(129, 0, 3.73).saved_energy_mwh, 481.17, 1e-9);
  EXPECT_NEAR(EnergyLedger::from_counts(153, 0, 3.73).saved_energy_mwh, 570.69, 1e-9);
  auto l = EnergyLedger::from_counts(7, 11, 2.5);
  EXPECT_DOUBLE_EQ(l.extra_energy_mwh, 27.5);
  EXPECT_EQ(l.to_json()["saved_samplings"], 7);
}

TEST(EnergyReplay, SpanArithmetic) {
  // 480 min of class 0: 120 base samplings become 60. 60 min of class 2: 15 become 30.
  auto l = energy_replay(parse("minute,class\n0,0\n240,0\n480,2\n540,1\n"));
  EXPECT_EQ(l.saved_samplings, 60);
  EXPECT_EQ(l.extra_samplings, 15);
  EXPECT_NEAR(l.saved_energy_mwh, 60 * 3.73, 1e-9);
  EXPECT_NEAR(l.class_hours[0], 8.0, 1e-12);
  EXPECT_NEAR(l.class_hours[2], 1.0, 1e-12);
  EXPECT_NEAR(l.class_hours[1], 4.0 / 60.0, 1e-12);  // last record holds one base interval
  // Partial intervals are floored per span: 10 min of class 0 gives 2 - 1.
  EXPECT_EQ(energy_replay(parse("0,0\n10,1\n")).saved_samplings, 1);
}

TEST(EnergyReplay, EmptyTraceIsAllZero) {
  auto l = energy_replay(parse(""));
  EXPECT_EQ(l.saved_samplings, 0);
  EXPECT_EQ(l.extra_samplings, 0);
  EXPECT_EQ(l.saved_energy_mwh, 0.0);
  EXPECT_EQ(l.class_hours, (std::vector<double>{0, 0, 0}));
}

TEST(EnergyReplay, LinearOverSpanAlignedCuts) {
  auto a = parse("0,0\n40,2\n60,1\n");
  auto b = parse("64,0\n100,2\n130,1\n");
  std::vector<TraceRecord> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  auto la = energy_replay(a), lb = energy_replay(b), lab = energy_replay(ab);
  EXPECT_EQ(lab.saved_samplings, la.saved_samplings + lb.saved_samplings);
  EXPECT_EQ(lab.extra_samplings, la.extra_samplings + lb.extra_samplings);
  EXPECT_NEAR(lab.saved_energy_mwh, la.saved_energy_mwh + lb.saved_energy_mwh, 1e-9);
}

TEST(EnergyReplay, TimestampsAndCustomIntervals) {
  auto iso = parse("timestamp,class\n2024-03-01 00:00,0\n2024-03-01T01:00:00,1\n2024-03-01 02:30,2\n2024-03-01 03:00,1\n");
  ASSERT_EQ(iso.size(), 4u);
  EXPECT_NEAR(iso[1].minute - iso[0].minute, 60.0, 1e-9);
  auto l = energy_replay(iso);
  EXPECT_EQ(l.saved_samplings, 15 - 7);
  EXPECT_EQ(l.extra_samplings, 15 - 7);
  // Day rollover goes through the calendar.
  auto roll = parse("2024-02-28 23:50,1\n2024-02-29 00:10,1\n");
  EXPECT_NEAR(roll[1].minute - roll[0].minute, 20.0, 1e-9);
  EnergyReplayOptions opt;
  opt.base_interval_min = 5;
  opt.low_interval_min = 10;
  opt.energy_per_sampling_mwh = 1.0;
  EXPECT_EQ(energy_replay(parse("0,0\n100,1\n"), opt).saved_samplings, 10);
  opt.high_interval_min = 0;
  EXPECT_THROW(energy_replay({}, opt), ValidationError);
}

TEST(EnergyReplay, MalformedTracesAreRejected) {
  EXPECT_THROW(parse("0,0\n5,1\n5,2\n"), ParseError);
  EXPECT_THROW(parse("10,0\n5,1\n"), ParseError);
  EXPECT_THROW(parse("0,3\n"), ParseError);
  EXPECT_THROW(parse("0,0\nlater,1\n"), ParseError);
  EXPECT_THROW(parse("0,0,1\n"), ParseError);
  EXPECT_THROW(parse("0,1\n2024-13-01 00:00,1\n"), ParseError);
  try {
    parse("t,c\n0,0\n1,1\nx,2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_THROW(energy_replay_file("/nonexistent/trace.csv"), ValidationError);
}

TEST(RunConfig, DefaultHyperparameters) {
  auto cfg = parse_run_config(trace_config(), IGADA_DATA_DIR);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.loop.B_min, 30);
  EXPECT_DOUBLE_EQ(cfg.loop.kappa, 1.6);
  EXPECT_DOUBLE_EQ(cfg.loop.rho_r, 0.9);
  EXPECT_EQ(cfg.loop.s, 3);
  EXPECT_EQ(cfg.loop.r_max, 3);
  EXPECT_EQ(cfg.loop.eta, (std::array<double, 5>{0.5, 0.3, 0.1, 0.1, 0.2}));
  EXPECT_FALSE(cfg.b_max_set);
  EXPECT_EQ(effective_loop_config(cfg, 770, 1).B_max, 385);
  EXPECT_EQ(effective_loop_config(cfg, 20, 1).B_max, 30);  // never below B_min
  auto gens = make_generators(cfg);
  ASSERT_EQ(gens.size(), 4u);
  EXPECT_EQ(gens[0]->id(), "gmx");
  EXPECT_EQ(gens[0]->pairing_mode(), PairingMode::independent);
  EXPECT_EQ(make_classifier(cfg.classifier)->id(), "logistic");
  auto splits = load_splits(cfg, 3);
  EXPECT_EQ(splits.train.size() + splits.val.size(), 100u);
  EXPECT_EQ(splits.test.size(), 100u);
}

TEST(RunConfig, ExplicitSectionsAreRead) {
  auto j = trace_config();
  j["loop"] = {{"B_max", 120}, {"s", 2}, {"mu0", 0.5}, {"eta", {1, 0, 0, 0, 0}}};
  j["stats"] = {{"k", 4}, {"probe_count", 50}};
  j["generators"] = {{{"type", "rim"}, {"depth", 3}}, {{"type", "copy"}, {"id", "c2"}, {"noise", 0.1}}};
  j["classifier"] = {{"type", "mlp"}, {"hidden", {8}}, {"epochs", 10}};
  auto cfg = parse_run_config(j, IGADA_DATA_DIR);
  EXPECT_TRUE(cfg.b_max_set);
  EXPECT_EQ(effective_loop_config(cfg, 770, 1).B_max, 120);
  EXPECT_EQ(cfg.loop.s, 2);
  EXPECT_DOUBLE_EQ(cfg.loop.mu0, 0.5);
  EXPECT_EQ(cfg.stats.k, 4u);
  auto gens = make_generators(cfg);
  EXPECT_EQ(gens[1]->id(), "c2");
  EXPECT_EQ(make_classifier(cfg.classifier)->id(), "mlp");
}

TEST(RunConfig, ErrorsNameTheOffendingPiece) {
  auto expect_error = [](nlohmann::json j, const std::string& needle) {
    try {
      auto cfg = parse_run_config(j, IGADA_DATA_DIR);
      cfg.validate();
      make_generators(cfg);
      make_classifier(cfg.classifier);
      ADD_FAILURE() << "no error for " << j.dump();
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto j = trace_config();
  j["generators"] = {{{"type", "imagentime"}}};
  expect_error(j, "imagentime");
  j = trace_config();
  j["loop"] = {{"rho", 0.9}};
  expect_error(j, "rho");
  j = trace_config();
  j["dataset"]["train"] = "missing.tsv";
  expect_error(j, "missing.tsv");
  j = trace_config();
  j["loop"] = {{"rho_r", 1.5}};
  expect_error(j, "rho_r");
  j = trace_config();
  j["generators"] = {{{"type", "rim"}}, {{"type", "rim"}}};
  expect_error(j, "duplicate");
  j = trace_config();
  j["classifier"] = {{"type", "cnn"}};
  expect_error(j, "cnn");
  j = trace_config();
  j["stats"] = {{"k", "three"}};
  expect_error(j, "'k'");
  expect_error(nlohmann::json::object(), "dataset");
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ValidationError);
}

TEST(RunConfig, RelativePathsResolveAgainstTheConfigFile) {
  auto dir = std::filesystem::temp_directory_path() / "igada_cfg_test";
  std::filesystem::create_directories(dir);
  auto rel = std::filesystem::relative(std::filesystem::path(IGADA_DATA_DIR), dir);
  auto j = trace_config();
  j["dataset"]["train"] = (rel / "ucr/Trace/Trace_TRAIN.tsv").string();
  j["dataset"]["test"] = (rel / "ucr/Trace/Trace_TEST.tsv").string();
  std::ofstream(dir / "cfg.json") << j.dump();
  auto cfg = load_run_config((dir / "cfg.json").string());
  EXPECT_NO_THROW(cfg.validate());
  std::filesystem::remove_all(dir);
}
