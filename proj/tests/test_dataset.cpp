#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace igada;

TEST(Seeds, DeriveSeedIsDeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
  EXPECT_NE(derive_seed(7, 1), derive_seed(8, 1));
  EXPECT_NE(hash_string("rim"), hash_string("tsw"));
  // FNV-1a reference value for the empty string and "a".
  EXPECT_EQ(hash_string(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hash_string("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Seeds, LogSinkCapturesWarnings) {
  std::vector<std::string> seen;
  auto prev = set_log_sink([&](const std::string& m) { seen.push_back(m); });
  log_warning("hello");
  set_log_sink(prev);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0], "hello");
}

TEST(TimeWindow, RejectsBadShapes) {
  EXPECT_THROW(TimeWindow(0, 1, {}, 0, "g"), ValidationError);
  EXPECT_THROW(TimeWindow(2, 2, {1, 2, 3}, 0, "g"), ValidationError);
  EXPECT_THROW(TimeWindow(1, 1, {std::nan("")}, 0, "g"), ValidationError);
  TimeWindow w(2, 2, {1, 2, 3, 4}, 1, "g");
  EXPECT_EQ(w.at(1, 0), 3);
  EXPECT_TRUE(w.provenance().is_real());
}

TEST(LabeledDataset, LabelOutOfRangeIsRejected) {
  std::vector<TimeWindow> ws{TimeWindow(1, 1, {0.0}, 2, "a")};
  EXPECT_THROW(LabeledDataset(1, 1, 2, ws), ValidationError);
}

TEST(WindowsCsv, LongAndFlatLayoutsAgree) {
  std::istringstream flat("group,label,v_0_0,v_0_1,v_1_0,v_1_1\nu1#0,1,1,2,3,4\nu2#0,0,5,6,7,8\n");
  std::istringstream lng("group,label,t,f0,f1\nu1#0,1,0,1,2\nu1#0,1,1,3,4\nu2#0,0,0,5,6\nu2#0,0,1,7,8\n");
  auto a = parse_windows_csv(flat, 2, 2);
  auto b = parse_windows_csv(lng, 2, 2);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].group_key(), "u1");
  EXPECT_EQ(a[0].label(), 1u);
  EXPECT_EQ(a[1].at(1, 1), 8);
}

TEST(WindowsCsv, LabelsAreRemappedContiguously) {
  std::istringstream in("group,label,v_0_0\na,5,1\nb,9,2\nc,5,3\n");
  auto ds = parse_windows_csv(in, 1, 1);
  EXPECT_EQ(ds.C(), 2u);
  EXPECT_EQ(ds[0].label(), 0u);
  EXPECT_EQ(ds[1].label(), 1u);
}

TEST(WindowsCsv, ErrorsCarryLineNumbers) {
  std::istringstream in("group,label,v_0_0\na,0,1\nb,0,oops\n");
  try {
    parse_windows_csv(in, 1, 1);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream truncated("group,label,t,f0\na,0,0,1\n");
  EXPECT_THROW(parse_windows_csv(truncated, 2, 1), ParseError);
  std::istringstream bad_header("id,label,v\n");
  EXPECT_THROW(parse_windows_csv(bad_header, 1, 1), ParseError);
  std::istringstream fixed_c("group,label,v_0_0\na,3,1\n");
  EXPECT_THROW(parse_windows_csv(fixed_c, 1, 1, 2), ParseError);
}

TEST(WindowsCsv, ProvenanceRoundTrip) {
  auto ds = support::sinusoid_dataset({3, 3}, 4, 2, 11);
  auto gen = CopyGenerator("copy", 0.1).generate({1, 2, 5, 99}, ds.windows_of_class(1));
  auto both = ds.with_appended(gen);
  std::ostringstream os;
  write_windows_csv(os, both, true);
  std::istringstream in(os.str());
  auto back = parse_windows_csv(in, 4, 2, 2);
  EXPECT_EQ(back, both);
  EXPECT_EQ(back.generated_count(), 2u);
  EXPECT_EQ(back[6].provenance().generator_id, "copy");
  EXPECT_EQ(back[6].provenance().round, 5);
}

TEST(Splits, GroupSplitKeepsGroupsWhole) {
  std::vector<TimeWindow> ws;
  for (int g = 0; g < 40; ++g)
    for (int k = 0; k < 1 + g % 3; ++k)
      ws.emplace_back(1, 1, std::vector<double>{double(g)}, static_cast<std::size_t>(g % 2), "grp" + std::to_string(g));
  LabeledDataset ds(1, 1, 2, ws);
  auto s = split_by_group(ds, {0.6, 0.2, 0.2, 3});
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), ds.size());
  auto a = s.train.group_keys(), b = s.val.group_keys(), c = s.test.group_keys();
  for (const auto& k : a) {
    EXPECT_FALSE(b.count(k));
    EXPECT_FALSE(c.count(k));
  }
  for (const auto& k : b) EXPECT_FALSE(c.count(k));
  EXPECT_NEAR(double(s.train.size()) / double(ds.size()), 0.6, 0.08);
  EXPECT_FALSE(s.val.empty());
  EXPECT_FALSE(s.test.empty());
  // Same seed, same split.
  auto again = split_by_group(ds, {0.6, 0.2, 0.2, 3});
  EXPECT_EQ(again.train, s.train);
}

TEST(Splits, FewGroupsStillFillEverySplit) {
  std::vector<TimeWindow> ws;
  for (int g = 0; g < 3; ++g) ws.emplace_back(1, 1, std::vector<double>{double(g)}, 0, "k" + std::to_string(g));
  auto s = split_by_group(LabeledDataset(1, 1, 1, ws), {0.8, 0.1, 0.1, 0});
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  std::vector<TimeWindow> two(ws.begin(), ws.begin() + 2);
  EXPECT_THROW(split_by_group(LabeledDataset(1, 1, 1, two), {0.8, 0.1, 0.1, 0}), ValidationError);
}

TEST(Splits, StratifiedSplitKeepsEveryClassInBoth) {
  auto ds = support::sinusoid_dataset({10, 5, 2}, 4, 1, 2);
  auto [tr, va] = split_stratified(ds, 0.2, 5);
  EXPECT_EQ(tr.size() + va.size(), ds.size());
  auto ct = tr.class_counts(), cv = va.class_counts();
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_GE(ct[c], 1u);
    EXPECT_GE(cv[c], 1u);
  }
  EXPECT_EQ(cv[0], 2u);
}

TEST(Ucr, TraceFilesLoadWithSharedLabels) {
  auto [train, test] = ingest_ucr_tsv(std::string(IGADA_DATA_DIR) + "/ucr/Trace/Trace_TRAIN.tsv",
                                      std::string(IGADA_DATA_DIR) + "/ucr/Trace/Trace_TEST.tsv");
  EXPECT_EQ(train.size(), 100u);
  EXPECT_EQ(test.size(), 100u);
  EXPECT_EQ(train.T(), 275u);
  EXPECT_EQ(train.C(), 4u);
  EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>{26, 21, 22, 31}));
  EXPECT_EQ(test.class_counts(), (std::vector<std::size_t>{24, 29, 28, 19}));
}

TEST(Ucr, MalformedRowsAreRejected) {
  std::istringstream in("1\t0.5\t0.6\n2\t0.1\n");
  EXPECT_THROW(parse_ucr_rows(in), ParseError);
  std::istringstream nonnum("1\tx\t0.6\n");
  EXPECT_THROW(parse_ucr_rows(nonnum), ParseError);
}
