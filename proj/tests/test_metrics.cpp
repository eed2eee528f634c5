#include <regex>

#include <gtest/gtest.h>

#include "mic/metrics.hpp"
#include "mic/rng.hpp"
#include "test_support.hpp"

using namespace mic;

namespace {

TrainingHistory sample_history(int n) {
  TrainingHistory h;
  for (int e = 1; e <= n; ++e)
    h.rows.push_back({e, 1e-3 * std::pow(0.5, (e - 1) / 10), 1.0 / e, 0.5 + 0.02 * e, 1.2 / e,
                      0.4 + 0.02 * e});
  return h;
}

std::size_t count(const std::string& s, const std::string& sub) {
  std::size_t n = 0;
  for (auto p = s.find(sub); p != std::string::npos; p = s.find(sub, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Confusion, MatchesTallyOracle) {
  RngStream rng(5, stream_id(StreamPurpose::Test, 500));
  std::vector<int> y(1000), p(1000);
  std::vector<std::vector<std::uint64_t>> tally(3, std::vector<std::uint64_t>(3, 0));
  for (std::size_t i = 0; i < 1000; ++i) {
    y[i] = int(rng.below(3));
    p[i] = int(rng.below(3));
    ++tally[std::size_t(y[i])][std::size_t(p[i])];
  }
  const auto cm = confusion(y, p, 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(cm(a, b), tally[a][b]);
  EXPECT_EQ(cm.total(), 1000u);
  std::uint64_t agree = 0;
  for (std::size_t i = 0; i < 1000; ++i) agree += y[i] == p[i];
  EXPECT_DOUBLE_EQ(accuracy(cm), double(agree) / 1000.0);
}

TEST(Confusion, BinaryAccuracyUsesTrueNegatives) {
  const auto cm = ConfusionMatrix::binary(40, 40, 10, 10);
  EXPECT_EQ(cm.tp(), 40u);
  EXPECT_EQ(cm.tn(), 40u);
  EXPECT_EQ(cm.fp(), 10u);
  EXPECT_EQ(cm.fn(), 10u);
  EXPECT_DOUBLE_EQ(accuracy(cm), 0.8);
}

TEST(Confusion, AccuracyIsExactForSmallCounts) {
  EXPECT_EQ(accuracy(ConfusionMatrix::binary(3, 5, 1, 1)), 0.8);
}

TEST(Confusion, PerfectAndMerge) {
  std::vector<int> y{0, 1, 2, 2};
  auto cm = confusion(y, y, 3);
  EXPECT_EQ(accuracy(cm), 1.0);
  cm.merge(confusion(std::vector<int>{0}, std::vector<int>{1}, 3));
  EXPECT_EQ(cm.total(), 5u);
  EXPECT_EQ(cm(0, 1), 1u);
}

TEST(Confusion, Errors) {
  EXPECT_THROW(confusion(std::vector<int>{0, 1}, std::vector<int>{0}, 2), std::invalid_argument);
  EXPECT_THROW(confusion(std::vector<int>{3}, std::vector<int>{0}, 3), std::out_of_range);
  EXPECT_THROW(accuracy(ConfusionMatrix(3)), std::invalid_argument);
}

TEST(History, CsvHeaderAndFormat) {
  TrainingHistory h;
  h.rows.push_back({1, 0.001, 1.0986123, 0.25, 1.5, 1.0 / 3.0});
  EXPECT_EQ(history_to_csv(h),
            "epoch,lr,train_loss,train_acc,val_loss,val_acc\n"
            "1,0.001000,1.098612,0.250000,1.500000,0.333333\n");
}

TEST(History, RoundTripTwentyFourRows) {
  const auto h = sample_history(24);
  const auto csv = history_to_csv(h);
  const auto back = history_from_csv(csv);
  ASSERT_EQ(back.size(), 24u);
  for (std::size_t i = 0; i < 24; ++i) {
    EXPECT_EQ(back.rows[i].epoch, h.rows[i].epoch);
    EXPECT_NEAR(back.rows[i].lr, h.rows[i].lr, 5e-7);
    EXPECT_NEAR(back.rows[i].train_loss, h.rows[i].train_loss, 5e-7);
    EXPECT_NEAR(back.rows[i].val_acc, h.rows[i].val_acc, 5e-7);
  }
  EXPECT_EQ(history_to_csv(back), csv);
}

TEST(History, FileRoundTrip) {
  test::TempDir dir("hist");
  const auto h = sample_history(3);
  write_history_csv(h, dir / "history.csv");
  EXPECT_EQ(test::slurp(dir / "history.csv"), history_to_csv(h));
  EXPECT_EQ(history_to_csv(read_history_csv(dir / "history.csv")), history_to_csv(h));
}

TEST(History, MalformedLineReportsLineNumber) {
  const std::string text = std::string(kHistoryHeader) + "\n1,0.1,0.2,0.3,0.4,0.5\n2,0.1,oops\n";
  try {
    history_from_csv(text);
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(history_from_csv("epoch,loss\n"), std::runtime_error);
  EXPECT_THROW(history_from_csv(std::string(kHistoryHeader) + "\n1,2,3,4,5,6,7\n"), std::runtime_error);
}

TEST(Curves, TwoPanelsFourPolylines) {
  const auto svg = render_curves_svg(sample_history(12));
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count(svg, "<polyline"), 4u);
  EXPECT_EQ(count(svg, "class=\"train\""), 2u);
  EXPECT_EQ(count(svg, "class=\"val\""), 2u);
  EXPECT_NE(svg.find("loss"), std::string::npos);
  EXPECT_NE(svg.find("accuracy"), std::string::npos);
}

TEST(Curves, DeterministicAndFileMatches) {
  test::TempDir dir("svg");
  const auto h = sample_history(5);
  render_curves_svg(h, dir / "curves.svg");
  EXPECT_EQ(test::slurp(dir / "curves.svg"), render_curves_svg(h));
  EXPECT_EQ(render_curves_svg(h), render_curves_svg(h));
}

TEST(Curves, HigherValuesPlotHigher) {
  // SVG y grows downward: the decreasing train loss must have increasing y.
  const auto svg = render_curves_svg(sample_history(6));
  const std::regex pts("<polyline class=\"train\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, pts));
  std::istringstream in(m[1].str());
  std::vector<double> ys;
  std::string pair;
  while (in >> pair) ys.push_back(std::stod(pair.substr(pair.find(',') + 1)));
  ASSERT_EQ(ys.size(), 6u);
  for (std::size_t i = 1; i < ys.size(); ++i) EXPECT_GT(ys[i], ys[i - 1]);
}

TEST(Curves, EmptyHistoryRejected) {
  EXPECT_THROW(render_curves_svg(TrainingHistory{}), std::invalid_argument);
}
