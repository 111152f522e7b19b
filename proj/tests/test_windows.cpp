#include <vector>

#include "doctest.h"
#include "lw/common.hpp"
#include "lw/windows.hpp"
#include "oracles.hpp"

using namespace lw;

TEST_CASE("window plan covers long files with a fixed stride") {
  CHECK(window_plan(960, 512, 64) ==
        std::vector<WindowRange>{{1, 512}, {449, 960}});
  CHECK(window_plan(1200, 512, 64) ==
        std::vector<WindowRange>{{1, 512}, {449, 960}, {897, 1200}});
  CHECK(window_plan(512, 512, 64) == std::vector<WindowRange>{{1, 512}});
  CHECK(window_plan(5, 512, 64) == std::vector<WindowRange>{{1, 5}});
  CHECK(window_plan(1, 1, 0) == std::vector<WindowRange>{{1, 1}});
  CHECK(window_plan(10, 4, 2) ==
        std::vector<WindowRange>{{1, 4}, {3, 6}, {5, 8}, {7, 10}});
  CHECK(window_plan(11, 4, 2) ==
        std::vector<WindowRange>{{1, 4}, {3, 6}, {5, 8}, {7, 10}, {9, 11}});
}

TEST_CASE("window plan rejects degenerate shapes") {
  CHECK_THROWS_AS(window_plan(0, 4, 0), ValidationError);
  CHECK_THROWS_AS(window_plan(4, 0, 0), ValidationError);
  CHECK_THROWS_AS(window_plan(4, 4, -1), ValidationError);
  CHECK_THROWS_AS(window_plan(4, 4, 4), ValidationError);
}

TEST_CASE("window plan properties hold for random shapes") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int window = 1 + static_cast<int>(rand_below(rng, 40));
    const int overlap = static_cast<int>(rand_below(rng, static_cast<std::size_t>(window)));
    const int n = 1 + static_cast<int>(rand_below(rng, 400));
    const auto plan = window_plan(n, window, overlap);
    const int stride = window - overlap;

    REQUIRE(!plan.empty());
    CHECK(plan.front().start == 1);
    CHECK(plan.back().end == n);
    std::vector<int> cover(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < plan.size(); ++i) {
      CHECK(plan[i].start == 1 + static_cast<int>(i) * stride);
      CHECK(plan[i].end >= plan[i].start);
      if (i + 1 < plan.size())
        CHECK(plan[i].end == plan[i].start + window - 1);
      else
        CHECK(plan[i].end <= plan[i].start + window - 1);
      for (int l = plan[i].start; l <= plan[i].end; ++l)
        cover[static_cast<std::size_t>(l - 1)] += 1;
    }
    for (int c : cover) CHECK(c >= 1);
  }
}

namespace {

Vocabulary toy_vocab() {
  Corpus c;
  SourceFile f;
  f.path = "v.src";
  f.lines = {"ab ab ab"};
  f.labels = {0};
  c.files = {f};
  // tokens: <pad> <unk> ' ' a b ab
  return train_bpe(c, 6);
}

}  // namespace

TEST_CASE("file encoding lays lines into padded token grids") {
  const Vocabulary v = toy_vocab();
  SourceFile f;
  f.path = "x.src";
  f.lines = {"ab", "a", "b ab", "", "ab ab ab ab"};
  f.labels = {1, 0, 0, 1, 0};

  const auto windows = encode_file(v, f, 3, 3, 1);
  REQUIRE(windows.size() == 2);

  const FileWindow& w0 = windows[0];
  CHECK(w0.path == "x.src");
  CHECK(w0.start_line == 1);
  CHECK(w0.window_lines == 3);
  CHECK(w0.line_tokens == 3);
  CHECK(w0.token_ids == std::vector<std::int32_t>{5, 0, 0, 3, 0, 0, 4, 2, 5});
  CHECK(w0.token_mask == std::vector<std::uint8_t>{1, 0, 0, 1, 0, 0, 1, 1, 1});
  CHECK(w0.line_mask == std::vector<std::uint8_t>{1, 1, 1});
  CHECK(w0.line_labels == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(w0.real_lines() == 3);

  // second window starts at line 3; line 4 is empty but still a real line,
  // and line 5 is truncated to the token budget
  const FileWindow& w1 = windows[1];
  CHECK(w1.start_line == 3);
  CHECK(w1.token_ids == std::vector<std::int32_t>{4, 2, 5, 0, 0, 0, 5, 2, 5});
  CHECK(w1.token_mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 1, 1, 1});
  CHECK(w1.line_mask == std::vector<std::uint8_t>{1, 1, 1});
  CHECK(w1.line_labels == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("file shorter than one window pads the tail rows") {
  const Vocabulary v = toy_vocab();
  SourceFile f;
  f.path = "s.src";
  f.lines = {"ab", "b"};
  f.labels = {0, 1};
  const auto windows = encode_file(v, f, 4, 2, 0);
  REQUIRE(windows.size() == 1);
  CHECK(windows[0].line_mask == std::vector<std::uint8_t>{1, 1, 0, 0});
  CHECK(windows[0].line_labels == std::vector<std::uint8_t>{0, 1, 0, 0});
  CHECK(windows[0].token_ids == std::vector<std::int32_t>{5, 0, 4, 0, 0, 0, 0, 0});
  CHECK(windows[0].real_lines() == 2);
}

TEST_CASE("file encoding rejects bad inputs") {
  const Vocabulary v = toy_vocab();
  SourceFile f;
  f.path = "bad.src";
  f.lines = {"ab"};
  f.labels = {0, 1};
  CHECK_THROWS_AS(encode_file(v, f, 4, 2, 0), ValidationError);
  f.labels = {0};
  CHECK_THROWS_AS(encode_file(v, f, 4, 0, 0), ValidationError);
}

TEST_CASE("score merge averages overlapping windows") {
  const std::vector<WindowRange> plan = {{1, 4}, {3, 6}};
  const std::vector<std::pair<int, std::vector<double>>> scores = {
      {1, {1, 2, 3, 4}}, {3, {10, 20, 30, 40}}};
  const auto merged = merge_window_scores(scores, plan, 6);
  CHECK(merged == std::vector<double>{1, 2, 6.5, 12, 30, 40});
}

TEST_CASE("score merge matches a per-line coverage oracle on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int window = 2 + static_cast<int>(rand_below(rng, 20));
    const int overlap = static_cast<int>(rand_below(rng, static_cast<std::size_t>(window)));
    const int n = 1 + static_cast<int>(rand_below(rng, 200));
    const auto plan = window_plan(n, window, overlap);
    std::vector<std::pair<int, std::vector<double>>> scores;
    for (const WindowRange& r : plan) {
      std::vector<double> s(static_cast<std::size_t>(window));
      for (double& x : s) x = uniform01(rng);
      scores.emplace_back(r.start, std::move(s));
    }
    const auto merged = merge_window_scores(scores, plan, n);
    const auto expected = oracle::merge_by_coverage(scores, plan, n);
    REQUIRE(merged.size() == expected.size());
    for (std::size_t i = 0; i < merged.size(); ++i)
      CHECK(merged[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("encoded windows merge back to exactly one score per line") {
  const Vocabulary v = toy_vocab();
  SourceFile f;
  f.path = "r.src";
  f.lines.assign(23, "ab b a");
  f.labels.assign(23, 0);
  for (std::size_t i = 0; i < f.labels.size(); i += 3) f.labels[i] = 1;

  const int window = 6, tokens = 4, overlap = 2;
  const auto windows = encode_file(v, f, window, tokens, overlap);
  const auto plan = window_plan(23, window, overlap);
  REQUIRE(windows.size() == plan.size());

  // score every real row with its own label; the merged result must
  // reproduce the labels exactly since all covering windows agree
  std::vector<std::pair<int, std::vector<double>>> scores;
  for (const FileWindow& w : windows) {
    std::vector<double> s(static_cast<std::size_t>(window), -1.0);
    for (int row = 0; row < window; ++row)
      if (w.line_mask[static_cast<std::size_t>(row)])
        s[static_cast<std::size_t>(row)] = w.line_labels[static_cast<std::size_t>(row)];
    scores.emplace_back(w.start_line, std::move(s));
  }
  const auto merged = merge_window_scores(scores, plan, 23);
  for (std::size_t i = 0; i < merged.size(); ++i)
    CHECK(merged[i] == static_cast<double>(f.labels[i]));
}

TEST_CASE("score merge rejects inconsistent inputs") {
  const std::vector<WindowRange> plan = {{1, 4}, {3, 6}};
  std::vector<std::pair<int, std::vector<double>>> scores = {
      {1, {1, 2, 3, 4}}, {3, {1, 2, 3, 4}}};
  CHECK_THROWS_AS(merge_window_scores({scores[0]}, plan, 6), ValidationError);
  scores[1].first = 2;
  CHECK_THROWS_AS(merge_window_scores(scores, plan, 6), ValidationError);
  scores[1].first = 3;
  scores[1].second = {1, 2};
  CHECK_THROWS_AS(merge_window_scores(scores, plan, 6), ValidationError);
  CHECK_THROWS_AS(
      merge_window_scores({{2, {1, 2}}}, std::vector<WindowRange>{{2, 3}}, 3),
      ValidationError);
}
