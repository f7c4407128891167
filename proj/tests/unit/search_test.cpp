#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cobenefit/search.hpp"
#include "fixtures.hpp"

using namespace cobenefit;

namespace {

/// Deterministic score: one unit per dimension whose value lies outside the
/// table space, plus seed-keyed noise well below that unit.
double table_score(const HyperParams& h, std::uint64_t seed) {
  const SearchSpace table = pruned_search_space();
  double score = 1.0;
  for (const auto& d : table.dims) {
    const double v = get_field(h, d.name);
    if (std::find(d.values.begin(), d.values.end(), v) == d.values.end()) score += 1.0;
  }
  nn::Rng rng(seed);
  return score + 0.01 * rng.uniform();
}

std::string log_of(const std::vector<TrialRecord>& trials) {
  std::string out;
  for (const auto& t : trials) out += trial_log_row(t);
  return out;
}

}  // namespace

TEST(Space, TableCardinality) {
  EXPECT_EQ(pruned_search_space().cardinality(), 384u);
  EXPECT_EQ(full_search_space().dims.size(), 15u);
  EXPECT_EQ(full_search_space(true).dims.size(), 16u);
}

TEST(RandomSearch, RecordsOnePerTrialInsideSpace) {
  const SearchSpace full = full_search_space();
  const auto trials = random_search(full, 400, HyperParams{}, 7, [](const HyperParams&, std::uint64_t) { return 1.0; });
  ASSERT_EQ(trials.size(), 400u);
  for (const auto& t : trials) EXPECT_TRUE(full.contains(t.hyper));
}

TEST(RandomSearch, SameSeedSameSample) {
  const auto a = sample_trials(full_search_space(), 1, HyperParams{}, 3);
  const auto b = sample_trials(full_search_space(), 1, HyperParams{}, 3);
  EXPECT_EQ(a[0].hyper, b[0].hyper);
  EXPECT_EQ(a[0].seed, b[0].seed);
}

TEST(RandomSearch, SingletonSpaceGivesIdenticalTrials) {
  SearchSpace s = pruned_search_space();
  for (auto& d : s.dims) d.values.resize(1);
  const auto trials = sample_trials(s, 20, HyperParams{}, 1);
  for (const auto& t : trials) EXPECT_EQ(t.hyper, trials[0].hyper);
}

TEST(RandomSearch, FailedTrialsAreRecordedNotFatal) {
  auto eval = [](const HyperParams& h, std::uint64_t) -> double {
    if (h.conv_layers >= 4) throw ShapeError("conv block 4: underflow");
    return 1.0;
  };
  const auto trials = random_search(full_search_space(), 50, HyperParams{}, 2, eval);
  std::size_t failed = 0;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::kFailed) {
      ++failed;
      EXPECT_TRUE(std::isinf(t.score));
      EXPECT_NE(trial_log_row(t).find("random:failed"), std::string::npos);
    }
  }
  EXPECT_GT(failed, 0u);
  EXPECT_LT(failed, 50u);
}

TEST(RandomSearch, IndependentOfWorkerCount) {
  const auto one = random_search(full_search_space(), 60, HyperParams{}, 5, table_score, 1);
  const auto four = random_search(full_search_space(), 60, HyperParams{}, 5, table_score, 4);
  EXPECT_EQ(log_of(one), log_of(four));
}

TEST(Prune, EqualScoresPruneNothing) {
  const SearchSpace full = full_search_space();
  const auto trials = random_search(full, 300, HyperParams{}, 1, [](const HyperParams&, std::uint64_t) { return 2.0; });
  const SearchSpace out = prune_space(trials, full);
  EXPECT_EQ(space_to_text(out), space_to_text(full));
}

TEST(Prune, DominantValueSurvivesAlone) {
  SearchSpace s{{{"filters", {20, 50, 80, 100}}, {"fc_layers", {1, 2, 3}}}};
  auto eval = [](const HyperParams& h, std::uint64_t) { return h.filters == 50 ? 1.0 : 10.0; };
  // Balanced design: every combination once, so the other dimension's means tie.
  const auto trials = grid_search(s, HyperParams{}, 4, eval).trials;
  const SearchSpace out = prune_space(trials, s);
  EXPECT_EQ(out.find("filters")->values, (std::vector<double>{50}));
  EXPECT_EQ(out.find("fc_layers")->values.size(), 3u);
}

TEST(Prune, AllWorseKeepsBest) {
  SearchSpace s{{{"filters", {20, 50}}}};
  std::vector<TrialRecord> trials(4);
  const double scores[] = {1.0, 1.1, 5.0, 9.0};
  const double values[] = {20, 20, 50, 50};
  for (int i = 0; i < 4; ++i) {
    trials[i].hyper.filters = static_cast<int>(values[i]);
    trials[i].score = scores[i];
  }
  const auto out = prune_space(trials, s, {0.0, 0.0, 0.0});
  EXPECT_EQ(out.find("filters")->values, (std::vector<double>{20}));
}

TEST(Prune, FullSpaceToTableSpace) {
  const auto trials = random_search(full_search_space(), 4000, HyperParams{}, 13, table_score);
  const SearchSpace out = prune_space(trials, full_search_space());
  EXPECT_EQ(space_to_text(out), space_to_text(pruned_search_space()));
  EXPECT_EQ(out.cardinality(), 384u);
}

TEST(Grid, VisitsEveryCombinationOnce) {
  const SearchSpace table = pruned_search_space();
  const auto combos = enumerate_grid(table, HyperParams{});
  ASSERT_EQ(combos.size(), 384u);
  std::set<std::string> seen;
  for (const auto& h : combos) {
    EXPECT_TRUE(table.contains(h));
    seen.insert(hyper_to_json(h).dump());
  }
  EXPECT_EQ(seen.size(), 384u);
  std::atomic<int> calls{0};
  const auto r = grid_search(table, HyperParams{}, 1, [&](const HyperParams&, std::uint64_t) {
    ++calls;
    return 1.0;
  }, 3);
  EXPECT_EQ(calls.load(), 384);
  EXPECT_EQ(r.trials.size(), 384u);
}

TEST(Grid, SingleCombinationWins) {
  SearchSpace s{{{"filters", {50}}, {"fc_layers", {2}}}};
  const auto r = grid_search(s, HyperParams{}, 1, [](const HyperParams&, std::uint64_t) { return 3.0; });
  EXPECT_EQ(r.best.filters, 50);
  EXPECT_EQ(r.best.fc_layers, 2);
}

TEST(Grid, TiesGoToFirstCombination) {
  SearchSpace s{{{"filters", {20, 50, 80}}, {"fc_layers", {1, 2}}}};
  auto eval = [](const HyperParams& h, std::uint64_t) { return h.filters == 20 && h.fc_layers == 1 ? 2.0 : 1.0; };
  const auto r = grid_search(s, HyperParams{}, 1, eval, 4);
  EXPECT_EQ(r.best.filters, 20);
  EXPECT_EQ(r.best.fc_layers, 2);
}

TEST(Grid, WinnerIndependentOfWorkerCount) {
  const auto a = grid_search(pruned_search_space(), HyperParams{}, 9, table_score, 1);
  const auto b = grid_search(pruned_search_space(), HyperParams{}, 9, table_score, 4);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(log_of(a.leaderboard), log_of(b.leaderboard));
}

TEST(TrialLog, RowFormat) {
  TrialRecord t;
  t.id = 3;
  t.seed = 42;
  t.score = 0.5;
  t.phase = "grid";
  const std::string row = trial_log_row(t);
  EXPECT_EQ(row.rfind("3,42,\"{", 0), 0u);
  EXPECT_NE(row.find(",0.5,grid:ok\n"), std::string::npos);
  EXPECT_EQ(trial_log_header(), "trial_id,seed,hyperparams_json,val_wmse,status\n");
}
