#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace fes;

namespace {

DomainProfile noisy_profile() {
  DomainProfile p;
  p.name = "noisy";
  p.way_min = 5;
  p.way_max = 5;
  p.shot_min = 3;
  p.shot_max = 6;
  p.margin = 2.0;
  p.noise_sigma = 1.0;
  p.relevant_extractors = {{1, {0.2, 1.0, 1.0, {}}}};
  return p;
}

StackerConfig config(Method m) {
  StackerConfig c;
  c.method = m;
  c.conv_size = 3;
  c.stride = 2;
  return c;
}

}  // namespace

TEST(Ablation, NamesRoundTrip) {
  for (auto m : kAllAblations) EXPECT_EQ(parse_ablation(to_string(m)), m);
  EXPECT_THROW(parse_ablation("middle"), Error);
}

TEST(Ablation, TrainingSetsForEachMode) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 11);
  const auto full = training_set_for(b, AblationMode::Full);
  const auto first = training_set_for(b, AblationMode::FirstSnapshotOnly);
  EXPECT_EQ(select_snapshot(full.logits, 0), first.logits);
  EXPECT_EQ(select_snapshot(full.logits, 6), training_set_for(b, AblationMode::LastSnapshotOnly).logits);
  const auto nocv = training_set_for(b, AblationMode::NoCV);
  EXPECT_EQ(nocv.logits, b.support_full_logits);
  EXPECT_TRUE(nocv.used_full_support);
  EXPECT_EQ(training_set_for(b, AblationMode::NoCVLast).logits, select_snapshot(b.support_full_logits, 6));
}

TEST(TrainStacker, SingleSnapshotModesHaveKParameters) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 12);
  for (auto method : {Method::Fes, Method::ConFes, Method::ReFes}) {
    auto cfg = config(method);
    cfg.grid = {{0.1, 0.0}, {0.1, 0.0}};
    for (auto mode : {AblationMode::FirstSnapshotOnly, AblationMode::NoCVLast}) {
      const auto s = train_stacker(b, cfg, mode);
      EXPECT_EQ(s.effective.rows(), 4u);
      EXPECT_EQ(s.effective.cols(), 1u);
      EXPECT_EQ(predict(s, b.query_logits).labels.size(), b.query_labels.size());
    }
  }
}

TEST(TrainStacker, StrictOneShotUsesFullSupport) {
  auto p = noisy_profile();
  p.shot_min = p.shot_max = 1;
  const auto b = sample_episode(p, 3, 7, 13);
  ASSERT_TRUE(is_strict_one_shot(b.fold_assignment));
  for (auto method : {Method::Fes, Method::ConFes, Method::ReFes}) {
    const auto s = train_stacker(b, config(method));
    EXPECT_TRUE(s.used_full_support);
    EXPECT_EQ(s.trained_classes, 5u);
    EXPECT_EQ(s.fold_trainings, 0u);
    EXPECT_EQ(s.lambda1, 0.0);
    EXPECT_EQ(s.lambda2, 0.0);
  }
}

TEST(TrainStacker, Deterministic) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 14);
  for (auto method : {Method::Fes, Method::ConFes, Method::ReFes}) {
    const auto a = train_stacker(b, config(method));
    const auto c = train_stacker(b, config(method));
    EXPECT_EQ(a.params, c.params);
    EXPECT_EQ(a.effective, c.effective);
    EXPECT_EQ(a.lambda1, c.lambda1);
  }
}

TEST(TrainStacker, ConFesExpandedKernelMatchesRaw) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 15);
  const auto s = train_stacker(b, config(Method::ConFes));
  EXPECT_EQ(s.params.size(), 4u * (3 + 3));
  EXPECT_EQ(expand_confes(s.raw_confes()), s.effective);
}

TEST(TrainStacker, UnregularisedReFesMatchesRidgeFreeFes) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 16);
  auto fes_cfg = config(Method::Fes);
  fes_cfg.ridge_strength = 0.0;
  auto refes_cfg = config(Method::ReFes);
  refes_cfg.grid = {{0.0}, {0.0}};
  const auto a = train_stacker(b, fes_cfg);
  const auto r = train_stacker(b, refes_cfg);
  EXPECT_NEAR(a.final_loss, r.final_loss, 1e-8);
}

TEST(GridSearch, SingletonGrid) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 17);
  const auto gs = grid_search_refes(b, {{0.0}, {0.0}}, config(Method::ReFes));
  EXPECT_EQ(gs.lambda1, 0.0);
  EXPECT_EQ(gs.lambda2, 0.0);
  EXPECT_EQ(gs.fold_trainings, 2u);
}

TEST(GridSearch, PaperGridRuns128FoldTrainings) {
  const auto b = sample_episode(noisy_profile(), 4, 7, 18);
  const auto gs = grid_search_refes(b, LambdaGrid::standard(), config(Method::ReFes));
  EXPECT_EQ(gs.fold_trainings, 128u);
  EXPECT_EQ(gs.correct.size(), 64u);
  const auto s = train_stacker(b, config(Method::ReFes));
  EXPECT_EQ(s.fold_trainings, 128u);
  EXPECT_EQ(s.lambda1, gs.lambda1);
  EXPECT_EQ(s.lambda2, gs.lambda2);
}

TEST(GridSearch, TiesPreferLargerStrengths) {
  // Unordered pools; huge strengths tie at the same combined count.
  const std::vector<double> pool{1e2, 0.0, 1e3, 1e4};
  const auto b = sample_episode(noisy_profile(), 2, 3, 19);
  const auto gs = grid_search_refes(b, {pool, pool}, config(Method::ReFes));
  const auto best = *std::max_element(gs.correct.begin(), gs.correct.end());
  std::pair<double, double> expect{-1.0, -1.0};
  for (std::size_t i = 0; i < gs.correct.size(); ++i)
    if (gs.correct[i] == best) expect = std::max(expect, std::make_pair(pool[i / pool.size()], pool[i % pool.size()]));
  EXPECT_EQ(gs.lambda1, expect.first);
  EXPECT_EQ(gs.lambda2, expect.second);
}

TEST(GridSearch, SparsityUsuallySelectedWithNoisyExtractors) {
  auto p = noisy_profile();
  p.shot_min = 5;
  p.shot_max = 10;
  int positive = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto b = sample_episode(p, 8, 7, derive_seed(99, s));
    positive += grid_search_refes(b, LambdaGrid::standard(), config(Method::ReFes)).lambda1 > 0.0;
  }
  EXPECT_GT(positive, 25);
}

TEST(TrainStacker, MassConcentratesOnInformativeExtractor) {
  auto p = noisy_profile();
  p.shot_min = 10;
  p.shot_max = 20;
  p.relevant_extractors = {{3, {0.2, 1.0, 1.0, {}}}};
  p.irrelevant_snapshot_correlation = 0.9;
  const auto b = sample_episode(p, 6, 7, 20);
  const auto s = train_stacker(b, config(Method::Fes));
  double row = 0, total = 0;
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 7; ++j) {
      total += s.effective(k, j);
      if (k == 3) row += s.effective(k, j);
    }
  EXPECT_GT(row / total, 0.6);
}
