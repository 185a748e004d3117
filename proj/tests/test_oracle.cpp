#include <gtest/gtest.h>

#include <set>

#include "cftamer/oracle.hpp"

using namespace cftamer;

namespace {

const StateBank& grid_bank() {
  static const StateBank bank = build_state_bank(EnvId::gridworld, ExpertPolicy{}, 200, 4);
  return bank;
}

struct Draw {
  Observation s;
  HiddenState h;
};

Draw grid_state(std::uint64_t seed) {
  const auto env = Environment::reset(EnvId::gridworld, seed);
  return {env.observation(), env.hidden()};
}

}  // namespace

TEST(StateBank, GridBucketsNonEmptyAndConsistent) {
  const auto& bank = grid_bank();
  ASSERT_EQ(bank.buckets.size(), 3u);
  ExpertPolicy expert;
  for (std::size_t a = 0; a < bank.buckets.size(); ++a) {
    EXPECT_FALSE(bank.buckets[a].empty()) << "bucket " << a;
    for (const auto& e : bank.buckets[a]) {
      EXPECT_EQ(expert(e.hidden), static_cast<int>(a));
      EXPECT_EQ(e.observation, encode_observation(e.hidden));
    }
  }
}

TEST(StateBank, DeterministicAndDeduplicated) {
  const auto a = build_state_bank(EnvId::gridworld, ExpertPolicy{}, 30, 9);
  const auto b = build_state_bank(EnvId::gridworld, ExpertPolicy{}, 30, 9);
  ASSERT_EQ(a.total(), b.total());
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < a.total(); ++i) {
    EXPECT_EQ(a.nth(i).observation, b.nth(i).observation);
    const auto& o = a.nth(i).observation;
    EXPECT_TRUE(seen.insert({o.data(), o.data() + o.size()}).second);
  }
}

TEST(StateBank, PhysicsBucketsFilled) {
  for (EnvId id : {EnvId::cartpole, EnvId::mountaincar}) {
    const auto bank = build_state_bank(id, ExpertPolicy{}, 20, 1);
    if (id == EnvId::cartpole) {
      for (const auto& b : bank.buckets) EXPECT_FALSE(b.empty());
    }
    EXPECT_GT(bank.total(), 0u);
  }
}

TEST(Oracle, ZeroFrequencyNeverSpeaks) {
  Rng rng(1);
  const auto d = grid_state(3);
  OracleConfig cfg{0.0, 1.0, Variant::cfa, 0};
  for (int k = 0; k < 200; ++k) EXPECT_FALSE(gather_feedback(cfg, {}, grid_bank(), d.s, d.h, 0, rng));
}

TEST(Oracle, MatchingExpertIsPositiveWithoutCounterfactual) {
  Rng rng(2);
  ExpertPolicy expert;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = grid_state(seed);
    const int a = expert(d.h);
    for (Variant v : {Variant::vanilla, Variant::cfa, Variant::cfs, Variant::random_extra}) {
      const auto e = gather_feedback({1.0, 1.0, v, 0}, expert, grid_bank(), d.s, d.h, a, rng);
      ASSERT_TRUE(e);
      EXPECT_EQ(e->f, 1);
      EXPECT_FALSE(e->cf);
    }
  }
}

TEST(Oracle, FrequencyHalfGivesHalfTheCalls) {
  Rng rng(3);
  const auto d = grid_state(5);
  int present = 0;
  for (int k = 0; k < 10000; ++k)
    present += gather_feedback({0.5, 1.0, Variant::vanilla, 0}, {}, grid_bank(), d.s, d.h, 0, rng).has_value();
  EXPECT_NEAR(present / 10000.0, 0.5, 0.02);
}

TEST(Oracle, QualityLowersAgreementWithExpert) {
  Rng rng(4);
  ExpertPolicy expert;
  const auto d = grid_state(6);
  const int a = expert(d.h);
  int positive = 0;
  for (int k = 0; k < 10000; ++k)
    positive += gather_feedback({1.0, 0.75, Variant::vanilla, 0}, expert, grid_bank(), d.s, d.h, a, rng)->f == 1;
  // Agreement = q + (1 - q) / |A|.
  EXPECT_NEAR(positive / 10000.0, 0.75 + 0.25 / 3.0, 0.02);
}

TEST(Oracle, CfaNamesPreferredAction) {
  Rng rng(5);
  ExpertPolicy expert;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = grid_state(seed);
    const int a_star = expert(d.h);
    const int wrong = (a_star + 1) % 3;
    const auto e = gather_feedback({1.0, 1.0, Variant::cfa, 0}, expert, grid_bank(), d.s, d.h, wrong, rng);
    ASSERT_TRUE(e && e->cf);
    EXPECT_EQ(e->f, -1);
    EXPECT_EQ(e->cf->f_cf, 1);
    EXPECT_EQ(e->cf->kind, CfKind::action);
    EXPECT_EQ(*e->cf->a_cf, a_star);
    EXPECT_TRUE(e->contrastive_enabled);
  }
}

TEST(Oracle, CfaOnTwoActionEnvUsesComplement) {
  Rng rng(6);
  ExpertPolicy expert;
  const auto bank = build_state_bank(EnvId::cartpole, expert, 5, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto env = Environment::reset(EnvId::cartpole, seed);
    const int a_star = expert(env.hidden());
    const auto e =
        gather_feedback({1.0, 1.0, Variant::cfa, 0}, expert, bank, env.observation(), env.hidden(), 1 - a_star, rng);
    ASSERT_TRUE(e && e->cf);
    EXPECT_EQ(*e->cf->a_cf, a_star);
  }
}

TEST(Oracle, CfsStatesPreferTheTakenAction) {
  Rng rng(7);
  ExpertPolicy expert;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto d = grid_state(seed);
    const int wrong = (expert(d.h) + 2) % 3;
    const auto dec = oracle_decide({1.0, 1.0, Variant::cfs, 0}, expert, grid_bank(), d.s, d.h, wrong, rng);
    ASSERT_TRUE(dec.event && dec.event->cf && dec.cf_source);
    EXPECT_EQ(dec.event->cf->kind, CfKind::state);
    EXPECT_EQ(expert(dec.cf_source->hidden), wrong);
    EXPECT_EQ(dec.event->cf_action(), wrong);
    EXPECT_EQ(*dec.event->cf->s_cf, dec.cf_source->observation);
  }
}

TEST(Oracle, DownwardVariantsAttachToPositiveFeedback) {
  Rng rng(8);
  ExpertPolicy expert;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = grid_state(seed);
    const int a_star = expert(d.h);
    const auto ca = gather_feedback({1.0, 1.0, Variant::cfa_down, 0}, expert, grid_bank(), d.s, d.h, a_star, rng);
    ASSERT_TRUE(ca && ca->cf);
    EXPECT_EQ(ca->f, 1);
    EXPECT_EQ(ca->cf->f_cf, -1);
    EXPECT_NE(*ca->cf->a_cf, a_star);
    const auto dec = oracle_decide({1.0, 1.0, Variant::cfs_down, 0}, expert, grid_bank(), d.s, d.h, a_star, rng);
    ASSERT_TRUE(dec.event && dec.event->cf && dec.cf_source);
    EXPECT_EQ(dec.event->cf->f_cf, -1);
    EXPECT_NE(expert(dec.cf_source->hidden), a_star);
    const auto wrong = gather_feedback({1.0, 1.0, Variant::cfa_down, 0}, expert, grid_bank(), d.s, d.h, (a_star + 1) % 3, rng);
    EXPECT_FALSE(wrong->cf);
  }
}

TEST(Oracle, RandomExtraDisablesContrastive) {
  Rng rng(9);
  ExpertPolicy expert;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto d = grid_state(seed);
    const auto e =
        gather_feedback({1.0, 1.0, Variant::random_extra, 0}, expert, grid_bank(), d.s, d.h, (expert(d.h) + 1) % 3, rng);
    ASSERT_TRUE(e && e->cf);
    EXPECT_FALSE(e->contrastive_enabled);
    EXPECT_EQ(e->cf->kind, CfKind::sample);
    EXPECT_EQ(e->cf->f_cf, 1);
  }
}

TEST(Oracle, StatefulSourceIsSeeded) {
  const auto d = grid_state(2);
  Oracle a({0.7, 0.8, Variant::cfa, 42}, grid_bank());
  Oracle b({0.7, 0.8, Variant::cfa, 42}, grid_bank());
  for (int k = 0; k < 100; ++k) {
    const auto x = a(d.s, d.h, k % 3);
    const auto y = b(d.s, d.h, k % 3);
    ASSERT_EQ(x.has_value(), y.has_value());
    if (x) {
      EXPECT_EQ(x->f, y->f);
    }
  }
  EXPECT_THROW(Oracle({1.5, 1.0, Variant::cfa, 0}, grid_bank()), std::invalid_argument);
}
