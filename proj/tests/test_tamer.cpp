#include <gtest/gtest.h>

#include <cmath>

#include "cftamer/evaluation.hpp"
#include "cftamer/hmodel.hpp"
#include "cftamer/replay.hpp"
#include "cftamer/trainer.hpp"
#include "oracles.hpp"

using namespace cftamer;

namespace {

Vector random_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  return v;
}

HModel small_model(Rng& rng, Eigen::Index in = 5, int actions = 3) {
  return make_hmodel(in, actions, ModelDims{{8, 6}, 4}, rng);
}

FeedbackEvent plain(const Vector& s, int a, int f) {
  FeedbackEvent e;
  e.f = f;
  e.state = s;
  e.action = a;
  return e;
}

FeedbackEvent with_cfa(const Vector& s, int a, int a_cf) {
  FeedbackEvent e = plain(s, a, -1);
  e.cf = Counterfactual{+1, CfKind::action, std::nullopt, a_cf};
  return e;
}

// Random biases keep relu units away from exact zero so that finite
// differences do not straddle kinks.
void jitter_biases(HModel& m, Rng& rng) {
  auto j = [&](Network& n) {
    for (auto& l : n.layers) l.biases = random_vector(l.out_size(), rng) * 0.1;
  };
  j(m.trunk);
  for (auto& h : m.heads) j(h);
}

Trainer<Environment>::EnvFactory grid_factory() {
  return [](std::uint64_t s) { return Environment::reset(EnvId::gridworld, s); };
}

TrainerConfig short_config() {
  TrainerConfig c;
  c.episodes = 3;
  c.max_steps = 40;
  c.checkpoint_every = 20;
  c.horizon = 200;
  c.seed = 7;
  c.dims = {{16, 16}, 8};
  return c;
}

}  // namespace

TEST(HModel, FreshModelOutputsAreSmall) {
  Rng rng(1);
  const HModel m = make_hmodel(196, 3, {}, rng);
  for (std::uint64_t s = 0; s < 20; ++s)
    for (double h : h_values(m, encode_grid(gridworld_reset(s)))) EXPECT_LT(std::abs(h), 1.0);
}

TEST(HModel, ForwardMatchesReferenceAndEmbedShape) {
  Rng rng(2);
  const HModel m = small_model(rng);
  for (int k = 0; k < 10; ++k) {
    const Vector s = random_vector(5, rng);
    const auto h = h_values(m, s);
    ASSERT_EQ(h.size(), 3u);
    for (int a = 0; a < 3; ++a) {
      const auto [ref_h, ref_e] = oracle::h_and_embedding(m, s, a);
      EXPECT_NEAR(h[static_cast<std::size_t>(a)], ref_h, 1e-12);
      const Vector e = embed(m, s, a);
      ASSERT_EQ(e.size(), 4);
      EXPECT_EQ(e, embed(m, s, a));
    }
    EXPECT_NE(embed(m, s, 0), embed(m, s, 1));
  }
}

TEST(HModel, SelectActionStrictArgmaxAndFairTies) {
  Rng rng(3);
  EXPECT_EQ(argmax_random_tie({0.1, 0.9, -0.3}, rng), 1);
  EXPECT_EQ(argmax_random_tie({0.2, 1.8, -0.6}, rng), 1);
  int ones = 0;
  for (int k = 0; k < 1000; ++k) ones += argmax_random_tie({0.5, 0.5}, rng);
  EXPECT_NEAR(ones / 1000.0, 0.5, 0.05);
}

TEST(Contrastive, AnchorCases) {
  Vector u(2), v(2);
  u << 1, 0;
  v << 0, 1;
  EXPECT_EQ(contrastive_loss(u, v).loss, 0.0);
  u << 2, 1;
  const auto same = contrastive_loss(u, u);
  EXPECT_NEAR(same.loss, 1.0, 1e-15);
  EXPECT_LT((same.d_fact + same.d_cf).norm(), 1e-15);
  v << -2, -1;
  const auto anti = contrastive_loss(u, v);
  EXPECT_EQ(anti.loss, 0.0);
  EXPECT_TRUE(anti.d_fact.isZero(0.0));
}

TEST(FullLoss, WithoutCounterfactualIsSingleSquare) {
  Rng rng(4);
  const HModel m = small_model(rng);
  const Vector s = random_vector(5, rng);
  const auto r = full_loss(m, plain(s, 2, -1));
  const double h = h_values(m, s)[2];
  EXPECT_NEAR(r.loss(), (h + 1) * (h + 1), 1e-12);
  EXPECT_EQ(r.terms.counterfactual, 0.0);
  EXPECT_EQ(r.terms.contrastive, 0.0);
  EXPECT_TRUE(r.grads.heads[0].is_zero());
  EXPECT_FALSE(r.grads.head_touched[0]);
  EXPECT_TRUE(r.grads.head_touched[2]);
}

TEST(FullLoss, ValueMatchesReferenceOnRandomEvents) {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const HModel m = small_model(rng);
    FeedbackEvent e = with_cfa(random_vector(5, rng), 0, 1 + rng.index(2));
    e.contrastive_enabled = k % 2 == 0;
    EXPECT_NEAR(full_loss(m, e).loss(), oracle::event_loss(m, e), 1e-12);
  }
}

TEST(FullLoss, VanishesWhenEveryTermIsSatisfied) {
  // Heads hand-built so that H(s,0) = -1, H(s,1) = +1 and the embeddings are
  // orthogonal.
  HModel m;
  m.trunk.layers.push_back({Matrix::Identity(2, 2), Vector::Zero(2), Activation::relu});
  for (int a = 0; a < 2; ++a) {
    Network h;
    Matrix w = Matrix::Zero(2, 2);
    w(a, a) = 1.0;
    h.layers.push_back({w, Vector::Zero(2), Activation::relu});
    Matrix out(1, 2);
    out << (a == 0 ? -1.0 : 0.0), (a == 1 ? 1.0 : 0.0);
    h.layers.push_back({out, Vector::Zero(1), Activation::linear});
    m.heads.push_back(h);
  }
  Vector s(2);
  s << 1, 1;
  const auto r = full_loss(m, with_cfa(s, 0, 1));
  EXPECT_EQ(r.loss(), 0.0);
}

TEST(FullLoss, GradientMatchesFiniteDifferencesOnRandomConfigurations) {
  Rng rng(6);
  double worst = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index in = 2 + rng.index(5);
    const int actions = 2 + rng.index(2);
    HModel m = make_hmodel(in, actions, ModelDims{{static_cast<Eigen::Index>(3 + rng.index(5))}, 2 + rng.index(4)}, rng);
    jitter_biases(m, rng);
    const Vector s = random_vector(in, rng);
    FeedbackEvent e;
    switch (trial % 3) {
      case 0: e = plain(s, rng.index(actions), rng.bernoulli(0.5) ? 1 : -1); break;
      case 1: e = with_cfa(s, 0, 1 + rng.index(static_cast<std::size_t>(actions - 1))); break;
      default:
        e = plain(s, rng.index(actions), +1);
        e.cf = Counterfactual{-1, CfKind::state, random_vector(in, rng), std::nullopt};
    }
    const auto analytic = oracle::flatten(full_loss(m, e).grads);
    const auto numeric = oracle::fd_gradient(m, [&](const HModel& mm) { return oracle::event_loss(mm, e); });
    worst = std::max(worst, oracle::relative_error(analytic, numeric));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(ApplyFeedback, PositiveFeedbackRaisesH) {
  Rng rng(7);
  HModel m = small_model(rng);
  const Vector s = random_vector(5, rng);
  const double before = h_values(m, s)[1];
  auto g = ModelGradients::zeros_like(m);
  accumulate_event_gradients(m, plain(s, 1, +1), 1.0, g);
  apply_gradients(m, g);
  EXPECT_GT(h_values(m, s)[1], before);
}

TEST(ApplyFeedback, UpwardCfaRaisesFoilAndLowersFact) {
  // Both start at exactly zero: zeroing the output layers makes every head 0.
  Rng rng(8);
  HModel m = small_model(rng);
  jitter_biases(m, rng);
  const Vector s = random_vector(5, rng);
  for (auto& h : m.heads) h.layers.back().weights *= 1e-3;
  const auto before = h_values(m, s);
  auto g = ModelGradients::zeros_like(m);
  FeedbackEvent e = with_cfa(s, 0, 2);
  e.contrastive_enabled = false;
  accumulate_event_gradients(m, e, 1.0, g);
  apply_gradients(m, g);
  const auto after = h_values(m, s);
  EXPECT_GT(after[2], before[2]);
  EXPECT_LT(after[0], before[0]);
}

TEST(ApplyFeedback, ConvergesOnSingleSample) {
  Rng rng(9);
  HModel m = small_model(rng);
  const Vector s = random_vector(5, rng);
  for (int k = 0; k < 3000; ++k) {
    auto g = ModelGradients::zeros_like(m);
    accumulate_event_gradients(m, plain(s, 1, +1), 1.0, g);
    apply_gradients(m, g);
  }
  EXPECT_NEAR(h_values(m, s)[1], 1.0, 0.05);
}

TEST(ApplyFeedback, MalformedEventsRejected) {
  Rng rng(10);
  HModel m = small_model(rng);
  const Vector s = random_vector(5, rng);
  auto g = ModelGradients::zeros_like(m);
  EXPECT_THROW(accumulate_event_gradients(m, plain(s, 1, 0), 1.0, g), MalformedEventError);
  EXPECT_THROW(accumulate_event_gradients(m, plain(s, 3, 1), 1.0, g), MalformedEventError);
  FeedbackEvent same_sign = plain(s, 0, -1);
  same_sign.cf = Counterfactual{-1, CfKind::action, std::nullopt, 1};
  EXPECT_THROW(accumulate_event_gradients(m, same_sign, 1.0, g), MalformedEventError);
  FeedbackEvent wrong_payload = plain(s, 0, -1);
  wrong_payload.cf = Counterfactual{+1, CfKind::state, std::nullopt, 1};
  EXPECT_THROW(accumulate_event_gradients(m, wrong_payload, 1.0, g), MalformedEventError);
}

TEST(Replay, FifoEvictionAndSizes) {
  ReplayBuffer b(3);
  Rng rng(1);
  for (int k = 0; k < 5; ++k) {
    b.push(plain(Vector::Constant(1, k), 0, 1));
    EXPECT_EQ(b.size(), static_cast<std::size_t>(std::min(k + 1, 3)));
  }
  EXPECT_EQ(b[0].state[0], 2.0);
  EXPECT_EQ(b[2].state[0], 4.0);
  EXPECT_THROW(ReplayBuffer(0), std::invalid_argument);
  EXPECT_THROW(ReplayBuffer(2).sample_indices(1, rng), std::logic_error);
}

TEST(Replay, ConsistentBufferIsFitted) {
  Rng rng(11);
  HModel m = make_hmodel(5, 3, ModelDims{}, rng);
  ReplayBuffer b(10);
  for (int k = 0; k < 10; ++k) b.push(plain(random_vector(5, rng), k % 3, k % 2 ? 1 : -1));
  for (int it = 0; it < 500; ++it) {
    auto g = ModelGradients::zeros_like(m);
    const auto idx = b.sample_indices(16, rng);
    for (auto i : idx) accumulate_event_gradients(m, b[i], 1.0 / 16, g);
    apply_gradients(m, g);
  }
  double mse = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double h = h_values(m, b[i].state)[static_cast<std::size_t>(b[i].action)];
    mse += (h - b[i].f) * (h - b[i].f) / 10.0;
  }
  EXPECT_LT(mse, 0.05);
}

TEST(Trainer, NoFeedbackLeavesModelUnchanged) {
  const auto cfg = short_config();
  Trainer<Environment> reference(cfg, grid_factory());
  const HModel initial = reference.model();
  const auto r = run_training<Environment>(cfg, grid_factory(),
                                           [](const Observation&, const HiddenState&, int) {
                                             return std::optional<FeedbackEvent>();
                                           });
  EXPECT_TRUE(r.model == initial);
  EXPECT_FALSE(r.log.aborted);
  EXPECT_TRUE(r.log.events.empty());
}

TEST(Trainer, CheckpointGridAndFrozenFill) {
  auto cfg = short_config();
  const auto r = run_training<Environment>(
      cfg, grid_factory(), [](const Observation&, const HiddenState&, int) { return std::optional<FeedbackEvent>(); },
      [](const HModel&) { return 0.25; });
  ASSERT_EQ(r.log.checkpoints.size(), 11u);
  for (std::size_t i = 0; i < r.log.checkpoints.size(); ++i)
    EXPECT_EQ(r.log.checkpoints[i].env_steps, static_cast<int>(20 * i));
  EXPECT_EQ(r.log.episodes_completed, 3);
  EXPECT_LE(r.log.total_steps, 3 * cfg.max_steps);
}

TEST(Trainer, HorizonStopsTrainingEarly) {
  auto cfg = short_config();
  cfg.episodes = 100;
  cfg.horizon = 60;
  const auto r = run_training<Environment>(
      cfg, grid_factory(), [](const Observation&, const HiddenState&, int) { return std::optional<FeedbackEvent>(); });
  EXPECT_EQ(r.log.total_steps, 60);
  ASSERT_EQ(r.log.checkpoints.size(), 4u);
  EXPECT_EQ(r.log.checkpoints.back().env_steps, 60);
}

TEST(Trainer, DeterministicGivenSeed) {
  const auto cfg = short_config();
  auto src = [] {
    return [n = 0](const Observation& s, const HiddenState&, int a) mutable -> std::optional<FeedbackEvent> {
      ++n;
      if (n % 3 == 0) return std::nullopt;
      return plain(s, a, n % 2 ? 1 : -1);
    };
  };
  const auto eval = [](const HModel& m) { return evaluate_model(m, EnvId::gridworld, {1000, 1001}, Norms{0, 1}); };
  const auto a = run_training<Environment>(cfg, grid_factory(), src(), eval);
  const auto b = run_training<Environment>(cfg, grid_factory(), src(), eval);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.log, b.log);
  EXPECT_FALSE(a.log.events.empty());
}

TEST(Trainer, ProtocolMisuseThrows) {
  Trainer<Environment> t(short_config(), grid_factory());
  EXPECT_THROW(t.resolve(std::nullopt), std::logic_error);
  t.advance();
  EXPECT_THROW(t.advance(), std::logic_error);
  t.resolve(std::nullopt);
  EXPECT_NO_THROW(t.advance());
}

TEST(Trainer, BufferGrowsByOnePerFeedback) {
  Trainer<Environment> t(short_config(), grid_factory());
  for (int k = 0; k < 5; ++k) {
    t.advance();
    const auto& p = *t.pending();
    t.resolve(plain(p.state, p.action, 1));
    EXPECT_EQ(t.buffer().size(), static_cast<std::size_t>(k + 1));
  }
}

TEST(Trainer, SnapshotRestoreContinuesIdentically) {
  const auto cfg = short_config();
  Trainer<Environment> a(cfg, grid_factory());
  auto feed = [](Trainer<Environment>& t, int n) {
    std::vector<int> actions;
    for (int k = 0; k < n && !t.finished(); ++k) {
      if (!t.pending()) t.advance();
      if (t.finished()) break;
      const auto& p = *t.pending();
      actions.push_back(p.action);
      t.resolve(plain(p.state, p.action, p.action == 2 ? 1 : -1));
    }
    return actions;
  };
  feed(a, 25);
  Trainer<Environment> b(cfg, grid_factory());
  b.restore(a.snapshot());
  EXPECT_EQ(feed(a, 10), feed(b, 10));
  EXPECT_TRUE(a.model() == b.model());
}
