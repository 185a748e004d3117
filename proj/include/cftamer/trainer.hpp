#pragma once

// The interactive TAMER loop with optional counterfactual feedback. Per
// iteration: gather feedback for the previous (state, action), update H
// immediately, run a replay minibatch on schedule, then act greedily on H.
// Environmental reward never reaches an update.

#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cftamer/env.hpp"
#include "cftamer/feedback.hpp"
#include "cftamer/hmodel.hpp"
#include "cftamer/replay.hpp"
#include "cftamer/rng.hpp"

namespace cftamer {

template <class E>
concept EpisodicEnvironment = requires(E env, const E cenv, int a) {
  typename E::Hidden;
  { cenv.observation() } -> std::convertible_to<Observation>;
  { cenv.hidden() } -> std::convertible_to<const typename E::Hidden&>;
  { cenv.done() } -> std::convertible_to<bool>;
  { cenv.action_count() } -> std::convertible_to<int>;
  { env.step(a) } -> std::same_as<StepResult>;
};

struct TrainerConfig {
  Variant variant = Variant::vanilla;
  int episodes = 300;
  int max_steps = 256;
  std::size_t buffer_capacity = 1000;
  int minibatch = 16;
  int replay_interval = 4;
  std::uint64_t seed = 0;
  ModelDims dims;
  AdamConfig adam;
  // Checkpoint grid {0, every, 2*every, ..., horizon}. Training stops at the
  // horizon even if episodes remain; if episodes run out first, the frozen
  // final model is scored at the remaining grid points.
  int checkpoint_every = 500;
  int horizon = 10000;

  void validate() const {
    if (episodes <= 0 || max_steps <= 0 || buffer_capacity == 0 || minibatch <= 0 ||
        replay_interval <= 0 || checkpoint_every <= 0 || horizon <= 0)
      throw std::invalid_argument("trainer config: all counts must be positive");
    if (horizon % checkpoint_every != 0)
      throw std::invalid_argument("trainer config: horizon must be a multiple of checkpoint_every");
    if (dims.trunk_hidden.empty() || dims.embed_dim <= 0)
      throw std::invalid_argument("trainer config: bad network dims");
  }
};

struct Checkpoint {
  int env_steps = 0;
  double score = 0.0;
  int feedback_count = 0;
  int cf_count = 0;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Compact per-event record kept for the whole run.
struct EventRecord {
  int env_step = 0;
  int f = 0;
  bool has_cf = false;
  CfKind kind = CfKind::action;
  int f_cf = 0;
  bool contrastive = false;
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct TrainingLog {
  std::vector<EventRecord> events;
  std::vector<Checkpoint> checkpoints;
  int total_steps = 0;
  int episodes_completed = 0;
  bool aborted = false;
  std::string error;
  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

using Evaluator = std::function<double(const HModel&)>;

template <EpisodicEnvironment Env>
class Trainer {
 public:
  using Hidden = typename Env::Hidden;
  using EnvFactory = std::function<Env(std::uint64_t seed)>;

  struct Pending {
    Observation state;
    Hidden hidden;
    int action = 0;
  };

  Trainer(TrainerConfig cfg, EnvFactory factory, Evaluator evaluator = {})
      : cfg_(std::move(cfg)),
        factory_(std::move(factory)),
        evaluator_(std::move(evaluator)),
        buffer_(cfg_.buffer_capacity),
        rng_(derive_seed(cfg_.seed, 1)),
        env_rng_(derive_seed(cfg_.seed, 2)) {
    cfg_.validate();
    start_episode();
    model_ = make_hmodel(env_->observation().size(), env_->action_count(), cfg_.dims, rng_, cfg_.adam);
    scratch_ = ModelGradients::zeros_like(model_);
    record_checkpoint();
  }

  const TrainerConfig& config() const { return cfg_; }
  const HModel& model() const { return model_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const TrainingLog& log() const { return log_; }
  const Env& env() const { return *env_; }
  int episode() const { return episode_; }
  int step_in_episode() const { return step_in_episode_; }
  int total_steps() const { return log_.total_steps; }
  bool finished() const { return finished_; }
  const std::optional<Pending>& pending() const { return pending_; }

  // Resolves the pending (previous) pair with the trainer's answer, or with
  // nothing. Must be called exactly once per pending pair before advance().
  void resolve(const std::optional<FeedbackEvent>& event) {
    if (!pending_) throw std::logic_error("resolve: no pending feedback request");
    pending_.reset();
    if (event) apply_feedback(*event);
    if (episode_over_) {
      episode_over_ = false;
      if (episode_ >= cfg_.episodes) finish();
    }
  }

  // Replay (on schedule), select an action, step the environment.
  void advance() {
    if (finished_) throw std::logic_error("advance: training finished");
    if (pending_) throw std::logic_error("advance: pending feedback not resolved");
    if (env_->done() || step_in_episode_ >= cfg_.max_steps) start_episode();

    if (log_.total_steps > 0 && log_.total_steps % cfg_.replay_interval == 0) replay_update();

    Observation s = env_->observation();
    Hidden h = env_->hidden();
    const int a = select_action(model_, s, rng_);
    const StepResult r = env_->step(a);
    ++step_in_episode_;
    ++log_.total_steps;
    pending_ = Pending{std::move(s), std::move(h), a};

    if (r.done || step_in_episode_ >= cfg_.max_steps) {
      episode_over_ = true;
      ++log_.episodes_completed;
    }
    if (log_.total_steps % cfg_.checkpoint_every == 0) record_checkpoint();
    if (log_.total_steps >= cfg_.horizon) {
      pending_.reset();
      finish();
    }
  }

  void apply_feedback(const FeedbackEvent& e) {
    scratch_.set_zero();
    accumulate_event_gradients(model_, e, 1.0, scratch_);
    apply_gradients(model_, scratch_);
    log_event(e);
    buffer_.push(e);
  }

  // Averaged step over a uniform-with-replacement minibatch.
  void replay_update() {
    if (buffer_.empty()) return;
    const auto idx = buffer_.sample_indices(static_cast<std::size_t>(cfg_.minibatch), rng_);
    scratch_.set_zero();
    const double w = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i : idx) accumulate_event_gradients(model_, buffer_[i], w, scratch_);
    apply_gradients(model_, scratch_);
  }

  // Replaces the learner state wholesale (snapshot restore).
  struct Snapshot {
    HModel model;
    std::vector<FeedbackEvent> buffer;
    std::string rng_state;
    std::string env_rng_state;
    Env env;
    std::optional<Pending> pending;
    int episode = 0;
    int step_in_episode = 0;
    bool episode_over = false;
    bool finished = false;
    int feedback_count = 0;
    int cf_count = 0;
    TrainingLog log;
  };

  Snapshot snapshot() const {
    return {model_,         buffer_.ordered(), rng_.state(),   env_rng_.state(),
            *env_,          pending_,          episode_,       step_in_episode_,
            episode_over_,  finished_,         feedback_count_, cf_count_,
            log_};
  }

  void restore(Snapshot s) {
    model_ = std::move(s.model);
    buffer_ = ReplayBuffer(cfg_.buffer_capacity);
    for (auto& e : s.buffer) buffer_.push(std::move(e));
    rng_.set_state(s.rng_state);
    env_rng_.set_state(s.env_rng_state);
    env_ = std::move(s.env);
    pending_ = std::move(s.pending);
    episode_ = s.episode;
    step_in_episode_ = s.step_in_episode;
    episode_over_ = s.episode_over;
    finished_ = s.finished;
    feedback_count_ = s.feedback_count;
    cf_count_ = s.cf_count;
    log_ = std::move(s.log);
    scratch_ = ModelGradients::zeros_like(model_);
  }

 private:
  void start_episode() {
    ++episode_;
    step_in_episode_ = 0;
    env_.emplace(factory_(env_rng_.next_u64()));
  }

  void log_event(const FeedbackEvent& e) {
    EventRecord r;
    r.env_step = log_.total_steps;
    r.f = e.f;
    r.has_cf = e.cf.has_value();
    if (e.cf) {
      r.kind = e.cf->kind;
      r.f_cf = e.cf->f_cf;
      r.contrastive = e.contrastive_enabled;
    }
    log_.events.push_back(r);
    ++feedback_count_;
    if (e.cf) ++cf_count_;
  }

  void record_checkpoint() {
    Checkpoint c;
    c.env_steps = log_.total_steps;
    c.score = evaluator_ ? evaluator_(model_) : 0.0;
    c.feedback_count = feedback_count_;
    c.cf_count = cf_count_;
    log_.checkpoints.push_back(c);
  }

  void finish() {
    finished_ = true;
    const int last = log_.checkpoints.empty() ? -1 : log_.checkpoints.back().env_steps;
    if (last >= cfg_.horizon) return;
    Checkpoint frozen;
    frozen.score = evaluator_ ? evaluator_(model_) : 0.0;
    frozen.feedback_count = feedback_count_;
    frozen.cf_count = cf_count_;
    for (int s = (last / cfg_.checkpoint_every + 1) * cfg_.checkpoint_every; s <= cfg_.horizon;
         s += cfg_.checkpoint_every) {
      frozen.env_steps = s;
      log_.checkpoints.push_back(frozen);
    }
  }

  TrainerConfig cfg_;
  EnvFactory factory_;
  Evaluator evaluator_;
  HModel model_;
  ModelGradients scratch_;
  ReplayBuffer buffer_;
  Rng rng_;
  Rng env_rng_;
  std::optional<Env> env_;
  std::optional<Pending> pending_;
  int episode_ = 0;
  int step_in_episode_ = 0;
  bool episode_over_ = false;
  bool finished_ = false;
  int feedback_count_ = 0;
  int cf_count_ = 0;
  TrainingLog log_;
};

template <class Source, class Hidden>
concept FeedbackSource = requires(Source src, const Observation& s, const Hidden& h, int a) {
  { src(s, h, a) } -> std::convertible_to<std::optional<FeedbackEvent>>;
};

template <EpisodicEnvironment Env>
struct TrainingResult {
  HModel model;
  TrainingLog log;
};

// Runs the whole loop with a synchronous feedback source. Exceptions from the
// environment or the source end the run; the partial log is kept.
template <EpisodicEnvironment Env, FeedbackSource<typename Env::Hidden> Source>
TrainingResult<Env> run_training(const TrainerConfig& cfg, typename Trainer<Env>::EnvFactory factory,
                                 Source&& source, Evaluator evaluator = {}) {
  Trainer<Env> trainer(cfg, std::move(factory), std::move(evaluator));
  try {
    while (!trainer.finished()) {
      if (const auto& p = trainer.pending()) {
        std::optional<FeedbackEvent> fb = source(p->state, p->hidden, p->action);
        trainer.resolve(fb);
        continue;
      }
      trainer.advance();
    }
  } catch (const std::exception& ex) {
    TrainingLog log = trainer.log();
    log.aborted = true;
    log.error = ex.what();
    return {trainer.model(), std::move(log)};
  }
  return {trainer.model(), trainer.log()};
}

}  // namespace cftamer
