#pragma once

// H(s, a): a shared trunk feeding one head per action. Each head is a relu
// embedding layer followed by a linear scalar output; the embedding layer's
// activation is E(s, a), used by the contrastive term.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cftamer/feedback.hpp"
#include "cftamer/nn.hpp"
#include "cftamer/rng.hpp"

namespace cftamer {

struct ModelDims {
  std::vector<Eigen::Index> trunk_hidden{64, 64};
  Eigen::Index embed_dim = 32;
};

struct HModel {
  Network trunk;
  std::vector<Network> heads;
  AdamState trunk_opt;
  std::vector<AdamState> head_opts;

  int action_count() const { return static_cast<int>(heads.size()); }
  Eigen::Index input_size() const { return trunk.input_size(); }
  Eigen::Index embed_dim() const { return heads.front().layers.front().out_size(); }

  friend bool operator==(const HModel& a, const HModel& b) {
    return a.trunk == b.trunk && a.heads == b.heads;
  }
};

inline HModel make_hmodel(Eigen::Index input_size, int n_actions, const ModelDims& dims, Rng& rng,
                          AdamConfig adam = {}) {
  if (n_actions < 1) throw std::invalid_argument("make_hmodel: need at least one action");
  if (dims.trunk_hidden.empty()) throw std::invalid_argument("make_hmodel: trunk needs a hidden layer");
  std::vector<Eigen::Index> sizes{input_size};
  sizes.insert(sizes.end(), dims.trunk_hidden.begin(), dims.trunk_hidden.end());
  HModel m;
  m.trunk = make_network(sizes, Activation::relu, rng);
  m.trunk_opt = AdamState::for_network(m.trunk, adam);
  for (int a = 0; a < n_actions; ++a) {
    m.heads.push_back(make_network({sizes.back(), dims.embed_dim, 1}, Activation::linear, rng));
    m.head_opts.push_back(AdamState::for_network(m.heads.back(), adam));
  }
  return m;
}

inline void check_action(const HModel& m, int a) {
  if (a < 0 || a >= m.action_count())
    throw std::out_of_range("action index " + std::to_string(a) + " out of range");
}

inline std::vector<double> h_values(const HModel& m, const Observation& s) {
  const Vector t = evaluate(m.trunk, s);
  std::vector<double> h(m.heads.size());
  for (std::size_t a = 0; a < m.heads.size(); ++a) h[a] = evaluate(m.heads[a], t)[0];
  return h;
}

inline Vector embed(const HModel& m, const Observation& s, int a) {
  check_action(m, a);
  const Vector t = evaluate(m.trunk, s);
  const auto& l = m.heads[static_cast<std::size_t>(a)].layers.front();
  return (l.weights * t + l.biases).cwiseMax(0.0);
}

// Index of a maximal entry; ties broken uniformly with `rng` (no draw when the
// maximum is unique).
inline int argmax_random_tie(const std::vector<double>& values, Rng& rng) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  double best = values[0];
  for (double v : values) best = std::max(best, v);
  std::vector<int> ties;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] == best) ties.push_back(static_cast<int>(i));
  if (ties.size() == 1) return ties[0];
  return ties[rng.below(ties.size())];
}

inline int select_action(const HModel& m, const Observation& s, Rng& rng) {
  return argmax_random_tie(h_values(m, s), rng);
}

struct ContrastiveLoss {
  double loss = 0.0;
  Vector d_fact;
  Vector d_cf;
};

// max(0, cos(e_fact, e_cf)); zero loss and gradient in the inactive hinge
// region or when an embedding norm is degenerate.
inline ContrastiveLoss contrastive_loss(const Vector& e_fact, const Vector& e_cf) {
  ContrastiveLoss out{0.0, Vector::Zero(e_fact.size()), Vector::Zero(e_cf.size())};
  const auto c = cosine_similarity(e_fact, e_cf);
  if (!c || c->value <= 0.0) return out;
  out.loss = c->value;
  out.d_fact = c->du;
  out.d_cf = c->dv;
  return out;
}

struct ModelGradients {
  Gradients trunk;
  std::vector<Gradients> heads;
  std::vector<bool> head_touched;

  static ModelGradients zeros_like(const HModel& m) {
    ModelGradients g{Gradients::zeros_like(m.trunk), {}, std::vector<bool>(m.heads.size(), false)};
    for (const auto& h : m.heads) g.heads.push_back(Gradients::zeros_like(h));
    return g;
  }

  void set_zero() {
    trunk.set_zero();
    for (auto& h : heads) h.set_zero();
    std::fill(head_touched.begin(), head_touched.end(), false);
  }
};

struct LossTerms {
  double normal = 0.0;
  double counterfactual = 0.0;
  double contrastive = 0.0;
  double total() const { return normal + counterfactual + contrastive; }
};

namespace detail {

struct PairPass {
  ForwardCache trunk;
  ForwardCache head;
  int action = 0;
  double h() const { return head.output()[0]; }
  const Vector& embedding() const { return head.activations.front(); }
};

inline PairPass run_pair(const HModel& m, const Observation& s, int a) {
  check_action(m, a);
  PairPass p;
  p.action = a;
  p.trunk = forward_cache(m.trunk, s);
  p.head = forward_cache(m.heads[static_cast<std::size_t>(a)], p.trunk.output());
  return p;
}

// Backprop `weight * dL/dH` plus an optional gradient at the embedding.
inline void backprop_pair(const HModel& m, const PairPass& p, double d_h, const Vector* d_embed,
                          double weight, ModelGradients& acc) {
  const auto a = static_cast<std::size_t>(p.action);
  const Network& head = m.heads[a];
  Vector g_out(1);
  g_out[0] = weight * d_h;
  Vector g_embed = backprop_layers(head, p.head, g_out, 1, 2, acc.heads[a]);
  if (d_embed) g_embed += weight * *d_embed;
  Vector g_trunk = backprop_layers(head, p.head, g_embed, 0, 1, acc.heads[a]);
  accumulate_backward(m.trunk, p.trunk, g_trunk, acc.trunk);
  acc.head_touched[a] = true;
}

}  // namespace detail

// Adds weight * dL/dθ for one event into `acc` and returns the loss terms.
// Without a counterfactual the loss is (H(s,a) - f)^2; with one it is
// (H(s,a) - f)^2 + (H(cf) - f_cf)^2 + [contrastive] max(0, cos(E(s,a), E(cf))).
inline LossTerms accumulate_event_gradients(const HModel& m, const FeedbackEvent& e, double weight,
                                            ModelGradients& acc) {
  validate_event(e, m.action_count());
  LossTerms terms;
  const auto fact = detail::run_pair(m, e.state, e.action);
  const double r_fact = fact.h() - e.f;
  terms.normal = r_fact * r_fact;
  if (!e.cf) {
    detail::backprop_pair(m, fact, 2.0 * r_fact, nullptr, weight, acc);
    return terms;
  }
  const auto foil = detail::run_pair(m, e.cf_state(), e.cf_action());
  const double r_cf = foil.h() - e.cf->f_cf;
  terms.counterfactual = r_cf * r_cf;
  ContrastiveLoss cos_term{0.0, Vector(), Vector()};
  if (e.contrastive_enabled) {
    cos_term = contrastive_loss(fact.embedding(), foil.embedding());
    terms.contrastive = cos_term.loss;
  }
  const bool active = terms.contrastive > 0.0;
  detail::backprop_pair(m, fact, 2.0 * r_fact, active ? &cos_term.d_fact : nullptr, weight, acc);
  detail::backprop_pair(m, foil, 2.0 * r_cf, active ? &cos_term.d_cf : nullptr, weight, acc);
  return terms;
}

struct LossResult {
  LossTerms terms;
  ModelGradients grads;
  double loss() const { return terms.total(); }
};

inline LossResult full_loss(const HModel& m, const FeedbackEvent& e) {
  LossResult r{{}, ModelGradients::zeros_like(m)};
  r.terms = accumulate_event_gradients(m, e, 1.0, r.grads);
  return r;
}

// Loss value only (no gradients); used by finite-difference checks.
inline double event_loss(const HModel& m, const FeedbackEvent& e) {
  validate_event(e, m.action_count());
  const auto h_of = [&](const Observation& s, int a) {
    return h_values(m, s)[static_cast<std::size_t>(a)];
  };
  const double r = h_of(e.state, e.action) - e.f;
  double loss = r * r;
  if (!e.cf) return loss;
  const double rc = h_of(e.cf_state(), e.cf_action()) - e.cf->f_cf;
  loss += rc * rc;
  if (e.contrastive_enabled)
    loss += contrastive_loss(embed(m, e.state, e.action), embed(m, e.cf_state(), e.cf_action())).loss;
  return loss;
}

// One optimizer step on the trunk and every head that received gradient.
inline void apply_gradients(HModel& m, const ModelGradients& g) {
  if (!g.trunk.all_finite()) throw NonFiniteError("non-finite trunk gradient");
  for (std::size_t a = 0; a < m.heads.size(); ++a)
    if (g.head_touched[a] && !g.heads[a].all_finite()) throw NonFiniteError("non-finite head gradient");
  adam_update(m.trunk, g.trunk, m.trunk_opt);
  for (std::size_t a = 0; a < m.heads.size(); ++a)
    if (g.head_touched[a]) adam_update(m.heads[a], g.heads[a], m.head_opts[a]);
}

}  // namespace cftamer
