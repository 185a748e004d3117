#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cftamer/gridworld.hpp"

namespace cftamer {

// Training condition. cfa/cfs are upward counterfactuals attached to negative
// feedback; the *_down variants attach downward counterfactuals to positive
// feedback; random_extra attaches an unrelated correct sample with the
// contrastive term disabled.
enum class Variant { vanilla, cfa, cfs, cfa_down, cfs_down, random_extra };

inline constexpr Variant kAllVariants[] = {Variant::vanilla,  Variant::cfa,      Variant::cfs,
                                           Variant::cfa_down, Variant::cfs_down, Variant::random_extra};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::cfa: return "cfa";
    case Variant::cfs: return "cfs";
    case Variant::cfa_down: return "cfa_down";
    case Variant::cfs_down: return "cfs_down";
    case Variant::random_extra: return "random_extra";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

inline bool is_downward(Variant v) { return v == Variant::cfa_down || v == Variant::cfs_down; }

// Which component of the (state, action) fact was replaced. `sample` replaces
// both and is only produced by random_extra.
enum class CfKind { action, state, sample };

inline std::string_view to_string(CfKind k) {
  switch (k) {
    case CfKind::action: return "action";
    case CfKind::state: return "state";
    case CfKind::sample: return "sample";
  }
  return "?";
}

inline CfKind parse_cf_kind(std::string_view s) {
  if (s == "action") return CfKind::action;
  if (s == "state") return CfKind::state;
  if (s == "sample") return CfKind::sample;
  throw std::invalid_argument("unknown counterfactual kind '" + std::string(s) + "'");
}

struct Counterfactual {
  int f_cf = 1;
  CfKind kind = CfKind::action;
  std::optional<Observation> s_cf;
  std::optional<int> a_cf;
};

struct FeedbackEvent {
  int f = 1;
  Observation state;
  int action = 0;
  std::optional<Counterfactual> cf;
  bool contrastive_enabled = true;

  // The (state, action) pair the counterfactual feedback refers to.
  const Observation& cf_state() const { return cf->s_cf ? *cf->s_cf : state; }
  int cf_action() const { return cf->a_cf ? *cf->a_cf : action; }
};

class MalformedEventError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate_event(const FeedbackEvent& e, int n_actions) {
  if (e.f != 1 && e.f != -1) throw MalformedEventError("feedback must be -1 or +1");
  if (e.action < 0 || e.action >= n_actions) throw MalformedEventError("action index out of range");
  if (!e.cf) return;
  const auto& cf = *e.cf;
  if (cf.f_cf != 1 && cf.f_cf != -1) throw MalformedEventError("counterfactual feedback must be -1 or +1");
  if (cf.f_cf == e.f) throw MalformedEventError("counterfactual feedback must oppose the factual feedback");
  const bool want_state = cf.kind != CfKind::action;
  const bool want_action = cf.kind != CfKind::state;
  if (cf.s_cf.has_value() != want_state || cf.a_cf.has_value() != want_action)
    throw MalformedEventError("counterfactual payload does not match its kind");
  if (cf.a_cf && (*cf.a_cf < 0 || *cf.a_cf >= n_actions))
    throw MalformedEventError("counterfactual action out of range");
  if (cf.s_cf && cf.s_cf->size() != e.state.size())
    throw MalformedEventError("counterfactual state has wrong length");
}

}  // namespace cftamer
