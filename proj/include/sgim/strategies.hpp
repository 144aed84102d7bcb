#pragma once

// Data-collection heuristics: action, outcome and procedure exploration and
// mimicry of teacher demonstrations.

#include <algorithm>
#include <random>
#include <vector>

#include "core.hpp"
#include "memory.hpp"
#include "teachers.hpp"

namespace sgim {



struct StrategyParams {
  double fresh_probability = 0.5;
  double action_noise = 0.1;
  double outcome_noise = 0.05;
  double mimic_noise = 0.05;
};

inline ActionPrimitive random_primitive(Rng& rng, std::size_t dim) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ActionPrimitive p;
  p.params.resize(dim);
  for (auto& v : p.params) v = u(rng);
  return p;
}

inline ActionPrimitive perturb(const ActionPrimitive& p, double std, Rng& rng) {
  ActionPrimitive q = p;
  if (std > 0.0) {
    std::normal_distribution<double> n(0.0, std);
    for (auto& v : q.params) v += n(rng);
  }
  q.clip();
  return q;
}

/// Gaussian perturbation with std relative to the half-width of each
/// dimension, clipped into the space.
inline Outcome perturb(const Outcome& o, const OutcomeSpace& sp, double rel_std, Rng& rng) {
  Outcome q = o;
  if (rel_std > 0.0) {
    for (std::size_t d = 0; d < q.value.size(); ++d) {
      std::normal_distribution<double> n(0.0, rel_std * 0.5 * sp.width(d));
      q.value[d] += n(rng);
    }
  }
  sp.clip(q.value);
  return q;
}

/// Fresh uniform primitive or a perturbed stored primitive, half each.
inline ControllableSequence explore_action_space(Rng& rng, const EpisodicMemory& mem, std::size_t dim,
                                                 const StrategyParams& p = {}, bool* fresh = nullptr) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool use_fresh = u01(rng) < p.fresh_probability;
  std::vector<std::size_t> with_action;
  if (!use_fresh)
    for (std::size_t i = 0; i < mem.size(); ++i)
      if (!mem.at(i).action.empty()) with_action.push_back(i);
  if (use_fresh || with_action.empty()) {
    if (fresh) *fresh = true;
    return {random_primitive(rng, dim)};
  }
  if (fresh) *fresh = false;
  const auto& rec = mem.at(with_action[std::uniform_int_distribution<std::size_t>(0, with_action.size() - 1)(rng)]);
  const auto& prim = rec.action.primitives[std::uniform_int_distribution<std::size_t>(0, rec.action.size() - 1)(rng)];
  return {perturb(prim, p.action_noise, rng)};
}

/// Local perturbation of the nearest record's controllable sequence; noise
/// grows with the distance to that record.
inline ControllableSequence explore_outcome(const Outcome& goal, const EpisodicMemory& mem, Rng& rng,
                                            std::size_t dim, const StrategyParams& p = {}) {
  const auto nb = mem.nearest(goal.space, goal.value, 1);
  if (nb.empty()) return explore_action_space(rng, mem, dim, p);
  const double rel = p.outcome_noise * (1.0 + nb.front().distance / mem.space(goal.space).diameter());
  ControllableSequence out;
  for (const auto& c : mem.at(nb.front().record).lc) {
    if (is_primitive(c)) {
      out.push_back(perturb(std::get<ActionPrimitive>(c), rel, rng));
    } else {
      const auto& o = std::get<Outcome>(c);
      out.push_back(perturb(o, mem.space(o.space), rel, rng));
    }
  }
  return out;
}

/// Perturbed goal in its own (controllable) space, for execution by planning.
inline ControllableSequence explore_controllable_goal(const Outcome& goal, const EpisodicMemory& mem, Rng& rng,
                                                      const StrategyParams& p = {}) {
  const auto nb = mem.nearest(goal.space, goal.value, 1);
  const auto& sp = mem.space(goal.space);
  const double d = nb.empty() ? sp.diameter() : nb.front().distance;
  return {perturb(goal, sp, p.outcome_noise * (1.0 + d / sp.diameter()), rng)};
}

/// Goal outside the controllable spaces: the controllable outcome that
/// co-occurred with the nearest reached outcome, perturbed, for execution by
/// planning.
inline ControllableSequence explore_via_controllable(const Outcome& goal, const EpisodicMemory& mem,
                                                     const std::vector<SpaceId>& controllable, Rng& rng,
                                                     std::size_t dim, const StrategyParams& p = {}) {
  const auto nb = mem.nearest(goal.space, goal.value, 1);
  if (nb.empty()) return explore_outcome(goal, mem, rng, dim, p);
  const auto& rec = mem.at(nb.front().record);
  std::vector<SpaceId> options;
  for (auto c : controllable)
    if (rec.reached_in(c)) options.push_back(c);
  if (options.empty()) return explore_outcome(goal, mem, rng, dim, p);
  const auto c = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  const double rel = p.outcome_noise * (1.0 + nb.front().distance / mem.space(goal.space).diameter());
  return {perturb(Outcome{c, *rec.reached_in(c)}, mem.space(c), rel, rng)};
}

/// Samples an ordered space pair for the goal space with probability
/// proportional to its edge weight, and fills it from the best past
/// procedure of that pair near the goal (or uniformly at random).
inline ControllableSequence explore_procedure(const Outcome& goal, const HierarchyGraph& h, const EpisodicMemory& mem,
                                              Rng& rng, const StrategyParams& p = {}) {
  std::vector<const Decomposition*> pairs;
  std::vector<double> weights;
  for (const auto& d : h.decompositions(goal.space)) {
    if (d.nodes.size() != 2 || h.pruned(d)) continue;
    bool ok = true;
    for (auto n : d.nodes) ok = ok && n != kActionNode && n != goal.space && mem.has_data(n);
    if (!ok) continue;
    pairs.push_back(&d);
    weights.push_back(d.weight);
  }
  if (pairs.empty()) throw Error("procedure unavailable");
  const auto& chosen = *pairs[std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(rng)];

  const auto& sp = mem.space(goal.space);
  std::optional<std::size_t> best;
  double best_d = 0.0;
  mem.for_each_in(goal.space, [&](std::size_t r, const Vec& v) {
    const auto& rec = mem.at(r);
    if (lc_procedure_spaces(rec.lc) != chosen.nodes) return;
    const double d = distance(v, goal.value);
    if (!best || d < best_d) {
      best = r;
      best_d = d;
    }
  });
  ControllableSequence out;
  if (best) {
    const double rel = p.outcome_noise * (1.0 + best_d / sp.diameter());
    for (const auto& c : mem.at(*best).lc) {
      const auto& o = std::get<Outcome>(c);
      out.push_back(perturb(o, mem.space(o.space), rel, rng));
    }
  } else {
    for (auto n : chosen.nodes) {
      const auto& cs = mem.space(n);
      Outcome o{n, Vec(cs.dim())};
      for (std::size_t d = 0; d < cs.dim(); ++d)
        o.value[d] = std::uniform_real_distribution<double>(cs.lower[d], cs.upper[d])(rng);
      out.push_back(o);
    }
  }
  return out;
}

inline ControllableSequence mimic_action(const Outcome& goal, const Teacher& t, Rng& rng, double noise = 0.05) {
  if (t.kind() != TeacherKind::Action) throw Error("teacher does not demonstrate actions");
  const auto& d = t.demo(goal.value);
  ControllableSequence out;
  for (const auto& prim : d.action.primitives) out.push_back(perturb(prim, noise, rng));
  return out;
}

inline ControllableSequence mimic_procedure(const Outcome& goal, const Teacher& t, const std::vector<OutcomeSpace>& spaces,
                                            Rng& rng, double noise = 0.05) {
  if (t.kind() != TeacherKind::Procedure) throw Error("teacher does not demonstrate procedures");
  const auto& d = t.demo(goal.value);
  ControllableSequence out;
  for (const auto& c : d.procedure.components)
    out.push_back(perturb(c, spaces.at(static_cast<std::size_t>(c.space.value)), noise, rng));
  return out;
}

struct StrategyContext {
  const EpisodicMemory& mem;
  const HierarchyGraph& h;
  const std::vector<Teacher>& teachers;
  const std::vector<StrategyId>& active;
  std::size_t action_dim;
  StrategyParams params;
  /// Goal spaces whose goals are emitted as-is (CHIME controllable spaces).
  std::vector<SpaceId> controllable;
};

/// Dispatches to the strategy. Throws for inactive strategies; procedure
/// exploration throws "procedure unavailable" when no pair qualifies.
inline ControllableSequence apply_strategy(const StrategyId& s, const Outcome& goal, const StrategyContext& ctx, Rng& rng) {
  if (std::find(ctx.active.begin(), ctx.active.end(), s) == ctx.active.end())
    throw Error("inactive strategy " + s.name());
  switch (s.kind) {
    case StrategyKind::ActionExplore: return explore_action_space(rng, ctx.mem, ctx.action_dim, ctx.params);
    case StrategyKind::OutcomeExplore:
      if (std::find(ctx.controllable.begin(), ctx.controllable.end(), goal.space) != ctx.controllable.end())
        return explore_controllable_goal(goal, ctx.mem, rng, ctx.params);
      if (!ctx.controllable.empty())
        return explore_via_controllable(goal, ctx.mem, ctx.controllable, rng, ctx.action_dim, ctx.params);
      return explore_outcome(goal, ctx.mem, rng, ctx.action_dim, ctx.params);
    case StrategyKind::ProcedureExplore: return explore_procedure(goal, ctx.h, ctx.mem, rng, ctx.params);
    case StrategyKind::MimicAction:
      return mimic_action(goal, ctx.teachers.at(static_cast<std::size_t>(s.teacher)), rng, ctx.params.mimic_noise);
    case StrategyKind::MimicProcedure:
      return mimic_procedure(goal, ctx.teachers.at(static_cast<std::size_t>(s.teacher)), ctx.mem.spaces(), rng,
                             ctx.params.mimic_noise);
  }
  throw Error("unknown strategy");
}

}  // namespace sgim
