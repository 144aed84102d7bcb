#pragma once

// Environment interface and episode execution helpers.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace sgim {

/// Seed mixing used for per-episode environment seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t episode) {
  return splitmix64(splitmix64(run_seed) ^ (episode + 0x51ed2701ULL));
}

/// One substep of physical state, flattened for export.
struct Substep {
  Vec state;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual const std::vector<OutcomeSpace>& spaces() const = 0;
  virtual std::size_t context_dim() const = 0;
  virtual std::vector<std::string> context_names() const = 0;

  /// Deterministic initial state; returns the context vector.
  virtual Vec reset(std::uint64_t seed) = 0;
  virtual Vec context() const = 0;
  /// Raw per-space values of the current state (nullopt when the quantity
  /// does not exist yet).
  virtual OutcomeSet state_values() const = 0;
  /// Executes one primitive. Throws on out-of-bounds parameters.
  virtual std::vector<Substep> step(const ActionPrimitive& a) = 0;
  /// Reached outcomes of the episode so far, clipped into their spaces;
  /// sentinels for spaces not produced.
  virtual OutcomeSet observe() const = 0;

  /// Declared task hierarchy, for tests and evaluation only.
  virtual HierarchyGraph ground_truth() const = 0;

  /// Scripted solution for a goal under the layout of `seed`; nullopt when
  /// the script cannot reach it.
  virtual std::optional<CompoundAction> script(SpaceId space, const Vec& goal, std::uint64_t seed) const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;

  std::size_t num_spaces() const { return spaces().size(); }
  const OutcomeSpace& space(SpaceId id) const { return spaces().at(static_cast<std::size_t>(id.value)); }

  void check_primitive(const ActionPrimitive& a) const {
    if (a.params.size() != action_dim()) throw Error("primitive has wrong dimension");
    if (!a.within_bounds()) throw Error("primitive out of bounds");
  }
};

/// Level of each space in the declared hierarchy (0 = directly above the
/// primitive action node).
inline std::vector<int> ground_truth_levels(const Environment& env) {
  const auto h = env.ground_truth();
  std::vector<int> level(env.num_spaces(), -1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t s = 0; s < level.size(); ++s) {
      for (const auto& d : h.decompositions(SpaceId{static_cast<int>(s)})) {
        int l = 0;
        for (auto n : d.nodes) {
          if (n == kActionNode) continue;
          const int ln = level[static_cast<std::size_t>(n.value)];
          if (ln < 0) {
            l = -1;
            break;
          }
          l = std::max(l, ln + 1);
        }
        if (l >= 0 && (level[s] < 0 || l < level[s])) {
          level[s] = l;
          changed = true;
        }
      }
    }
  }
  return level;
}

struct EpisodeTrace {
  Vec context;
  std::vector<StepObservation> steps;
  OutcomeSet reached;
  std::vector<Substep> substeps;
};

/// Resets and executes a full compound action.
inline EpisodeTrace run_episode(Environment& env, std::uint64_t seed, const CompoundAction& action,
                                bool keep_substeps = false) {
  EpisodeTrace t;
  t.context = env.reset(seed);
  for (const auto& p : action.primitives) {
    StepObservation s;
    s.context = env.context();
    s.before = env.state_values();
    auto sub = env.step(p);
    s.after = env.state_values();
    t.steps.push_back(std::move(s));
    if (keep_substeps) t.substeps.insert(t.substeps.end(), sub.begin(), sub.end());
  }
  t.reached = env.observe();
  return t;
}

}  // namespace sgim
