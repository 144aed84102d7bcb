#pragma once

// Domain types shared by every module: actions, outcomes, controllables,
// procedures, the task hierarchy graph and episode records.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

namespace sgim {

using Rng = std::mt19937_64;

using Vec = std::vector<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

inline double norm(std::span<const double> a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Actions

/// One motion step: p normalized actuator targets, each in [-1, 1].
struct ActionPrimitive {
  Vec params;

  bool within_bounds() const {
    return std::all_of(params.begin(), params.end(),
                       [](double v) { return std::isfinite(v) && v >= -1.0 && v <= 1.0; });
  }
  void clip() {
    for (double& v : params) v = std::clamp(v, -1.0, 1.0);
  }
  friend bool operator==(const ActionPrimitive&, const ActionPrimitive&) = default;
};

/// Ordered sequence of primitives. The type does not bound the length.
struct CompoundAction {
  std::vector<ActionPrimitive> primitives;

  std::size_t size() const { return primitives.size(); }
  bool empty() const { return primitives.empty(); }
  friend bool operator==(const CompoundAction&, const CompoundAction&) = default;
};

inline CompoundAction concat(std::span<const CompoundAction> actions) {
  if (actions.empty()) throw Error("empty concatenation");
  CompoundAction out;
  std::size_t total = 0;
  for (const auto& a : actions) total += a.size();
  out.primitives.reserve(total);
  for (const auto& a : actions)
    out.primitives.insert(out.primitives.end(), a.primitives.begin(), a.primitives.end());
  return out;
}

inline CompoundAction concat(std::initializer_list<CompoundAction> actions) {
  return concat(std::span<const CompoundAction>(actions.begin(), actions.size()));
}

// ---------------------------------------------------------------------------
// Outcome spaces

/// Index of an outcome space in its registry. The primitive action node of
/// the hierarchy uses kActionNode.
struct SpaceId {
  int value = 0;
  auto operator<=>(const SpaceId&) const = default;
};

inline constexpr SpaceId kActionNode{-1};

struct OutcomeSpace {
  SpaceId id;
  std::string name;
  Vec lower;
  Vec upper;

  OutcomeSpace() = default;
  OutcomeSpace(SpaceId id_, std::string name_, Vec lower_, Vec upper_)
      : id(id_), name(std::move(name_)), lower(std::move(lower_)), upper(std::move(upper_)) {
    if (lower.empty() || lower.size() != upper.size())
      throw Error("outcome space '" + name + "': bounds must be nonempty and of equal length");
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i]))
        throw Error("outcome space '" + name + "': lower bound must be below upper bound");
  }

  std::size_t dim() const { return lower.size(); }
  double diameter() const { return distance(lower, upper); }
  double width(std::size_t d) const { return upper[d] - lower[d]; }

  bool contains(std::span<const double> v) const {
    if (v.size() != dim()) return false;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!(v[i] >= lower[i] && v[i] <= upper[i])) return false;
    return true;
  }

  /// Clips in place; returns true when any component was outside the box.
  bool clip(Vec& v) const {
    bool clipped = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double c = std::clamp(v[i], lower[i], upper[i]);
      if (c != v[i]) clipped = true;
      v[i] = c;
    }
    return clipped;
  }
};

struct Outcome {
  SpaceId space;
  Vec value;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

/// Per-space reached values of one episode; nullopt is the "not produced"
/// sentinel.
using OutcomeSet = std::vector<std::optional<Vec>>;

// ---------------------------------------------------------------------------
// Controllables and procedures

/// Either a primitive action or an outcome of a space currently controllable.
using Controllable = std::variant<ActionPrimitive, Outcome>;
using ControllableSequence = std::vector<Controllable>;

inline bool is_primitive(const Controllable& c) { return std::holds_alternative<ActionPrimitive>(c); }

inline bool all_primitives(const ControllableSequence& lc) {
  return std::all_of(lc.begin(), lc.end(), is_primitive);
}

inline bool all_outcomes(const ControllableSequence& lc) {
  return !lc.empty() && std::none_of(lc.begin(), lc.end(), is_primitive);
}

/// Component spaces of a procedure-shaped sequence; empty otherwise.
inline std::vector<SpaceId> lc_procedure_spaces(const ControllableSequence& lc) {
  std::vector<SpaceId> out;
  if (lc.size() < 2 || !all_outcomes(lc)) return out;
  for (const auto& c : lc) out.push_back(std::get<Outcome>(c).space);
  return out;
}

inline CompoundAction as_action(const ControllableSequence& lc) {
  CompoundAction a;
  for (const auto& c : lc) a.primitives.push_back(std::get<ActionPrimitive>(c));
  return a;
}

inline ControllableSequence as_sequence(const CompoundAction& a) {
  return ControllableSequence(a.primitives.begin(), a.primitives.end());
}

/// A goal-directed decomposition: the ordered subgoals whose solving actions
/// are concatenated.
struct Procedure {
  std::vector<Outcome> components;

  /// Throws unless length >= 2 and no component lies in `target`.
  void validate(SpaceId target) const {
    if (components.size() < 2) throw Error("procedure needs at least two components");
    for (const auto& c : components)
      if (c.space == target) throw Error("procedure component lies in its own goal space");
  }

  std::vector<SpaceId> spaces() const {
    std::vector<SpaceId> out;
    for (const auto& c : components) out.push_back(c.space);
    return out;
  }

  ControllableSequence as_sequence() const {
    return ControllableSequence(components.begin(), components.end());
  }

  static Procedure from_sequence(const ControllableSequence& lc) {
    Procedure p;
    for (const auto& c : lc) p.components.push_back(std::get<Outcome>(c));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Strategies (ids live here because episode records carry them)

enum class StrategyKind { ActionExplore, OutcomeExplore, ProcedureExplore, MimicAction, MimicProcedure };

struct StrategyId {
  StrategyKind kind = StrategyKind::OutcomeExplore;
  int teacher = -1;  ///< teacher index for the mimicry strategies

  auto operator<=>(const StrategyId&) const = default;

  bool is_mimicry() const {
    return kind == StrategyKind::MimicAction || kind == StrategyKind::MimicProcedure;
  }

  std::string name() const {
    switch (kind) {
      case StrategyKind::ActionExplore: return "action-explore";
      case StrategyKind::OutcomeExplore: return "outcome-explore";
      case StrategyKind::ProcedureExplore: return "procedure-explore";
      case StrategyKind::MimicAction: return "mimic-action(t" + std::to_string(teacher) + ")";
      case StrategyKind::MimicProcedure: return "mimic-procedure(t" + std::to_string(teacher) + ")";
    }
    return "?";
  }

  static StrategyId parse(const std::string& s) {
    if (s == "action-explore") return {StrategyKind::ActionExplore, -1};
    if (s == "outcome-explore") return {StrategyKind::OutcomeExplore, -1};
    if (s == "procedure-explore") return {StrategyKind::ProcedureExplore, -1};
    auto teacher_of = [&](std::size_t prefix) {
      if (s.size() < prefix + 3 || s.back() != ')' || s[prefix] != 't') throw Error("bad strategy id: " + s);
      return std::stoi(s.substr(prefix + 1, s.size() - prefix - 2));
    };
    if (s.rfind("mimic-action(", 0) == 0) return {StrategyKind::MimicAction, teacher_of(13)};
    if (s.rfind("mimic-procedure(", 0) == 0) return {StrategyKind::MimicProcedure, teacher_of(16)};
    throw Error("bad strategy id: " + s);
  }
};

// ---------------------------------------------------------------------------
// Episode records

/// Observables around one executed primitive. Outcome values here are the
/// raw per-space state values, present whenever the quantity exists.
struct StepObservation {
  Vec context;
  OutcomeSet before;
  OutcomeSet after;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  Vec context;
  StrategyId strategy;
  Outcome goal;
  ControllableSequence lc;
  CompoundAction action;
  OutcomeSet reached;
  double competence = -1.0;
  bool failed = false;  ///< resolution failed; partial trace only
  std::vector<StepObservation> steps;

  const std::optional<Vec>& reached_in(SpaceId s) const { return reached.at(static_cast<std::size_t>(s.value)); }
};

// ---------------------------------------------------------------------------
// Hierarchy graph

/// One ordered decomposition candidate of a node.
struct Decomposition {
  std::vector<SpaceId> nodes;
  double weight = 0.5;
  std::size_t updates = 0;
  bool frozen = false;
};

/// Directed weighted graph from a goal space to its decomposition
/// candidates. Edges whose weight falls below the pruning threshold are
/// frozen and never revived. The established subgraph (updated at least once
/// and not pruned) is kept acyclic.
class HierarchyGraph {
 public:
  explicit HierarchyGraph(double prune_threshold = 0.05) : prune_threshold_(prune_threshold) {}

  void add_node(SpaceId id, std::string name) {
    names_[id] = std::move(name);
    edges_.try_emplace(id);
  }

  bool has_node(SpaceId id) const { return names_.count(id) != 0; }
  const std::string& name(SpaceId id) const { return names_.at(id); }
  double prune_threshold() const { return prune_threshold_; }

  std::vector<SpaceId> nodes() const {
    std::vector<SpaceId> out;
    for (const auto& [id, _] : names_) out.push_back(id);
    return out;
  }

  void add_decomposition(SpaceId from, std::vector<SpaceId> nodes, double weight = 0.5) {
    require(from);
    for (auto n : nodes) require(n);
    if (nodes.empty()) throw Error("empty decomposition");
    auto& list = edges_[from];
    for (auto& d : list)
      if (d.nodes == nodes) {
        d.weight = std::clamp(weight, 0.0, 1.0);
        return;
      }
    list.push_back({std::move(nodes), std::clamp(weight, 0.0, 1.0), 0, false});
  }

  const std::vector<Decomposition>& decompositions(SpaceId from) const {
    require(from);
    return edges_.at(from);
  }

  bool pruned(const Decomposition& d) const { return d.frozen || d.weight < prune_threshold_; }

  /// Highest-weight unpruned decomposition; ties go to the lexicographically
  /// smaller node sequence.
  std::optional<std::vector<SpaceId>> best_decomposition(SpaceId from) const {
    require(from);
    const Decomposition* best = nullptr;
    for (const auto& d : edges_.at(from)) {
      if (pruned(d)) continue;
      if (!best || d.weight > best->weight || (d.weight == best->weight && d.nodes < best->nodes)) best = &d;
    }
    if (!best) return std::nullopt;
    return best->nodes;
  }

  /// Overwrites the full state of an edge (snapshot restoration).
  void restore_decomposition(SpaceId from, Decomposition d) {
    add_decomposition(from, d.nodes, d.weight);
    for (auto& e : edges_[from])
      if (e.nodes == d.nodes) e = std::move(d);
  }

  const std::map<SpaceId, std::tuple<double, double, int>>& ranks() const { return ranks_; }

  /// Rank used to orient cycle breaking: lower ranks are more primitive.
  void set_rank(SpaceId id, std::tuple<double, double, int> rank) { ranks_[id] = rank; }

  /// Moves the edge weight toward 1 + competence with an exponential moving
  /// average. Frozen edges ignore updates. Returns false when the edge is
  /// unknown.
  bool update(SpaceId from, const std::vector<SpaceId>& nodes, double competence, double rate = 0.1) {
    require(from);
    auto& list = edges_[from];
    for (auto& d : list) {
      if (d.nodes != nodes) continue;
      if (d.frozen) return true;
      const double target = std::clamp(1.0 + competence, 0.0, 1.0);
      d.weight = std::clamp(d.weight + rate * (target - d.weight), 0.0, 1.0);
      ++d.updates;
      if (d.weight < prune_threshold_) d.frozen = true;
      break_cycles();
      return true;
    }
    return false;
  }

  bool established(const Decomposition& d) const { return d.updates > 0 && !pruned(d); }

  bool weights_in_bounds() const {
    for (const auto& [_, list] : edges_)
      for (const auto& d : list)
        if (!(d.weight >= 0.0 && d.weight <= 1.0)) return false;
    return true;
  }

  bool acyclic() const { return !find_cycle().has_value(); }

  /// DOT rendering; edges point from a goal space to the members of its
  /// decompositions (label = weight).
  std::string to_dot(const std::string& graph_name = "hierarchy", bool only_established = false) const {
    std::ostringstream os;
    os << "digraph " << graph_name << " {\n";
    for (const auto& [id, n] : names_) os << "  \"" << n << "\";\n";
    for (const auto& [from, list] : edges_) {
      for (std::size_t k = 0; k < list.size(); ++k) {
        const auto& d = list[k];
        if (pruned(d)) continue;
        if (only_established && !established(d)) continue;
        for (std::size_t i = 0; i < d.nodes.size(); ++i) {
          os << "  \"" << names_.at(from) << "\" -> \"" << names_.at(d.nodes[i]) << "\" [label=\"d" << k << "." << i
             << " w=" << format_weight(d.weight) << "\"];\n";
        }
      }
    }
    os << "}\n";
    return os.str();
  }

 private:
  void require(SpaceId id) const {
    if (!has_node(id)) throw Error("unknown hierarchy node " + std::to_string(id.value));
  }

  static std::string format_weight(double w) {
    std::ostringstream os;
    os.precision(3);
    os << std::fixed << w;
    return os.str();
  }

  struct EdgeRef {
    SpaceId from;
    std::size_t index;
  };

  // Cycle over established edges (as a list of edges), if any.
  std::optional<std::vector<EdgeRef>> find_cycle() const {
    std::map<SpaceId, int> state;  // 0 new, 1 on stack, 2 done
    std::vector<EdgeRef> stack;
    std::optional<std::vector<EdgeRef>> found;

    std::function<bool(SpaceId)> visit = [&](SpaceId u) -> bool {
      state[u] = 1;
      const auto& list = edges_.at(u);
      for (std::size_t k = 0; k < list.size(); ++k) {
        if (!established(list[k])) continue;
        std::set<SpaceId> targets(list[k].nodes.begin(), list[k].nodes.end());
        for (SpaceId v : targets) {
          if (v == kActionNode && !has_node(v)) continue;
          stack.push_back({u, k});
          const int sv = state[v];
          if (sv == 1) {
            // collect the cycle: edges from v back to v on the stack
            std::vector<EdgeRef> cyc;
            std::size_t start = stack.size();
            while (start > 0 && stack[start - 1].from != v) --start;
            if (start > 0) --start;
            cyc.assign(stack.begin() + static_cast<std::ptrdiff_t>(start), stack.end());
            found = std::move(cyc);
            return true;
          }
          if (sv == 0 && visit(v)) return true;
          stack.pop_back();
        }
      }
      state[u] = 2;
      return false;
    };
    for (const auto& [id, _] : names_)
      if (state[id] == 0 && visit(id)) return found;
    return std::nullopt;
  }

  std::tuple<double, double, int> rank_of(SpaceId id) const {
    auto it = ranks_.find(id);
    if (it != ranks_.end()) return it->second;
    return {std::numeric_limits<double>::infinity(), 0.0, id.value};
  }

  // Prunes edges until the established subgraph is acyclic. In a cycle the
  // edge pointing from the most primitive source to the least primitive
  // member is removed; weight breaks ties.
  void break_cycles() {
    while (auto cyc = find_cycle()) {
      const EdgeRef* victim = nullptr;
      std::tuple<bool, double, std::vector<SpaceId>> victim_key;
      for (const auto& e : *cyc) {
        const auto& d = edges_.at(e.from)[e.index];
        auto worst_member = rank_of(d.nodes.front());
        for (auto n : d.nodes) worst_member = std::max(worst_member, rank_of(n));
        const bool upward = worst_member > rank_of(e.from);
        std::tuple<bool, double, std::vector<SpaceId>> key{!upward, d.weight, d.nodes};
        if (!victim || key < victim_key) {
          victim = &e;
          victim_key = key;
        }
      }
      auto& d = edges_[victim->from][victim->index];
      d.weight = 0.0;
      d.frozen = true;
    }
  }

  double prune_threshold_;
  std::map<SpaceId, std::string> names_;
  std::map<SpaceId, std::vector<Decomposition>> edges_;
  std::map<SpaceId, std::tuple<double, double, int>> ranks_;
};

}  // namespace sgim
