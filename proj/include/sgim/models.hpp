#pragma once

// Memory-based forward/inverse task models and recursive goal resolution.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "memory.hpp"

namespace sgim {

/// k-nearest-neighbour regressor on raw input vectors. Prediction is the
/// 1/(d+eps)-weighted mean of the k nearest outputs; an exact input match
/// returns the stored output itself.
class KnnRegressor {
 public:
  void add(Vec x, Vec y) {
    if (!inputs_.empty() && (x.size() != inputs_.front().size() || y.size() != outputs_.front().size()))
      throw Error("knn: inconsistent sample dimensions");
    inputs_.push_back(std::move(x));
    outputs_.push_back(std::move(y));
  }

  std::size_t size() const { return inputs_.size(); }
  bool empty() const { return inputs_.empty(); }
  const std::vector<Vec>& inputs() const { return inputs_; }
  const std::vector<Vec>& outputs() const { return outputs_; }

  /// Indices of the k nearest samples by input distance (ties: lower index),
  /// optionally skipping one index.
  std::vector<std::pair<double, std::size_t>> neighbors(std::span<const double> x, std::size_t k,
                                                        std::optional<std::size_t> skip = std::nullopt,
                                                        std::span<const double> scale = {}) const {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(inputs_.size());
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      if (skip && *skip == i) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double s = scale.empty() ? 1.0 : scale[j];
        const double t = (inputs_[i][j] - x[j]) * s;
        acc += t * t;
      }
      d.emplace_back(acc, i);
    }
    const std::size_t n = std::min(k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), d.end());
    d.resize(n);
    for (auto& [dist, _] : d) dist = std::sqrt(dist);
    return d;
  }

  std::optional<Vec> predict(std::span<const double> x, std::size_t k = 3, std::optional<std::size_t> skip = std::nullopt,
                             std::span<const double> scale = {}) const {
    const auto nb = neighbors(x, k, skip, scale);
    if (nb.empty()) return std::nullopt;
    if (nb.front().first == 0.0) return outputs_[nb.front().second];
    Vec y(outputs_.front().size(), 0.0);
    double wsum = 0.0;
    for (const auto& [d, i] : nb) {
      const double w = 1.0 / (d + 1e-6);
      wsum += w;
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += w * outputs_[i][j];
    }
    for (double& v : y) v /= wsum;
    return y;
  }

 private:
  std::vector<Vec> inputs_;
  std::vector<Vec> outputs_;
};

/// Input side of a task model: the primitive action space or an outcome space.
struct ControllableSpace {
  SpaceId space = kActionNode;  ///< kActionNode for primitives
  std::size_t dim = 0;

  bool is_action() const { return space == kActionNode; }
  friend bool operator==(const ControllableSpace&, const ControllableSpace&) = default;
};

/// Forward model M_T and inverse model L_T over (context dims, controllable)
/// -> outcome, backed by stored samples.
class TaskModel {
 public:
  TaskModel(SpaceId target, ControllableSpace input, std::vector<std::size_t> context_dims = {})
      : target_(target), input_(input), context_dims_(std::move(context_dims)) {
    if (input_.space == target_) throw Error("task model: outcome space cannot be its own input");
  }

  SpaceId target() const { return target_; }
  const ControllableSpace& input() const { return input_; }
  const std::vector<std::size_t>& context_dims() const { return context_dims_; }
  std::size_t size() const { return forward_.size(); }

  void add(std::span<const double> s, const Controllable& c, const Vec& outcome) {
    auto cv = controllable_vector(c);
    forward_.add(join(cv, s), outcome);
    inverse_.add(join(outcome, s), std::move(cv));
  }

  /// Weighted k=3 prediction; nullopt on an empty model.
  std::optional<Vec> forward_predict(std::span<const double> s, const Controllable& c) const {
    return forward_.predict(join(controllable_vector(c), s), 3);
  }

  /// Controllable of the stored sample whose outcome (and context) is nearest.
  Controllable infer_controllable(std::span<const double> s, const Outcome& goal) const {
    if (goal.space != target_) throw Error("infer_controllable: goal not in the model's space");
    if (inverse_.empty()) throw Error("no data");
    const auto nb = inverse_.neighbors(join(goal.value, s), 1);
    const auto& cv = inverse_.outputs()[nb.front().second];
    if (input_.is_action()) return ActionPrimitive{cv};
    return Outcome{input_.space, cv};
  }

 private:
  Vec controllable_vector(const Controllable& c) const {
    if (input_.is_action()) {
      if (!is_primitive(c)) throw Error("controllable incompatible with the model input");
      const auto& p = std::get<ActionPrimitive>(c).params;
      if (p.size() != input_.dim) throw Error("controllable incompatible with the model input");
      return p;
    }
    if (is_primitive(c) || std::get<Outcome>(c).space != input_.space)
      throw Error("controllable incompatible with the model input");
    return std::get<Outcome>(c).value;
  }

  Vec join(std::span<const double> a, std::span<const double> s) const {
    Vec v(a.begin(), a.end());
    for (auto d : context_dims_) v.push_back(s[d]);
    return v;
  }

  SpaceId target_;
  ControllableSpace input_;
  std::vector<std::size_t> context_dims_;
  KnnRegressor forward_;
  KnnRegressor inverse_;
};

// ---------------------------------------------------------------------------
// Resolution over the episodic memory

enum class LcKind { Direct, Procedure, Other };

inline LcKind lc_kind(const ControllableSequence& lc) {
  if (all_primitives(lc)) return LcKind::Direct;
  if (lc.size() >= 2 && all_outcomes(lc)) return LcKind::Procedure;
  return LcKind::Other;
}

/// Controllable sequence of the nearest stored outcome (pure nearest, ties to
/// the earlier episode).
inline const ControllableSequence& infer_controllable(const EpisodicMemory& mem, const Outcome& goal) {
  const auto nb = mem.nearest(goal.space, goal.value, 1);
  if (nb.empty()) throw Error("no data");
  return mem.at(nb.front().record).lc;
}

enum class ResolveFailure { None, DepthExceeded, CyclicDecomposition, NoData };

inline std::string to_string(ResolveFailure f) {
  switch (f) {
    case ResolveFailure::None: return "none";
    case ResolveFailure::DepthExceeded: return "resolution depth exceeded";
    case ResolveFailure::CyclicDecomposition: return "cyclic decomposition";
    case ResolveFailure::NoData: return "no data";
  }
  return "?";
}

struct ResolveParams {
  int depth = 5;
  double length_penalty = 0.01;
  std::size_t max_length = 8;
};

struct ResolveResult {
  std::optional<CompoundAction> action;
  ResolveFailure failure = ResolveFailure::None;
  /// Decompositions expanded during resolution, outermost first.
  std::vector<std::pair<SpaceId, std::vector<SpaceId>>> expanded;

  bool ok() const { return action.has_value(); }
};

class Resolver {
 public:
  Resolver(const EpisodicMemory& mem, const HierarchyGraph& h, ResolveParams params = {})
      : mem_(mem), h_(h), params_(params) {}

  const ResolveParams& params() const { return params_; }

  ResolveResult resolve(const Outcome& goal) const { return resolve(goal, params_.depth, {}); }

  ResolveResult resolve(const Outcome& goal, int depth, std::set<SpaceId> visited) const {
    ResolveResult res;
    if (depth < 1) {
      res.failure = ResolveFailure::DepthExceeded;
      return res;
    }
    if (visited.count(goal.space)) {
      res.failure = ResolveFailure::CyclicDecomposition;
      return res;
    }
    if (!mem_.has_data(goal.space)) {
      res.failure = ResolveFailure::NoData;
      return res;
    }
    visited.insert(goal.space);

    const std::size_t rec_id = choose_record(goal);
    const auto& rec = mem_.at(rec_id);
    if (lc_kind(rec.lc) == LcKind::Procedure && depth > 1) {
      const auto proc = Procedure::from_sequence(rec.lc);
      const auto nodes = proc.spaces();
      if (edge_usable(goal.space, nodes)) {
        std::vector<CompoundAction> parts;
        std::vector<std::pair<SpaceId, std::vector<SpaceId>>> inner;
        bool ok = true;
        for (const auto& c : proc.components) {
          auto sub = resolve(c, depth - 1, visited);
          if (!sub.ok()) {
            ok = false;
            break;
          }
          parts.push_back(std::move(*sub.action));
          inner.insert(inner.end(), sub.expanded.begin(), sub.expanded.end());
        }
        if (ok) {
          res.action = truncate(concat(parts));
          res.expanded.emplace_back(goal.space, nodes);
          res.expanded.insert(res.expanded.end(), inner.begin(), inner.end());
          return res;
        }
      }
    }
    res.action = truncate(rec.action);
    return res;
  }

  /// Record whose reached outcome answers the goal: the lowest expected
  /// error, where a record costs distance/diameter plus a per-extra-primitive
  /// penalty, and an expandable procedure record additionally costs the
  /// normalized distance from each component to its own nearest outcome.
  std::size_t choose_record(const Outcome& goal) const {
    const double diam = mem_.space(goal.space).diameter();
    std::optional<std::size_t> best;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, std::size_t>> procs;
    mem_.for_each_in(goal.space, [&](std::size_t r, const Vec& v) {
      const auto& rec = mem_.at(r);
      const double score =
          distance(v, goal.value) / diam + params_.length_penalty * (static_cast<double>(rec.action.size()) - 1.0);
      if (lc_kind(rec.lc) == LcKind::Procedure && edge_usable(goal.space, lc_procedure_spaces(rec.lc))) {
        procs.emplace_back(score, r);
      } else if (!best || score < best_score) {
        best = r;
        best_score = score;
      }
    });
    const std::size_t k = std::min(kProcedureCandidates, procs.size());
    std::partial_sort(procs.begin(), procs.begin() + static_cast<std::ptrdiff_t>(k), procs.end());
    for (std::size_t i = 0; i < k; ++i) {
      const double score = procs[i].first + component_error(mem_.at(procs[i].second).lc);
      if (!best || score < best_score) {
        best = procs[i].second;
        best_score = score;
      }
    }
    if (!best) throw Error("no data");
    return *best;
  }

  /// Sum over outcome components of distance to the nearest stored outcome,
  /// normalized by the component's space diameter.
  double component_error(const ControllableSequence& lc) const {
    double e = 0.0;
    for (const auto& c : lc) {
      if (is_primitive(c)) continue;
      const auto& o = std::get<Outcome>(c);
      const auto nb = mem_.nearest(o.space, o.value, 1);
      if (nb.empty()) return std::numeric_limits<double>::infinity();
      e += nb.front().distance / mem_.space(o.space).diameter();
    }
    return e;
  }

 private:
  bool edge_usable(SpaceId from, const std::vector<SpaceId>& nodes) const {
    if (!h_.has_node(from)) return false;
    for (const auto& d : h_.decompositions(from))
      if (d.nodes == nodes) return !h_.pruned(d);
    return false;
  }

  CompoundAction truncate(CompoundAction a) const {
    if (a.size() > params_.max_length) a.primitives.resize(params_.max_length);
    return a;
  }

  const EpisodicMemory& mem_;
  const HierarchyGraph& h_;
  ResolveParams params_;
  static constexpr std::size_t kProcedureCandidates = 8;
};

/// Exponential moving average of an edge weight toward 1 + competence.
inline double ema_weight(double w, double comp, double rate = 0.1) {
  return std::clamp(w + rate * ((1.0 + comp) - w), 0.0, 1.0);
}

}  // namespace sgim
