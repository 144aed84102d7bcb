#pragma once

// Competence, progress-based interest and the region partition used to pick
// the next (strategy, space, goal).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace sgim {

/// Normalized negative distance, clipped at -1; "not produced" gives -1.
inline double competence(const Outcome& goal, const std::optional<Outcome>& reached, const OutcomeSpace& space) {
  if (goal.space != space.id) throw Error("competence: goal is not in the given space");
  if (!reached) return -1.0;
  if (reached->space != space.id) throw Error("competence: goal and reached outcome lie in different spaces");
  return -std::min(1.0, distance(goal.value, reached->value) / space.diameter());
}

inline double competence(std::span<const double> goal, const std::optional<Vec>& reached, const OutcomeSpace& space) {
  if (!reached) return -1.0;
  return -std::min(1.0, distance(goal, *reached) / space.diameter());
}

struct InterestParams {
  std::size_t window = 20;
  std::size_t split_threshold = 50;
  double novelty = 0.01;
  double p_exploit = 0.7;
  double p_pair = 0.2;  ///< the remainder is the fully random mode
  double autonomous_cost = 1.0;
  double mimicry_cost = 5.0;
};

/// Progress over the newest `window` competences (chronological order): the
/// absolute difference of the half means, plus a novelty bonus that decays
/// with the total count.
inline double progress_interest(std::span<const double> comps, const InterestParams& p = {}) {
  const double bonus = p.novelty / (1.0 + static_cast<double>(comps.size()));
  const std::size_t n = std::min(p.window, comps.size());
  if (n < 4) return bonus;
  auto recent = comps.subspan(comps.size() - n);
  const std::size_t half = n / 2;
  const auto old_half = recent.subspan(0, half);
  const auto new_half = recent.subspan(n - half);
  const double m_old = std::accumulate(old_half.begin(), old_half.end(), 0.0) / static_cast<double>(half);
  const double m_new = std::accumulate(new_half.begin(), new_half.end(), 0.0) / static_cast<double>(half);
  return std::abs(m_new - m_old) + bonus;
}

struct HistoryEntry {
  Vec goal;
  double competence = 0.0;
  std::size_t episode = 0;
  StrategyId strategy;
};

struct Region {
  SpaceId space;
  Vec lower, upper;
  std::vector<HistoryEntry> history;
  // split description; children are -1 for leaves
  int left = -1, right = -1;
  std::size_t split_dim = 0;
  double split_cut = 0.0;

  bool leaf() const { return left < 0; }
};

inline constexpr double kMeanTolerance = 1e-12;

struct SplitChoice {
  std::size_t dim = 0;
  double cut = 0.0;
  bool fallback = false;
};

/// Chooses a split of a region from its history: over each dimension, five
/// quantile cuts, scored by card(L)*card(R)*|mean(L)-mean(R)|. Lowest
/// dimension then lowest cut win ties. With no informative cut, the box
/// midpoint of the widest dimension is used.
inline SplitChoice choose_split(const Vec& lower, const Vec& upper, const std::vector<HistoryEntry>& history) {
  const std::size_t dims = lower.size();
  const std::size_t n = history.size();
  double best_score = 0.0;
  std::optional<SplitChoice> best;
  for (std::size_t d = 0; d < dims; ++d) {
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = history[i].goal[d];
    std::sort(xs.begin(), xs.end());
    std::vector<double> cuts;
    for (std::size_t q = 1; q <= 5; ++q) cuts.push_back(xs[q * n / 6]);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (double cut : cuts) {
      if (!(cut > lower[d] && cut < upper[d])) continue;
      double sl = 0.0, sr = 0.0;
      std::size_t nl = 0, nr = 0;
      for (const auto& e : history) {
        if (e.goal[d] < cut) {
          sl += e.competence;
          ++nl;
        } else {
          sr += e.competence;
          ++nr;
        }
      }
      if (nl == 0 || nr == 0) continue;
      const double gap = std::abs(sl / static_cast<double>(nl) - sr / static_cast<double>(nr));
      // mean differences at rounding level count as no difference
      const double score = gap > kMeanTolerance ? static_cast<double>(nl) * static_cast<double>(nr) * gap : 0.0;
      if (score > best_score) {
        best_score = score;
        best = SplitChoice{d, cut, false};
      }
    }
  }
  if (best) return *best;
  std::size_t wd = 0;
  for (std::size_t d = 1; d < dims; ++d)
    if (upper[d] - lower[d] > upper[wd] - lower[wd]) wd = d;
  return {wd, 0.5 * (lower[wd] + upper[wd]), true};
}

struct Selection {
  StrategyId strategy;
  SpaceId space;
  Vec goal;
  int mode = 0;  ///< 0 argmax interest, 1 uniform pair, 2 fully random
};

/// Per-space binary region trees. Leaves are half-open boxes
/// [lower, upper), closed on the space's own upper bound.
class InterestMap {
 public:
  InterestMap() = default;
  InterestMap(std::vector<OutcomeSpace> spaces, InterestParams params = {})
      : spaces_(std::move(spaces)), params_(params), trees_(spaces_.size()) {
    for (std::size_t s = 0; s < spaces_.size(); ++s) {
      Region root;
      root.space = spaces_[s].id;
      root.lower = spaces_[s].lower;
      root.upper = spaces_[s].upper;
      trees_[s].push_back(std::move(root));
    }
  }

  const InterestParams& params() const { return params_; }
  const std::vector<OutcomeSpace>& spaces() const { return spaces_; }

  /// Registers a strategy for a set of spaces (in the order given).
  void allow(StrategyId strategy, std::vector<SpaceId> spaces) {
    for (auto& [s, sp] : allowed_)
      if (s == strategy) {
        sp = std::move(spaces);
        return;
      }
    allowed_.emplace_back(strategy, std::move(spaces));
  }

  const std::vector<std::pair<StrategyId, std::vector<SpaceId>>>& allowed() const { return allowed_; }

  double cost(const StrategyId& s) const { return s.is_mimicry() ? params_.mimicry_cost : params_.autonomous_cost; }

  const std::vector<Region>& tree(SpaceId s) const { return trees_.at(static_cast<std::size_t>(s.value)); }

  std::vector<int> leaves(SpaceId s) const {
    std::vector<int> out;
    const auto& t = tree(s);
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i].leaf()) out.push_back(static_cast<int>(i));
    return out;
  }

  int locate(SpaceId s, std::span<const double> x) const {
    const auto& t = tree(s);
    int i = 0;
    while (!t[static_cast<std::size_t>(i)].leaf()) {
      const auto& r = t[static_cast<std::size_t>(i)];
      i = x[r.split_dim] < r.split_cut ? r.left : r.right;
    }
    return i;
  }

  const Region& region_of(SpaceId s, std::span<const double> x) const {
    return tree(s)[static_cast<std::size_t>(locate(s, x))];
  }

  double interest(const Region& r, const StrategyId& strategy) const {
    std::vector<double> comps;
    for (const auto& e : r.history)
      if (e.strategy == strategy) comps.push_back(e.competence);
    return progress_interest(comps, params_);
  }

  template <class Rng>
  Selection select(Rng& rng) const {
    if (allowed_.empty()) throw Error("interest map has no strategies");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double mode_draw = u01(rng);
    struct Pair {
      std::size_t strategy;
      SpaceId space;
      int region;
    };
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < allowed_.size(); ++k)
      for (SpaceId s : allowed_[k].second)
        for (int leaf : leaves(s)) pairs.push_back({k, s, leaf});
    if (pairs.empty()) throw Error("interest map has no selectable pairs");

    Selection sel;
    if (mode_draw < params_.p_exploit) {
      sel.mode = 0;
      std::size_t best = 0;
      double best_v = -1.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const auto& st = allowed_[p.strategy].first;
        const double v = interest(tree(p.space)[static_cast<std::size_t>(p.region)], st) / cost(st);
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      const auto& p = pairs[best];
      sel.strategy = allowed_[p.strategy].first;
      sel.space = p.space;
      sel.goal = sample_in(tree(p.space)[static_cast<std::size_t>(p.region)], rng);
    } else if (mode_draw < params_.p_exploit + params_.p_pair) {
      sel.mode = 1;
      std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
      const auto& p = pairs[pick(rng)];
      sel.strategy = allowed_[p.strategy].first;
      sel.space = p.space;
      sel.goal = sample_in(tree(p.space)[static_cast<std::size_t>(p.region)], rng);
    } else {
      sel.mode = 2;
      std::vector<SpaceId> spaces;
      for (const auto& sp : spaces_) {
        for (const auto& [st, allowed] : allowed_)
          if (std::find(allowed.begin(), allowed.end(), sp.id) != allowed.end()) {
            spaces.push_back(sp.id);
            break;
          }
      }
      std::uniform_int_distribution<std::size_t> pick_space(0, spaces.size() - 1);
      sel.space = spaces[pick_space(rng)];
      std::vector<StrategyId> strategies;
      for (const auto& [st, allowed] : allowed_)
        if (std::find(allowed.begin(), allowed.end(), sel.space) != allowed.end()) strategies.push_back(st);
      std::uniform_int_distribution<std::size_t> pick_strategy(0, strategies.size() - 1);
      sel.strategy = strategies[pick_strategy(rng)];
      const auto& sp = spaces_.at(static_cast<std::size_t>(sel.space.value));
      sel.goal.resize(sp.dim());
      for (std::size_t d = 0; d < sp.dim(); ++d)
        sel.goal[d] = std::uniform_real_distribution<double>(sp.lower[d], sp.upper[d])(rng);
    }
    return sel;
  }

  /// Appends to the enclosing leaf and splits it when its history exceeds the
  /// threshold.
  void update(SpaceId s, const Vec& goal, const StrategyId& strategy, double comp, std::size_t episode) {
    auto& t = trees_.at(static_cast<std::size_t>(s.value));
    const int i = locate(s, goal);
    t[static_cast<std::size_t>(i)].history.push_back({goal, comp, episode, strategy});
    if (t[static_cast<std::size_t>(i)].history.size() > params_.split_threshold) split(s, i);
  }

  /// Splits a leaf into two children that inherit its entries.
  void split(SpaceId s, int index) {
    auto& t = trees_.at(static_cast<std::size_t>(s.value));
    const auto choice = choose_split(t[static_cast<std::size_t>(index)].lower, t[static_cast<std::size_t>(index)].upper,
                                     t[static_cast<std::size_t>(index)].history);
    Region left, right;
    {
      const auto& parent = t[static_cast<std::size_t>(index)];
      left.space = right.space = parent.space;
      left.lower = right.lower = parent.lower;
      left.upper = right.upper = parent.upper;
      left.upper[choice.dim] = choice.cut;
      right.lower[choice.dim] = choice.cut;
      for (const auto& e : parent.history) (e.goal[choice.dim] < choice.cut ? left : right).history.push_back(e);
    }
    t.push_back(std::move(left));
    t.push_back(std::move(right));
    auto& parent = t[static_cast<std::size_t>(index)];
    parent.left = static_cast<int>(t.size()) - 2;
    parent.right = static_cast<int>(t.size()) - 1;
    parent.split_dim = choice.dim;
    parent.split_cut = choice.cut;
  }

  /// Point membership under the half-open convention.
  bool leaf_contains(SpaceId s, const Region& r, std::span<const double> x) const {
    const auto& sp = spaces_.at(static_cast<std::size_t>(s.value));
    for (std::size_t d = 0; d < x.size(); ++d) {
      if (x[d] < r.lower[d]) return false;
      if (r.upper[d] == sp.upper[d] ? x[d] > r.upper[d] : x[d] >= r.upper[d]) return false;
    }
    return true;
  }

  /// Structural partition check: children tile their parent exactly, leaf
  /// histories lie inside their boxes, every interest is nonnegative.
  std::vector<std::string> check() const {
    std::vector<std::string> errs;
    for (std::size_t s = 0; s < trees_.size(); ++s) {
      const auto& t = trees_[s];
      if (t.empty() || t[0].lower != spaces_[s].lower || t[0].upper != spaces_[s].upper)
        errs.push_back("root box differs from space box in " + spaces_[s].name);
      for (const auto& r : t) {
        if (!r.leaf()) {
          const auto& l = t[static_cast<std::size_t>(r.left)];
          const auto& rr = t[static_cast<std::size_t>(r.right)];
          for (std::size_t d = 0; d < r.lower.size(); ++d) {
            const bool on_split = d == r.split_dim;
            if (l.lower[d] != r.lower[d] || rr.upper[d] != r.upper[d] ||
                (on_split ? (l.upper[d] != r.split_cut || rr.lower[d] != r.split_cut)
                          : (l.upper[d] != r.upper[d] || rr.lower[d] != r.lower[d])))
              errs.push_back("children do not tile parent in " + spaces_[s].name);
          }
          if (!(r.split_cut > r.lower[r.split_dim] && r.split_cut < r.upper[r.split_dim]))
            errs.push_back("degenerate cut in " + spaces_[s].name);
        } else {
          for (const auto& e : r.history) {
            if (!leaf_contains(r.space, r, e.goal)) errs.push_back("history entry outside its region in " + spaces_[s].name);
            if (!(e.competence >= -1.0 && e.competence <= 0.0)) errs.push_back("competence out of range");
          }
          for (const auto& [st, _] : allowed_)
            if (!(interest(r, st) >= 0.0)) errs.push_back("negative interest");
        }
      }
    }
    return errs;
  }

  /// Indented text dump of every region tree.
  std::string dump() const {
    std::ostringstream os;
    os.precision(4);
    for (std::size_t s = 0; s < trees_.size(); ++s) {
      os << "space " << spaces_[s].name << "\n";
      dump_node(os, s, 0, 1);
    }
    return os.str();
  }

 private:
  template <class Rng>
  static Vec sample_in(const Region& r, Rng& rng) {
    Vec g(r.lower.size());
    for (std::size_t d = 0; d < g.size(); ++d) g[d] = std::uniform_real_distribution<double>(r.lower[d], r.upper[d])(rng);
    return g;
  }

  void dump_node(std::ostringstream& os, std::size_t s, int i, int depth) const {
    const auto& r = trees_[s][static_cast<std::size_t>(i)];
    os << std::string(static_cast<std::size_t>(depth) * 2, ' ') << "[";
    for (std::size_t d = 0; d < r.lower.size(); ++d) os << (d ? ", " : "") << r.lower[d] << ".." << r.upper[d];
    os << "] entries=" << r.history.size();
    if (r.leaf()) {
      for (const auto& [st, spaces] : allowed_)
        if (std::find(spaces.begin(), spaces.end(), r.space) != spaces.end())
          os << " " << st.name() << "=" << interest(r, st);
      os << "\n";
    } else {
      os << " split d" << r.split_dim << "@" << r.split_cut << "\n";
      dump_node(os, s, r.left, depth + 1);
      dump_node(os, s, r.right, depth + 1);
    }
  }

  std::vector<OutcomeSpace> spaces_;
  InterestParams params_;
  std::vector<std::vector<Region>> trees_;
  std::vector<std::pair<StrategyId, std::vector<SpaceId>>> allowed_;

  friend struct InterestMapAccess;
};

}  // namespace sgim
