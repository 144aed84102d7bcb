#pragma once

// Simulated demonstrators built from scripted solutions.

#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "envs.hpp"
#include "interest.hpp"

namespace sgim {

enum class TeacherKind { Action, Procedure };

inline std::string to_string(TeacherKind k) { return k == TeacherKind::Action ? "action" : "procedure"; }

inline TeacherKind parse_teacher_kind(const std::string& s) {
  if (s == "action") return TeacherKind::Action;
  if (s == "procedure") return TeacherKind::Procedure;
  throw Error("unknown teacher kind: " + s);
}

struct Demo {
  Vec goal;
  CompoundAction action;  ///< action demos
  Procedure procedure;    ///< procedure demos
};

class Teacher {
 public:
  Teacher() = default;
  Teacher(int id, TeacherKind kind, SpaceId target, std::vector<Demo> repertoire)
      : id_(id), kind_(kind), target_(target), repertoire_(std::move(repertoire)) {}

  int id() const { return id_; }
  TeacherKind kind() const { return kind_; }
  SpaceId target() const { return target_; }
  const std::vector<Demo>& repertoire() const { return repertoire_; }
  bool empty() const { return repertoire_.empty(); }

  /// Entry whose goal is nearest; ties go to the earlier entry.
  const Demo& demo(std::span<const double> goal) const {
    if (repertoire_.empty()) throw Error("teacher has an empty repertoire");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < repertoire_.size(); ++i) {
      const double d = squared_distance(repertoire_[i].goal, goal);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return repertoire_[best];
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "teacher " << id_ << " kind=" << to_string(kind_) << " space=" << target_.value
       << " demos=" << repertoire_.size() << "\n";
    for (const auto& d : repertoire_) {
      os << "goal";
      for (double v : d.goal) os << " " << v;
      os << " |";
      if (kind_ == TeacherKind::Action) {
        os << " action";
        for (std::size_t i = 0; i < d.action.size(); ++i) {
          os << (i ? " ;" : "");
          for (double v : d.action.primitives[i].params) os << " " << v;
        }
      } else {
        os << " procedure";
        for (std::size_t i = 0; i < d.procedure.components.size(); ++i) {
          const auto& c = d.procedure.components[i];
          os << (i ? " ;" : "") << " " << c.space.value << ":";
          for (double v : c.value) os << " " << v;
        }
      }
      os << "\n";
    }
    return os.str();
  }

  /// Parses one teacher block produced by to_text.
  static Teacher from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw Error("teacher text: empty");
    Teacher t;
    {
      std::istringstream hs(line);
      std::string word, kind, space, demos;
      hs >> word >> t.id_ >> kind >> space >> demos;
      if (word != "teacher" || kind.rfind("kind=", 0) != 0 || space.rfind("space=", 0) != 0)
        throw Error("teacher text: bad header");
      t.kind_ = parse_teacher_kind(kind.substr(5));
      t.target_ = SpaceId{std::stoi(space.substr(6))};
    }
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto bar = line.find('|');
      if (line.rfind("goal", 0) != 0 || bar == std::string::npos) throw Error("teacher text: bad demo line");
      Demo d;
      std::istringstream gs(line.substr(4, bar - 4));
      for (double v; gs >> v;) d.goal.push_back(v);
      std::istringstream rest(line.substr(bar + 1));
      std::string tag;
      rest >> tag;
      std::string body;
      std::getline(rest, body);
      std::vector<std::string> parts;
      std::string cur;
      for (char ch : body) {
        if (ch == ';') {
          parts.push_back(cur);
          cur.clear();
        } else {
          cur += ch;
        }
      }
      parts.push_back(cur);
      for (const auto& part : parts) {
        if (tag == "action") {
          std::istringstream ps(part);
          ActionPrimitive p;
          for (double v; ps >> v;) p.params.push_back(v);
          d.action.primitives.push_back(p);
        } else if (tag == "procedure") {
          const auto colon = part.find(':');
          if (colon == std::string::npos) throw Error("teacher text: bad procedure component");
          Outcome o{SpaceId{std::stoi(part.substr(0, colon))}, {}};
          std::istringstream vs(part.substr(colon + 1));
          for (double v; vs >> v;) o.value.push_back(v);
          d.procedure.components.push_back(o);
        } else {
          throw Error("teacher text: unknown demo tag " + tag);
        }
      }
      t.repertoire_.push_back(std::move(d));
    }
    return t;
  }

 private:
  int id_ = 0;
  TeacherKind kind_ = TeacherKind::Action;
  SpaceId target_;
  std::vector<Demo> repertoire_;
};

/// Goal set for a teacher: a grid over 2-D spaces, grid^2 seeded samples
/// otherwise.
inline std::vector<Vec> teacher_goals(const OutcomeSpace& sp, int grid, std::uint64_t seed) {
  std::vector<Vec> goals;
  if (grid <= 0) return goals;
  if (sp.dim() == 2) {
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        auto at = [&](std::size_t d, int k) {
          return grid == 1 ? 0.5 * (sp.lower[d] + sp.upper[d])
                           : sp.lower[d] + sp.width(d) * static_cast<double>(k) / (grid - 1);
        };
        goals.push_back({at(0, i), at(1, j)});
      }
    return goals;
  }
  std::mt19937_64 rng(seed);
  const int n = grid * grid * 8;
  for (int i = 0; i < n; ++i) {
    Vec g(sp.dim());
    for (std::size_t d = 0; d < sp.dim(); ++d) g[d] = std::uniform_real_distribution<double>(sp.lower[d], sp.upper[d])(rng);
    goals.push_back(std::move(g));
  }
  return goals;
}

/// Builds a teacher from scripted solutions, keeping only demos whose noise-
/// free replay reaches within 5% of the space diameter. Procedure demos split
/// the goal into two halves in the ground-truth child space.
inline Teacher build_teacher(const Environment& env, int id, TeacherKind kind, SpaceId target, int grid,
                             std::uint64_t seed, std::vector<std::string>* log = nullptr) {
  const auto& sp = env.space(target);
  const auto want = static_cast<std::size_t>(std::max(grid, 0) * std::max(grid, 0));
  std::optional<SpaceId> child;
  if (kind == TeacherKind::Procedure) {
    const auto h = env.ground_truth();
    for (const auto& d : h.decompositions(target))
      if (d.nodes.size() == 1 && d.nodes[0] != kActionNode && env.space(d.nodes[0]).dim() * 2 == sp.dim()) child = d.nodes[0];
    if (!child) throw Error("procedure teacher: space " + sp.name + " has no two-part decomposition");
  }
  auto env_copy = env.clone();
  std::vector<Demo> demos;
  for (const auto& g : teacher_goals(sp, grid, seed)) {
    if (demos.size() >= want) break;
    Demo d;
    d.goal = g;
    CompoundAction replay;
    if (kind == TeacherKind::Action) {
      auto a = env.script(target, g, seed);
      if (!a) {
        if (log && sp.dim() == 2) log->push_back("dropped unreachable goal in " + sp.name);
        continue;
      }
      d.action = *a;
      replay = *a;
    } else {
      const std::size_t half = sp.dim() / 2;
      Outcome c1{*child, Vec(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(half))};
      Outcome c2{*child, Vec(g.begin() + static_cast<std::ptrdiff_t>(half), g.end())};
      auto a1 = env.script(*child, c1.value, seed);
      auto a2 = env.script(*child, c2.value, seed);
      if (!a1 || !a2) continue;
      d.procedure.components = {c1, c2};
      replay = concat({*a1, *a2});
    }
    const auto trace = run_episode(*env_copy, seed, replay);
    if (competence(g, trace.reached[static_cast<std::size_t>(target.value)], sp) < -0.05) {
      if (log && sp.dim() == 2) log->push_back("dropped goal failing replay in " + sp.name);
      continue;
    }
    demos.push_back(std::move(d));
  }
  if (demos.empty()) throw Error("teacher for " + sp.name + " has an empty repertoire");
  return Teacher(id, kind, target, std::move(demos));
}

}  // namespace sgim
