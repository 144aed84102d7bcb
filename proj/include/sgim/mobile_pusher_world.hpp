#pragma once

// Differential-drive disc robot pushing two green discs in the unit square,
// with one fixed red obstacle.

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "envs.hpp"

namespace sgim {

struct Disc {
  double x = 0, y = 0, r = 0;
};

class MobilePusherWorld : public Environment {
 public:
  static constexpr int kSubsteps = 20;
  static constexpr double kRobotRadius = 0.05;
  static constexpr double kTravel = 0.2;  ///< distance per primitive at full forward speed
  static constexpr double kTurn = 1.0;    ///< radians per primitive at full opposite speeds
  static constexpr double kStartX = 0.5, kStartY = 0.25;
  static constexpr Disc kRed{0.2, 0.8, 0.08};
  static constexpr double kMoved = 1e-9;

  static constexpr SpaceId kRobot{0}, kObject1{1}, kObject2{2};

  MobilePusherWorld() {
    spaces_ = {OutcomeSpace(kRobot, "robot", {0, 0}, {1, 1}), OutcomeSpace(kObject1, "object1", {0, 0}, {1, 1}),
               OutcomeSpace(kObject2, "object2", {0, 0}, {1, 1})};
    reset(0);
  }

  std::string id() const override { return "mobile-pusher"; }
  std::size_t action_dim() const override { return 2; }
  const std::vector<OutcomeSpace>& spaces() const override { return spaces_; }
  std::size_t context_dim() const override { return 14; }
  std::vector<std::string> context_names() const override {
    return {"robot_x", "robot_y", "cos_heading", "sin_heading", "obj1_x", "obj1_y", "obj1_r",
            "obj2_x",  "obj2_y",  "obj2_r",      "rel1_x",      "rel1_y", "rel2_x", "rel2_y"};
  }

  /// Layout drawn from the seed; object 2 sits beyond object 1 as seen from
  /// the robot's start.
  Vec reset(std::uint64_t seed) override {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
    robot_ = {kStartX, kStartY, kRobotRadius};
    heading_ = std::numbers::pi / 2;
    obj_[0].r = uni(0.03, 0.08);
    obj_[1].r = uni(0.03, 0.08);
    obj_[0].x = uni(0.3, 0.7);
    obj_[0].y = uni(0.42, 0.55);
    obj_[1].x = obj_[0].x + uni(-0.06, 0.06);
    obj_[1].y = obj_[0].y + obj_[0].r + obj_[1].r + uni(0.01, 0.08);
    resolve_contacts(true);
    start_ = obj_;
    via1_ = false;
    return context();
  }

  void set_layout(const Disc& o1, const Disc& o2) {
    obj_ = {o1, o2};
    start_ = obj_;
    via1_ = false;
  }
  void set_robot(double x, double y, double heading) {
    robot_.x = x;
    robot_.y = y;
    heading_ = heading;
  }
  const Disc& robot() const { return robot_; }
  double heading() const { return heading_; }
  const Disc& object(std::size_t i) const { return obj_.at(i); }

  Vec context() const override {
    return {robot_.x,  robot_.y,  std::cos(heading_), std::sin(heading_), obj_[0].x,           obj_[0].y,
            obj_[0].r, obj_[1].x, obj_[1].y,          obj_[1].r,          obj_[0].x - robot_.x, obj_[0].y - robot_.y,
            obj_[1].x - obj_[0].x, obj_[1].y - obj_[0].y};
  }

  OutcomeSet state_values() const override {
    return {Vec{robot_.x, robot_.y}, Vec{obj_[0].x, obj_[0].y}, Vec{obj_[1].x, obj_[1].y}};
  }

  std::vector<Substep> step(const ActionPrimitive& a) override {
    check_primitive(a);
    const double v = kTravel * 0.5 * (a.params[0] + a.params[1]) / kSubsteps;
    const double w = kTurn * 0.5 * (a.params[1] - a.params[0]) / kSubsteps;
    std::vector<Substep> trace;
    trace.reserve(kSubsteps);
    for (int s = 0; s < kSubsteps; ++s) {
      heading_ += 0.5 * w;
      robot_.x += v * std::cos(heading_);
      robot_.y += v * std::sin(heading_);
      heading_ += 0.5 * w;
      resolve_contacts(false);
      trace.push_back({{robot_.x, robot_.y, heading_, obj_[0].x, obj_[0].y, obj_[1].x, obj_[1].y}});
    }
    return trace;
  }

  OutcomeSet observe() const override {
    OutcomeSet o(3);
    auto clipped = [&](SpaceId s, Vec v) {
      spaces_[static_cast<std::size_t>(s.value)].clip(v);
      return v;
    };
    o[0] = clipped(kRobot, {robot_.x, robot_.y});
    if (moved(0)) o[1] = clipped(kObject1, {obj_[0].x, obj_[0].y});
    if (via1_ && moved(1)) o[2] = clipped(kObject2, {obj_[1].x, obj_[1].y});
    return o;
  }

  HierarchyGraph ground_truth() const override {
    HierarchyGraph h;
    h.add_node(kActionNode, "A");
    for (const auto& s : spaces_) h.add_node(s.id, s.name);
    h.add_decomposition(kRobot, {kActionNode}, 1.0);
    h.add_decomposition(kObject1, {kRobot}, 1.0);
    h.add_decomposition(kObject2, {kObject1}, 1.0);
    return h;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<MobilePusherWorld>(*this); }

  /// Largest pairwise overlap among all bodies and walls (0 when separated).
  double max_overlap() const {
    double worst = 0.0;
    auto pair = [&](const Disc& a, const Disc& b) {
      worst = std::max(worst, a.r + b.r - std::hypot(a.x - b.x, a.y - b.y));
    };
    pair(robot_, obj_[0]);
    pair(robot_, obj_[1]);
    pair(obj_[0], obj_[1]);
    pair(robot_, kRed);
    pair(obj_[0], kRed);
    pair(obj_[1], kRed);
    for (const Disc* d : {&robot_, &obj_[0], &obj_[1]}) {
      worst = std::max({worst, d->r - d->x, d->x + d->r - 1.0, d->r - d->y, d->y + d->r - 1.0});
    }
    return std::max(worst, 0.0);
  }

  std::optional<CompoundAction> script(SpaceId space, const Vec& goal, std::uint64_t seed) const override;

  // Closed-loop controller primitives, exposed for scripted scenarios.
  ActionPrimitive drive_toward(double gx, double gy) const {
    const double dx = gx - robot_.x, dy = gy - robot_.y;
    const double dist = std::hypot(dx, dy);
    const double err = wrap(std::atan2(dy, dx) - heading_);
    if (std::abs(err) > 0.1) {
      const double s = std::clamp(err / kTurn, -1.0, 1.0);
      return ActionPrimitive{{-s, s}};
    }
    const double v = std::clamp(dist / kTravel, 0.0, 1.0);
    return ActionPrimitive{{v, v}};
  }

 private:
  static double wrap(double a) {
    while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
    while (a < -std::numbers::pi) a += 2 * std::numbers::pi;
    return a;
  }

  bool moved(std::size_t i) const {
    return std::hypot(obj_[i].x - start_[i].x, obj_[i].y - start_[i].y) > kMoved;
  }

  static void keep_inside(Disc& d) {
    d.x = std::clamp(d.x, d.r, 1.0 - d.r);
    d.y = std::clamp(d.y, d.r, 1.0 - d.r);
  }

  // Moves `mover` out of `fixed` along the centre line; returns the shift.
  static double push_out(Disc& mover, const Disc& fixed, double share = 1.0) {
    double dx = mover.x - fixed.x, dy = mover.y - fixed.y;
    double d = std::hypot(dx, dy);
    const double overlap = mover.r + fixed.r - d;
    if (overlap <= 0.0) return 0.0;
    if (d < 1e-12) {
      dx = 0.0;
      dy = 1.0;
      d = 1.0;
    }
    mover.x += share * overlap * dx / d;
    mover.y += share * overlap * dy / d;
    return share * overlap;
  }

  // Greens yield to the robot and split overlaps between themselves; walls
  // and the red disc are immovable. The robot is pushed back last so that a
  // blocked green stops it.
  void resolve_contacts(bool layout_only) {
    for (int it = 0; it < 60; ++it) {
      double shift = 0.0;
      if (!layout_only) {
        shift += push_out(obj_[0], robot_);
        shift += push_out(obj_[1], robot_);
      }
      {
        Disc a = obj_[0], b = obj_[1];
        const double s = push_out(obj_[1], a, 0.5);
        push_out(obj_[0], b, 0.5);
        if (s > 0.0 && !layout_only) via1_ = true;
        shift += 2 * s;
      }
      for (auto& o : obj_) {
        shift += push_out(o, kRed);
        const Disc before = o;
        keep_inside(o);
        shift += std::hypot(o.x - before.x, o.y - before.y);
      }
      if (!layout_only) {
        shift += push_out(robot_, obj_[0]);
        shift += push_out(robot_, obj_[1]);
        shift += push_out(robot_, kRed);
        const Disc before = robot_;
        keep_inside(robot_);
        shift += std::hypot(robot_.x - before.x, robot_.y - before.y);
      }
      if (shift < 1e-12) break;
    }
  }

  std::vector<OutcomeSpace> spaces_;
  Disc robot_{kStartX, kStartY, kRobotRadius};
  double heading_ = std::numbers::pi / 2;
  std::array<Disc, 2> obj_{};
  std::array<Disc, 2> start_{};
  bool via1_ = false;
};

inline std::optional<CompoundAction> MobilePusherWorld::script(SpaceId space, const Vec& goal,
                                                               std::uint64_t seed) const {
  constexpr int kMaxPrimitives = 16;
  constexpr double kTol = 0.02;
  MobilePusherWorld w(*this);
  w.reset(seed);
  CompoundAction a;
  auto run = [&](const ActionPrimitive& p) {
    w.step(p);
    a.primitives.push_back(p);
    return static_cast<int>(a.size()) < kMaxPrimitives;
  };
  auto at = [&](const Disc& d, double x, double y, double tol) { return std::hypot(d.x - x, d.y - y) <= tol; };

  // Push `which` toward (gx, gy): line up behind it, then drive through.
  auto push_to = [&](std::size_t which, double gx, double gy) {
    for (int guard = 0; guard < kMaxPrimitives; ++guard) {
      const Disc& o = w.obj_[which];
      const double dx = gx - o.x, dy = gy - o.y, dist = std::hypot(dx, dy);
      if (dist <= kTol * 0.5) return true;
      const double ux = dx / dist, uy = dy / dist;
      const double standoff = o.r + kRobotRadius + 0.01;
      const double sx = o.x - ux * standoff, sy = o.y - uy * standoff;
      if (!at(w.robot_, sx, sy, 0.02)) {
        // detour around the object when the straight approach would hit it
        const double rx = w.robot_.x - o.x, ry = w.robot_.y - o.y;
        const bool in_front = rx * ux + ry * uy > 0.0;
        double tx = sx, ty = sy;
        if (in_front) {
          const double side = (rx * -uy + ry * ux) >= 0.0 ? 1.0 : -1.0;
          tx = o.x + side * -uy * (standoff + 0.03);
          ty = o.y + side * ux * (standoff + 0.03);
        }
        if (!run(w.drive_toward(tx, ty))) return false;
        continue;
      }
      const double err = wrap(std::atan2(uy, ux) - w.heading_);
      if (std::abs(err) > 0.05) {
        const double s = std::clamp(err / kTurn, -1.0, 1.0);
        if (!run(ActionPrimitive{{-s, s}})) return false;
        continue;
      }
      const double v = std::clamp((dist + 0.01) / kTravel, 0.0, 1.0);
      if (!run(ActionPrimitive{{v, v}})) return false;
    }
    return false;
  };

  if (space == kRobot) {
    for (int guard = 0; guard < kMaxPrimitives; ++guard) {
      if (at(w.robot_, goal[0], goal[1], kTol * 0.5)) break;
      if (!run(w.drive_toward(goal[0], goal[1]))) break;
    }
  } else if (space == kObject1) {
    push_to(0, goal[0], goal[1]);
  } else if (space == kObject2) {
    // bring object 1 behind object 2 along the desired direction, then push
    const double dx = goal[0] - w.obj_[1].x, dy = goal[1] - w.obj_[1].y, dist = std::hypot(dx, dy);
    if (dist > 1e-9) {
      const double ux = dx / dist, uy = dy / dist;
      const double c = w.obj_[0].r + w.obj_[1].r;
      push_to(0, w.obj_[1].x - ux * (c + 0.005), w.obj_[1].y - uy * (c + 0.005));
      push_to(0, goal[0] - ux * c, goal[1] - uy * c);
    }
  } else {
    throw Error("unknown space");
  }
  if (a.empty()) return std::nullopt;
  auto trace = run_episode(w, seed, a);
  const auto& r = trace.reached[static_cast<std::size_t>(space.value)];
  if (!r || distance(*r, goal) > kTol) return std::nullopt;
  return a;
}

}  // namespace sgim
