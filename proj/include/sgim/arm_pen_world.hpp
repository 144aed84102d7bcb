#pragma once

// Planar 3-link arm with a pen and a joystick driving a character.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include "envs.hpp"

namespace sgim {

class ArmPenWorld : public Environment {
 public:
  static constexpr std::array<double, 3> kLinks{0.5, 0.3, 0.2};
  static constexpr int kSubsteps = 20;
  static constexpr double kContact = 0.05;
  static constexpr double kTiltScale = 0.25;
  static constexpr double kCharacterGain = 0.2;
  static constexpr double kPenX = 0.6, kPenY = 0.4;
  static constexpr double kJoyX = -0.5, kJoyY = 0.5;

  static constexpr SpaceId kEndEffector{0}, kPen{1}, kDrawing{2}, kJoystick{3}, kCharacter{4};

  ArmPenWorld() {
    const Vec lo2{-1, -1}, hi2{1, 1};
    spaces_ = {OutcomeSpace(kEndEffector, "end-effector", lo2, hi2), OutcomeSpace(kPen, "pen", lo2, hi2),
               OutcomeSpace(kDrawing, "drawing", {-1, -1, -1, -1}, {1, 1, 1, 1}),
               OutcomeSpace(kJoystick, "joystick", lo2, hi2), OutcomeSpace(kCharacter, "character", lo2, hi2)};
    reset(0);
  }

  std::string id() const override { return "arm-pen"; }
  std::size_t action_dim() const override { return 3; }
  const std::vector<OutcomeSpace>& spaces() const override { return spaces_; }
  std::size_t context_dim() const override { return 4; }
  std::vector<std::string> context_names() const override { return {"pen_x", "pen_y", "joystick_x", "joystick_y"}; }

  static std::array<double, 2> forward_kinematics(const std::array<double, 3>& q) {
    double a = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      a += q[i];
      x += kLinks[i] * std::cos(a);
      y += kLinks[i] * std::sin(a);
    }
    return {x, y};
  }

  static std::array<double, 3> joints_of(const ActionPrimitive& p) {
    return {std::numbers::pi * p.params[0], std::numbers::pi * p.params[1], std::numbers::pi * p.params[2]};
  }

  Vec reset(std::uint64_t /*seed*/) override {
    q_ = {0, 0, 0};
    ee_ = forward_kinematics(q_);
    pen_ = {kPenX, kPenY};
    grasped_ = false;
    offset_ = {0, 0};
    engaged_ = false;
    tilt_ = {0, 0};
    character_ = {0, 0};
    run_.clear();
    drawing_.reset();
    stroke_done_ = false;
    return context();
  }

  Vec context() const override { return {kPenX, kPenY, kJoyX, kJoyY}; }

  OutcomeSet state_values() const override {
    OutcomeSet o(5);
    o[0] = Vec{ee_[0], ee_[1]};
    o[1] = Vec{pen_[0], pen_[1]};
    if (drawing_) o[2] = *drawing_;
    o[3] = Vec{tilt_[0], tilt_[1]};
    o[4] = Vec{character_[0], character_[1]};
    return o;
  }

  std::vector<Substep> step(const ActionPrimitive& a) override {
    check_primitive(a);
    const auto target = joints_of(a);
    const auto start = q_;
    const std::array<double, 2> pen_before = pen_;
    std::vector<Substep> trace;
    trace.reserve(kSubsteps);
    for (int s = 1; s <= kSubsteps; ++s) {
      const double t = static_cast<double>(s) / kSubsteps;
      for (std::size_t i = 0; i < 3; ++i) q_[i] = start[i] + t * (target[i] - start[i]);
      ee_ = forward_kinematics(q_);
      if (!grasped_ && std::hypot(ee_[0] - pen_[0], ee_[1] - pen_[1]) <= kContact) {
        grasped_ = true;
        offset_ = {pen_[0] - ee_[0], pen_[1] - ee_[1]};
      }
      if (grasped_) pen_ = {ee_[0] + offset_[0], ee_[1] + offset_[1]};
      if (!engaged_ && std::hypot(ee_[0] - kJoyX, ee_[1] - kJoyY) <= kContact) engaged_ = true;
      if (engaged_)
        tilt_ = {std::clamp((ee_[0] - kJoyX) / kTiltScale, -1.0, 1.0),
                 std::clamp((ee_[1] - kJoyY) / kTiltScale, -1.0, 1.0)};
      trace.push_back({{q_[0], q_[1], q_[2], ee_[0], ee_[1], pen_[0], pen_[1], tilt_[0], tilt_[1]}});
    }
    if (engaged_) {
      character_[0] += kCharacterGain * tilt_[0];
      character_[1] += kCharacterGain * tilt_[1];
    }
    if (!stroke_done_) {
      const bool displaced =
          grasped_ && std::hypot(pen_[0] - pen_before[0], pen_[1] - pen_before[1]) > kContact;
      if (displaced) {
        run_.push_back(pen_);
        if (run_.size() >= 2) drawing_ = Vec{run_.front()[0], run_.front()[1], run_.back()[0], run_.back()[1]};
      } else {
        stroke_done_ = drawing_.has_value();
        run_.clear();
      }
    }
    return trace;
  }

  OutcomeSet observe() const override {
    OutcomeSet o(5);
    auto clipped = [&](SpaceId s, Vec v) {
      spaces_[static_cast<std::size_t>(s.value)].clip(v);
      return v;
    };
    o[0] = clipped(kEndEffector, {ee_[0], ee_[1]});
    if (grasped_) o[1] = clipped(kPen, {pen_[0], pen_[1]});
    if (drawing_) o[2] = clipped(kDrawing, *drawing_);
    if (engaged_) {
      o[3] = clipped(kJoystick, {tilt_[0], tilt_[1]});
      o[4] = clipped(kCharacter, {character_[0], character_[1]});
    }
    return o;
  }

  HierarchyGraph ground_truth() const override {
    HierarchyGraph h;
    h.add_node(kActionNode, "A");
    for (const auto& s : spaces_) h.add_node(s.id, s.name);
    h.add_decomposition(kEndEffector, {kActionNode}, 1.0);
    h.add_decomposition(kPen, {kEndEffector}, 1.0);
    h.add_decomposition(kDrawing, {kPen}, 1.0);
    h.add_decomposition(kJoystick, {kEndEffector}, 1.0);
    h.add_decomposition(kCharacter, {kJoystick}, 1.0);
    return h;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<ArmPenWorld>(*this); }

  // -------------------------------------------------------------------------
  // Scripted solutions

  /// Joint-space solutions placing the end effector at `target`, as
  /// normalized primitives, smallest joint motion first.
  static std::vector<ActionPrimitive> inverse_kinematics(const std::array<double, 2>& target, int phi_samples = 72) {
    std::vector<std::pair<double, ActionPrimitive>> found;
    const double l1 = kLinks[0], l2 = kLinks[1], l3 = kLinks[2];
    for (int k = 0; k < phi_samples; ++k) {
      const double phi = -std::numbers::pi + 2.0 * std::numbers::pi * k / phi_samples;
      const double wx = target[0] - l3 * std::cos(phi), wy = target[1] - l3 * std::sin(phi);
      double c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2 * l1 * l2);
      if (c2 < -1.0 - 1e-9 || c2 > 1.0 + 1e-9) continue;
      c2 = std::clamp(c2, -1.0, 1.0);
      for (int elbow : {1, -1}) {
        const double t2 = elbow * std::acos(c2);
        const double t1 = std::atan2(wy, wx) - std::atan2(l2 * std::sin(t2), l1 + l2 * std::cos(t2));
        const double t3 = phi - t1 - t2;
        std::array<double, 3> q{wrap(t1), wrap(t2), wrap(t3)};
        ActionPrimitive p{{q[0] / std::numbers::pi, q[1] / std::numbers::pi, q[2] / std::numbers::pi}};
        p.clip();
        const auto ee = forward_kinematics(joints_of(p));
        if (std::hypot(ee[0] - target[0], ee[1] - target[1]) > 1e-6) continue;
        found.emplace_back(q[0] * q[0] + q[1] * q[1] + q[2] * q[2], p);
      }
    }
    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ActionPrimitive> out;
    for (auto& [_, p] : found) out.push_back(std::move(p));
    return out;
  }

  std::optional<CompoundAction> script(SpaceId space, const Vec& goal, std::uint64_t /*seed*/) const override {
    switch (space.value) {
      case 0: return script_end_effector(goal);
      case 1: return script_pen(goal);
      case 2: return script_drawing(goal);
      case 3: return script_joystick(goal);
      case 4: return script_character(goal);
      default: throw Error("unknown space");
    }
  }

  /// Outcome of executing an action from reset.
  OutcomeSet simulate(const CompoundAction& a) const {
    ArmPenWorld w;
    for (const auto& p : a.primitives) w.step(p);
    return w.observe();
  }

 private:
  static double wrap(double a) {
    while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
    while (a < -std::numbers::pi) a += 2 * std::numbers::pi;
    return a;
  }

  static constexpr double kScriptTolerance = 0.01;
  static constexpr int kMaxTiltSteps = 3;  // engage plus tilts stays within 4 primitives

  bool close(const OutcomeSet& o, SpaceId s, const Vec& goal, double tol = kScriptTolerance) const {
    const auto& v = o[static_cast<std::size_t>(s.value)];
    return v && distance(*v, goal) <= tol;
  }

  std::optional<CompoundAction> script_end_effector(const Vec& goal) const {
    const auto sols = inverse_kinematics({goal[0], goal[1]});
    if (sols.empty()) return std::nullopt;
    CompoundAction a{{sols.front()}};
    if (!close(simulate(a), kEndEffector, goal)) return std::nullopt;
    return a;
  }

  // Single primitives whose path sweeps through a contact point and ends so
  // that the carried object lands on `goal`. Offset-corrected IK iteration.
  std::optional<ActionPrimitive> sweep_through(const Vec& goal, SpaceId space) const {
    std::optional<ActionPrimitive> best;
    double best_err = 1e9;
    for (const auto& cand : inverse_kinematics({goal[0], goal[1]}, 144)) {
      ActionPrimitive p = cand;
      for (int it = 0; it < 4; ++it) {
        const auto o = simulate(CompoundAction{{p}});
        const auto& v = o[static_cast<std::size_t>(space.value)];
        if (!v) break;
        const double err = distance(*v, goal);
        if (err < best_err) {
          best_err = err;
          best = p;
        }
        if (err <= 1e-4) break;
        // shift the end-effector target by the observed miss
        const auto ee = forward_kinematics(joints_of(p));
        const std::array<double, 2> tgt{ee[0] + goal[0] - (*v)[0], ee[1] + goal[1] - (*v)[1]};
        const auto sols = inverse_kinematics(tgt, 144);
        if (sols.empty()) break;
        // keep the solution closest in joint space to the previous one
        p = *std::min_element(sols.begin(), sols.end(), [&](const auto& a, const auto& b) {
          return squared_distance(a.params, p.params) < squared_distance(b.params, p.params);
        });
      }
      if (best_err <= 1e-4) break;
    }
    if (best && best_err <= kScriptTolerance) return best;
    return std::nullopt;
  }

  std::optional<CompoundAction> script_pen(const Vec& goal) const {
    if (auto p = sweep_through(goal, kPen)) return CompoundAction{{*p}};
    return grab_and_move(goal);
  }

  std::optional<CompoundAction> grab_and_move(const Vec& goal) const {
    const auto grab = inverse_kinematics({kPenX, kPenY});
    if (grab.empty()) return std::nullopt;
    CompoundAction a{{grab.front()}};
    ArmPenWorld w;
    w.step(grab.front());
    if (!w.grasped_) return std::nullopt;
    const auto sols = inverse_kinematics({goal[0] - w.offset_[0], goal[1] - w.offset_[1]});
    if (sols.empty()) return std::nullopt;
    a.primitives.push_back(sols.front());
    if (!close(simulate(a), kPen, goal)) return std::nullopt;
    return a;
  }

  std::optional<CompoundAction> script_drawing(const Vec& goal) const {
    const Vec first{goal[0], goal[1]};
    auto a = script_pen(first);
    if (!a) return std::nullopt;
    ArmPenWorld w;
    for (const auto& p : a->primitives) w.step(p);
    const auto sols = inverse_kinematics({goal[2] - w.offset_[0], goal[3] - w.offset_[1]});
    if (sols.empty()) return std::nullopt;
    a->primitives.push_back(sols.front());
    if (!close(simulate(*a), kDrawing, goal)) return std::nullopt;
    return a;
  }

  std::optional<CompoundAction> script_joystick(const Vec& goal) const {
    if (auto p = sweep_through(goal, kJoystick)) return CompoundAction{{*p}};
    const auto engage = inverse_kinematics({kJoyX, kJoyY});
    const auto tilt = inverse_kinematics({kJoyX + kTiltScale * goal[0], kJoyY + kTiltScale * goal[1]});
    if (engage.empty() || tilt.empty()) return std::nullopt;
    CompoundAction a{{engage.front(), tilt.front()}};
    if (!close(simulate(a), kJoystick, goal)) return std::nullopt;
    return a;
  }

  std::optional<CompoundAction> script_character(const Vec& goal) const {
    const auto engage = inverse_kinematics({kJoyX, kJoyY});
    if (engage.empty()) return std::nullopt;
    if (norm(goal) < 1e-12) {
      CompoundAction a{{engage.front()}};
      if (close(simulate(a), kCharacter, goal)) return a;
      return std::nullopt;
    }
    for (int k = 1; k <= kMaxTiltSteps; ++k) {
      const double tx = goal[0] / (kCharacterGain * k), ty = goal[1] / (kCharacterGain * k);
      if (std::abs(tx) > 1.0 || std::abs(ty) > 1.0) continue;
      const auto tilt = inverse_kinematics({kJoyX + kTiltScale * tx, kJoyY + kTiltScale * ty});
      if (tilt.empty()) continue;
      CompoundAction a{{engage.front()}};
      for (int i = 0; i < k; ++i) a.primitives.push_back(tilt.front());
      if (close(simulate(a), kCharacter, goal)) return a;
    }
    return std::nullopt;
  }

  std::vector<OutcomeSpace> spaces_;
  std::array<double, 3> q_{};
  std::array<double, 2> ee_{};
  std::array<double, 2> pen_{};
  bool grasped_ = false;
  std::array<double, 2> offset_{};
  bool engaged_ = false;
  std::array<double, 2> tilt_{};
  std::array<double, 2> character_{};
  std::vector<std::array<double, 2>> run_;
  std::optional<Vec> drawing_;
  bool stroke_done_ = false;
};

}  // namespace sgim
