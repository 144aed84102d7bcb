#include <gtest/gtest.h>

#include "sgim/arm_pen_world.hpp"
#include "sgim/mobile_pusher_world.hpp"
#include "sgim/teachers.hpp"

using namespace sgim;

TEST(TeacherGoals, GridAndSamples) {
  const OutcomeSpace sq(SpaceId{0}, "sq", {-1, -1}, {1, 1});
  const auto g = teacher_goals(sq, 5, 0);
  ASSERT_EQ(g.size(), 25u);
  EXPECT_EQ(g.front(), (Vec{-1, -1}));
  EXPECT_EQ(g.back(), (Vec{1, 1}));
  const OutcomeSpace cube(SpaceId{1}, "c", {0, 0, 0, 0}, {1, 1, 1, 1});
  EXPECT_EQ(teacher_goals(cube, 3, 1).size(), 72u);
  EXPECT_EQ(teacher_goals(cube, 3, 1), teacher_goals(cube, 3, 1));
  EXPECT_TRUE(teacher_goals(sq, 0, 0).empty());
}

TEST(ActionTeacher, EndEffectorDemosAreValidated) {
  ArmPenWorld env;
  const auto t = build_teacher(env, 0, TeacherKind::Action, ArmPenWorld::kEndEffector, 5, 0);
  EXPECT_LE(t.repertoire().size(), 25u);
  EXPECT_GT(t.repertoire().size(), 5u);
  for (const auto& d : t.repertoire()) {
    const auto r = run_episode(env, 0, d.action).reached[0];
    EXPECT_GE(competence(d.goal, r, env.space(ArmPenWorld::kEndEffector)), -0.05);
  }
}

TEST(ActionTeacher, UnreachableCornersAreDropped) {
  ArmPenWorld env;
  std::vector<std::string> log;
  const auto t = build_teacher(env, 0, TeacherKind::Action, ArmPenWorld::kEndEffector, 5, 0, &log);
  // corners of the square lie outside the unit reach
  for (const auto& d : t.repertoire()) EXPECT_LE(norm(d.goal), 1.0 + 1e-9);
  EXPECT_FALSE(log.empty());
}

TEST(ProcedureTeacher, DrawingDemosArePenPairs) {
  ArmPenWorld env;
  const auto t = build_teacher(env, 1, TeacherKind::Procedure, ArmPenWorld::kDrawing, 3, 4);
  EXPECT_LE(t.repertoire().size(), 9u);
  for (const auto& d : t.repertoire()) {
    ASSERT_EQ(d.procedure.spaces(), (std::vector<SpaceId>{ArmPenWorld::kPen, ArmPenWorld::kPen}));
    EXPECT_EQ(d.procedure.components[0].value, (Vec{d.goal[0], d.goal[1]}));
    EXPECT_EQ(d.procedure.components[1].value, (Vec{d.goal[2], d.goal[3]}));
  }
}

TEST(ProcedureTeacher, RequiresTwoPartDecomposition) {
  ArmPenWorld arm;
  EXPECT_THROW(build_teacher(arm, 0, TeacherKind::Procedure, ArmPenWorld::kPen, 3, 0), Error);
  MobilePusherWorld pusher;
  EXPECT_THROW(build_teacher(pusher, 0, TeacherKind::Procedure, MobilePusherWorld::kObject2, 3, 0), Error);
}

TEST(Teacher, ZeroGridIsRejected) {
  ArmPenWorld env;
  EXPECT_THROW(build_teacher(env, 0, TeacherKind::Action, ArmPenWorld::kEndEffector, 0, 0), Error);
  EXPECT_THROW(Teacher().demo(Vec{0, 0}), Error);
}

TEST(Teacher, NearestDemoAndStateless) {
  std::vector<Demo> demos(3);
  demos[0].goal = {0, 0};
  demos[1].goal = {1, 1};
  demos[2].goal = {1, 1};
  for (std::size_t i = 0; i < 3; ++i) demos[i].action.primitives = {ActionPrimitive{{0.1 * static_cast<double>(i)}}};
  const Teacher t(0, TeacherKind::Action, SpaceId{0}, demos);
  EXPECT_EQ(&t.demo(Vec{0.2, 0.1}), &t.repertoire()[0]);
  // tie goes to the earlier entry
  EXPECT_EQ(&t.demo(Vec{1, 1}), &t.repertoire()[1]);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(&t.demo(Vec{0.9, 0.8}), &t.repertoire()[1]);
}

TEST(Teacher, TextRoundTrip) {
  ArmPenWorld env;
  for (const auto& t : {build_teacher(env, 0, TeacherKind::Action, ArmPenWorld::kPen, 3, 0),
                        build_teacher(env, 1, TeacherKind::Procedure, ArmPenWorld::kDrawing, 2, 5)}) {
    const auto back = Teacher::from_text(t.to_text());
    EXPECT_EQ(back.id(), t.id());
    EXPECT_EQ(back.kind(), t.kind());
    EXPECT_EQ(back.target(), t.target());
    ASSERT_EQ(back.repertoire().size(), t.repertoire().size());
    for (std::size_t i = 0; i < t.repertoire().size(); ++i) {
      EXPECT_EQ(back.repertoire()[i].goal, t.repertoire()[i].goal);
      EXPECT_EQ(back.repertoire()[i].action.primitives, t.repertoire()[i].action.primitives);
      EXPECT_EQ(back.repertoire()[i].procedure.components, t.repertoire()[i].procedure.components);
    }
    EXPECT_EQ(back.to_text(), t.to_text());
  }
  EXPECT_THROW(Teacher::from_text("student 0"), Error);
  EXPECT_THROW(Teacher::from_text("teacher 0 kind=action space=0 demos=1\ngoal 0 | dance 1"), Error);
}

TEST(ActionTeacher, PusherObjectTeacherReplays) {
  MobilePusherWorld env;
  const auto t = build_teacher(env, 0, TeacherKind::Action, MobilePusherWorld::kObject1, 3, 2);
  for (const auto& d : t.repertoire()) {
    const auto r = run_episode(env, 2, d.action).reached[1];
    EXPECT_GE(competence(d.goal, r, env.space(MobilePusherWorld::kObject1)), -0.05);
  }
}
