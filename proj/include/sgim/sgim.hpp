#pragma once

#include "affordance.hpp"
#include "arm_pen_world.hpp"
#include "core.hpp"
#include "envs.hpp"
#include "interest.hpp"
#include "memory.hpp"
#include "mobile_pusher_world.hpp"
#include "models.hpp"
#include "runner.hpp"
#include "strategies.hpp"
#include "teachers.hpp"
