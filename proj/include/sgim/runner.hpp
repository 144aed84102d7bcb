#pragma once

// Experiment orchestration: configuration, the episode loop, benchmarks,
// evaluation of frozen learner state, exports and snapshots.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "affordance.hpp"
#include "arm_pen_world.hpp"
#include "core.hpp"
#include "envs.hpp"
#include "interest.hpp"
#include "memory.hpp"
#include "mobile_pusher_world.hpp"
#include "models.hpp"
#include "strategies.hpp"
#include "teachers.hpp"

namespace sgim {

using json = nlohmann::ordered_json;

struct ConfigError : Error {
  using Error::Error;
};

struct InvariantViolation : Error {
  using Error::Error;
};

enum class Algorithm { ImPb, Chime, SgimPb };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ImPb: return "IM-PB";
    case Algorithm::Chime: return "CHIME";
    case Algorithm::SgimPb: return "SGIM-PB";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "IM-PB") return Algorithm::ImPb;
  if (s == "CHIME") return Algorithm::Chime;
  if (s == "SGIM-PB") return Algorithm::SgimPb;
  throw ConfigError("unknown algorithm: " + s);
}

inline std::unique_ptr<Environment> make_environment(const std::string& id) {
  if (id == "arm-pen") return std::make_unique<ArmPenWorld>();
  if (id == "mobile-pusher") return std::make_unique<MobilePusherWorld>();
  throw ConfigError("unknown environment: " + id);
}

struct TeacherSpec {
  TeacherKind kind = TeacherKind::Action;
  int space = 0;
  int grid = 5;

  std::string text() const { return to_string(kind) + ":" + std::to_string(space) + ":" + std::to_string(grid); }
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  Algorithm algorithm = Algorithm::ImPb;
  std::string environment = "arm-pen";
  std::uint64_t seed = 0;
  std::size_t episodes = 5000;
  std::size_t snapshot_period = 100;
  InterestParams interest;
  double prune_threshold = 0.05;
  double edge_rate = 0.1;
  ResolveParams resolve;
  StrategyParams explore;
  AffordanceParams affordance;
  std::size_t chime_max_primitives = 16;
  std::vector<TeacherSpec> teachers;
  std::uint64_t teacher_seed = 0;
  int benchmark_grid = 5;
  std::uint64_t benchmark_seed = 0;
  bool check_invariants = false;
  int eval_threads = 1;

  void validate() const {
    if (schema_version != kSchemaVersion) throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
    if (episodes < 1) throw ConfigError("episodes must be at least 1");
    if (snapshot_period < 1) throw ConfigError("snapshot_period must be at least 1");
    if (interest.window < 4) throw ConfigError("interest.window must be at least 4");
    if (interest.p_exploit < 0 || interest.p_pair < 0 || interest.p_exploit + interest.p_pair > 1.0)
      throw ConfigError("interest mode probabilities must be nonnegative and sum to at most 1");
    if (resolve.depth < 1) throw ConfigError("resolve.depth must be at least 1");
    if (resolve.max_length < 1) throw ConfigError("resolve.max_length must be at least 1");
    if (eval_threads < 1) throw ConfigError("eval_threads must be at least 1");
    if (!teachers.empty() && algorithm != Algorithm::SgimPb) throw ConfigError("teachers require algorithm SGIM-PB");
    const auto env = make_environment(environment);
    for (const auto& t : teachers)
      if (t.space < 0 || static_cast<std::size_t>(t.space) >= env->num_spaces())
        throw ConfigError("teacher space out of range: " + t.text());
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": " + v);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad value for " + key + ": " + v);
}

inline TeacherSpec parse_teacher_spec(const std::string& v) {
  const auto a = v.find(':');
  const auto b = a == std::string::npos ? a : v.find(':', a + 1);
  if (b == std::string::npos) throw ConfigError("teacher must be kind:space:grid, got " + v);
  TeacherSpec t;
  try {
    t.kind = parse_teacher_kind(v.substr(0, a));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  t.space = parse_number<int>("teacher", v.substr(a + 1, b - a - 1));
  t.grid = parse_number<int>("teacher", v.substr(b + 1));
  if (t.grid < 1) throw ConfigError("teacher grid must be positive");
  return t;
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, repeated
/// scalar keys and malformed values are errors. `teacher` may repeat.
inline ExperimentConfig parse_config(const std::string& text) {
  using namespace detail;
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&)>;
  auto num = [](auto& field, const char* key) {
    return Setter([&field, key](const std::string& v) {
      field = parse_number<std::remove_reference_t<decltype(field)>>(key, v);
    });
  };
  std::map<std::string, Setter> keys{
      {"schema_version", num(c.schema_version, "schema_version")},
      {"algorithm", [&](const std::string& v) { c.algorithm = parse_algorithm(v); }},
      {"environment", [&](const std::string& v) { c.environment = v; }},
      {"seed", num(c.seed, "seed")},
      {"episodes", num(c.episodes, "episodes")},
      {"snapshot_period", num(c.snapshot_period, "snapshot_period")},
      {"interest.window", num(c.interest.window, "interest.window")},
      {"interest.split_threshold", num(c.interest.split_threshold, "interest.split_threshold")},
      {"interest.novelty", num(c.interest.novelty, "interest.novelty")},
      {"interest.p_exploit", num(c.interest.p_exploit, "interest.p_exploit")},
      {"interest.p_pair", num(c.interest.p_pair, "interest.p_pair")},
      {"cost.autonomous", num(c.interest.autonomous_cost, "cost.autonomous")},
      {"cost.mimicry", num(c.interest.mimicry_cost, "cost.mimicry")},
      {"hierarchy.prune_threshold", num(c.prune_threshold, "hierarchy.prune_threshold")},
      {"hierarchy.edge_rate", num(c.edge_rate, "hierarchy.edge_rate")},
      {"resolve.depth", num(c.resolve.depth, "resolve.depth")},
      {"resolve.length_penalty", num(c.resolve.length_penalty, "resolve.length_penalty")},
      {"resolve.max_length", num(c.resolve.max_length, "resolve.max_length")},
      {"explore.fresh_probability", num(c.explore.fresh_probability, "explore.fresh_probability")},
      {"explore.action_noise", num(c.explore.action_noise, "explore.action_noise")},
      {"explore.outcome_noise", num(c.explore.outcome_noise, "explore.outcome_noise")},
      {"mimic.noise", num(c.explore.mimic_noise, "mimic.noise")},
      {"affordance.r2_threshold", num(c.affordance.r2_threshold, "affordance.r2_threshold")},
      {"affordance.min_samples", num(c.affordance.min_samples, "affordance.min_samples")},
      {"affordance.window", num(c.affordance.window, "affordance.window")},
      {"affordance.candidates", num(c.affordance.candidates, "affordance.candidates")},
      {"refine.contradiction_factor", num(c.affordance.contradiction_factor, "refine.contradiction_factor")},
      {"refine.min_improvement", num(c.affordance.min_improvement, "refine.min_improvement")},
      {"refine.min_errors", num(c.affordance.min_errors, "refine.min_errors")},
      {"plan.tolerance", num(c.affordance.plan_tolerance, "plan.tolerance")},
      {"plan.max_steps", num(c.affordance.plan_max_steps, "plan.max_steps")},
      {"chime.max_primitives", num(c.chime_max_primitives, "chime.max_primitives")},
      {"teacher.seed", num(c.teacher_seed, "teacher.seed")},
      {"benchmark.grid", num(c.benchmark_grid, "benchmark.grid")},
      {"benchmark.seed", num(c.benchmark_seed, "benchmark.seed")},
      {"check_invariants", [&](const std::string& v) { c.check_invariants = parse_bool("check_invariants", v); }},
      {"eval_threads", num(c.eval_threads, "eval_threads")},
  };
  std::set<std::string> seen;
  bool has_schema = false;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "teacher") {
      c.teachers.push_back(parse_teacher_spec(value));
      continue;
    }
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key " + key);
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key " + key);
    if (key == "schema_version") has_schema = true;
    it->second(value);
  }
  if (!has_schema) throw ConfigError("missing schema_version");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "schema_version = " << c.schema_version << "\n"
     << "algorithm = " << to_string(c.algorithm) << "\n"
     << "environment = " << c.environment << "\n"
     << "seed = " << c.seed << "\n"
     << "episodes = " << c.episodes << "\n"
     << "snapshot_period = " << c.snapshot_period << "\n"
     << "interest.window = " << c.interest.window << "\n"
     << "interest.split_threshold = " << c.interest.split_threshold << "\n"
     << "interest.novelty = " << c.interest.novelty << "\n"
     << "interest.p_exploit = " << c.interest.p_exploit << "\n"
     << "interest.p_pair = " << c.interest.p_pair << "\n"
     << "cost.autonomous = " << c.interest.autonomous_cost << "\n"
     << "cost.mimicry = " << c.interest.mimicry_cost << "\n"
     << "hierarchy.prune_threshold = " << c.prune_threshold << "\n"
     << "hierarchy.edge_rate = " << c.edge_rate << "\n"
     << "resolve.depth = " << c.resolve.depth << "\n"
     << "resolve.length_penalty = " << c.resolve.length_penalty << "\n"
     << "resolve.max_length = " << c.resolve.max_length << "\n"
     << "explore.fresh_probability = " << c.explore.fresh_probability << "\n"
     << "explore.action_noise = " << c.explore.action_noise << "\n"
     << "explore.outcome_noise = " << c.explore.outcome_noise << "\n"
     << "mimic.noise = " << c.explore.mimic_noise << "\n"
     << "affordance.r2_threshold = " << c.affordance.r2_threshold << "\n"
     << "affordance.min_samples = " << c.affordance.min_samples << "\n"
     << "affordance.window = " << c.affordance.window << "\n"
     << "affordance.candidates = " << c.affordance.candidates << "\n"
     << "refine.contradiction_factor = " << c.affordance.contradiction_factor << "\n"
     << "refine.min_improvement = " << c.affordance.min_improvement << "\n"
     << "refine.min_errors = " << c.affordance.min_errors << "\n"
     << "plan.tolerance = " << c.affordance.plan_tolerance << "\n"
     << "plan.max_steps = " << c.affordance.plan_max_steps << "\n"
     << "chime.max_primitives = " << c.chime_max_primitives << "\n"
     << "teacher.seed = " << c.teacher_seed << "\n"
     << "benchmark.grid = " << c.benchmark_grid << "\n"
     << "benchmark.seed = " << c.benchmark_seed << "\n"
     << "check_invariants = " << (c.check_invariants ? "true" : "false") << "\n"
     << "eval_threads = " << c.eval_threads << "\n";
  for (const auto& t : c.teachers) os << "teacher = " << t.text() << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Closed-loop execution against a live environment

/// PlanWorld over a live environment with a primitive budget; records the
/// executed primitives and their step observations.
class EnvPlanWorld : public PlanWorld {
 public:
  EnvPlanWorld(Environment& env, std::size_t budget) : env_(env), budget_(budget) {}

  std::optional<Vec> value(SpaceId s) const override { return env_.state_values().at(static_cast<std::size_t>(s.value)); }
  Vec context() const override { return env_.context(); }
  bool execute(const ActionPrimitive& a) override {
    if (action.size() >= budget_) return false;
    StepObservation s;
    s.context = env_.context();
    s.before = env_.state_values();
    env_.step(a);
    s.after = env_.state_values();
    steps.push_back(std::move(s));
    action.primitives.push_back(a);
    return true;
  }

  CompoundAction action;
  std::vector<StepObservation> steps;

 private:
  Environment& env_;
  std::size_t budget_;
};

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkGoal {
  Vec value;
  std::uint64_t seed = 0;  ///< environment reset seed for this goal
};

struct Benchmark {
  std::string id;
  std::vector<std::vector<BenchmarkGoal>> goals;  ///< per space
};

namespace detail {

inline bool replay_reaches(const Environment& env, SpaceId s, const Vec& goal, std::uint64_t seed,
                           const CompoundAction& a) {
  auto e = env.clone();
  const auto t = run_episode(*e, seed, a);
  return competence(goal, t.reached[static_cast<std::size_t>(s.value)], env.space(s)) >= -0.05;
}

inline bool script_reaches(const Environment& env, SpaceId s, const Vec& goal, std::uint64_t seed) {
  const auto a = env.script(s, goal, seed);
  return a && replay_reaches(env, s, goal, seed, *a);
}

}  // namespace detail

/// Per space: the grid x grid lattice over 2-D spaces intersected with the
/// scripted-reachable set; 16 seeded reachable pen-position pairs for the
/// drawing space; pushed-object goals produced by scripted pushes when the
/// grid yields nothing.
inline Benchmark build_benchmark(const Environment& env, int grid, std::uint64_t seed) {
  Benchmark b;
  b.id = env.id();
  b.goals.resize(env.num_spaces());
  const bool per_goal_layout = env.id() == "mobile-pusher";
  for (const auto& sp : env.spaces()) {
    auto& out = b.goals[static_cast<std::size_t>(sp.id.value)];
    if (sp.dim() == 2) {
      std::uint64_t k = 0;
      for (const auto& g : teacher_goals(sp, grid, seed)) {
        const std::uint64_t es = per_goal_layout ? episode_seed(seed, k++) : seed;
        if (detail::script_reaches(env, sp.id, g, es)) out.push_back({g, es});
      }
    } else if (env.id() == "arm-pen" && sp.id == ArmPenWorld::kDrawing) {
      Rng rng(splitmix64(seed ^ 0xd7a3ULL));
      std::uniform_real_distribution<double> u(-0.9, 0.9);
      auto draw = [&] {
        for (;;) {
          Vec p{u(rng), u(rng)};
          if (norm(p) <= 0.9) return p;
        }
      };
      for (int tries = 0; out.size() < 16 && tries < 4000; ++tries) {
        const auto a = draw();
        const auto c = draw();
        if (distance(a, c) < 0.1 || distance(a, Vec{ArmPenWorld::kPenX, ArmPenWorld::kPenY}) < 0.1) continue;
        Vec g{a[0], a[1], c[0], c[1]};
        if (detail::script_reaches(env, sp.id, g, seed)) out.push_back({g, seed});
      }
    }
  }
  if (env.id() == "mobile-pusher") {
    auto& out2 = b.goals[static_cast<std::size_t>(MobilePusherWorld::kObject2.value)];
    if (out2.empty()) {
      MobilePusherWorld w;
      for (std::uint64_t k = 0; out2.size() < 9 && k < 400; ++k) {
        const auto es = episode_seed(seed ^ 0x0b2ULL, k);
        w.reset(es);
        const auto& o1 = w.object(0);
        const auto& o2 = w.object(1);
        Vec dir{o2.x - o1.x, o2.y - o1.y};
        const double n = norm(dir);
        const double push = 0.05 + 0.1 * static_cast<double>(k % 3);
        Vec g{o2.x + dir[0] / n * push, o2.y + dir[1] / n * push};
        env.space(MobilePusherWorld::kObject1).clip(g);
        const auto a = w.script(MobilePusherWorld::kObject1, g, es);
        if (!a) continue;
        auto e = env.clone();
        const auto t = run_episode(*e, es, *a);
        const auto& r = t.reached[static_cast<std::size_t>(MobilePusherWorld::kObject2.value)];
        if (r) out2.push_back({*r, es});
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Learner

struct StrategyCount {
  StrategyId strategy;
  std::size_t count = 0;
};

/// Interest-map internals for snapshot serialization.
struct InterestMapAccess {
  static const std::vector<std::vector<Region>>& trees(const InterestMap& m) { return m.trees_; }
  static void restore(InterestMap& m, std::vector<std::vector<Region>> trees) { m.trees_ = std::move(trees); }
};

class Learner {
 public:
  explicit Learner(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    env_ = make_environment(cfg_.environment);
    spaces_ = env_->spaces();
    mem_ = EpisodicMemory(spaces_);
    h_ = HierarchyGraph(cfg_.prune_threshold);
    map_ = InterestMap(spaces_, cfg_.interest);
    reg_ = AffordanceRegistry(spaces_, env_->action_dim(), cfg_.affordance);
    rng_ = Rng(splitmix64(cfg_.seed));
    first_seen_.assign(spaces_.size(), -1);
    produced_.assign(spaces_.size(), 0);
    levels_ = ground_truth_levels(*env_);

    h_.add_node(kActionNode, "A");
    for (const auto& sp : spaces_) h_.add_node(sp.id, sp.name);
    std::vector<SpaceId> all;
    for (const auto& sp : spaces_) all.push_back(sp.id);

    if (cfg_.algorithm == Algorithm::Chime) {
      allow({StrategyKind::ActionExplore, -1}, all);
      allow({StrategyKind::OutcomeExplore, -1}, all);
    } else {
      for (const auto& sp : spaces_) {
        h_.add_decomposition(sp.id, {kActionNode}, 0.5);
        for (const auto& a : spaces_)
          for (const auto& b : spaces_)
            if (a.id != sp.id && b.id != sp.id) h_.add_decomposition(sp.id, {a.id, b.id}, 0.5);
      }
      allow({StrategyKind::OutcomeExplore, -1}, all);
      allow({StrategyKind::ProcedureExplore, -1}, all);
      int id = 0;
      for (const auto& t : cfg_.teachers) {
        teachers_.push_back(build_teacher(*env_, id, t.kind, SpaceId{t.space}, t.grid, cfg_.teacher_seed));
        allow({t.kind == TeacherKind::Action ? StrategyKind::MimicAction : StrategyKind::MimicProcedure, id},
              {SpaceId{t.space}});
        ++id;
      }
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Environment& environment() const { return *env_; }
  const std::vector<OutcomeSpace>& spaces() const { return spaces_; }
  const EpisodicMemory& memory() const { return mem_; }
  const HierarchyGraph& hierarchy() const { return h_; }
  const InterestMap& interest_map() const { return map_; }
  const AffordanceRegistry& registry() const { return reg_; }
  const std::vector<Teacher>& teachers() const { return teachers_; }
  const std::vector<StrategyId>& active() const { return active_; }
  const std::vector<StrategyCount>& counts() const { return counts_; }
  const std::vector<int>& levels() const { return levels_; }
  std::size_t episode() const { return mem_.size(); }
  bool chime() const { return cfg_.algorithm == Algorithm::Chime; }
  /// Number of invariant checks performed (test mode).
  std::size_t checks() const { return checks_; }

  /// Runs one episode and returns its record.
  const EpisodeRecord& step() {
    const std::size_t t = mem_.size();
    EpisodeRecord rec;
    rec.episode = t;
    std::string error;

    const Selection sel = map_.select(rng_);
    rec.strategy = sel.strategy;
    rec.goal = Outcome{sel.space, sel.goal};
    mode_ = sel.mode;

    std::vector<SpaceId> controllable(reg_.controllable().begin(), reg_.controllable().end());
    StrategyContext ctx{mem_, h_, teachers_, active_, env_->action_dim(), cfg_.explore, controllable};
    try {
      try {
        rec.lc = apply_strategy(rec.strategy, rec.goal, ctx, rng_);
      } catch (const Error& e) {
        if (std::string(e.what()) != "procedure unavailable") throw;
        rec.strategy = {StrategyKind::OutcomeExplore, -1};
        rec.lc = apply_strategy(rec.strategy, rec.goal, ctx, rng_);
      }
      const std::uint64_t es = episode_seed(cfg_.seed, t);
      if (chime()) {
        rec.context = env_->reset(es);
        EnvPlanWorld world(*env_, cfg_.chime_max_primitives);
        const auto tr = execute_sequence(rec.lc, reg_, world, reach_fn(), spaces_);
        if (tr.failed) throw Error(tr.error);
        rec.action = world.action;
        rec.steps = std::move(world.steps);
        rec.reached = env_->observe();
        if (rec.action.empty()) throw Error("nothing executed");
      } else {
        rec.action = realize(rec.lc, rec.goal.space);
        auto trace = run_episode(*env_, es, rec.action);
        rec.context = std::move(trace.context);
        rec.steps = std::move(trace.steps);
        rec.reached = std::move(trace.reached);
      }
      rec.competence = competence(rec.goal, reached_outcome(rec), space(rec.goal.space));
    } catch (const InvariantViolation&) {
      throw;
    } catch (const Error& e) {
      error = e.what();
      rec.failed = true;
      rec.competence = -1.0;
      rec.action = {};
      rec.steps.clear();
      rec.reached.assign(spaces_.size(), std::nullopt);
      if (rec.context.empty()) rec.context = env_->reset(episode_seed(cfg_.seed, t));
      if (rec.lc.empty()) rec.lc = {rec.goal};
    }

    const auto prev_controllable = reg_.controllable();
    mem_.record(rec);
    const auto& stored = mem_.at(t);
    errors_.push_back(error);
    update_hierarchy(stored);
    if (chime() && !stored.failed) observe_affordances(stored);
    map_.update(stored.goal.space, stored.goal.value, stored.strategy, stored.competence, t);
    count(stored.strategy);
    if (cfg_.check_invariants) check(stored, prev_controllable);
    return stored;
  }

  /// Error text of a failed episode ("" otherwise).
  const std::string& error(std::size_t episode) const { return errors_.at(episode); }
  int mode() const { return mode_; }

  Resolver resolver() const { return Resolver(mem_, h_, cfg_.resolve); }

  std::function<double(SpaceId)> reach_fn() const {
    return [this](SpaceId s) { return mem_.reach(s); };
  }

  /// Compound action for a controllable sequence: primitives verbatim,
  /// outcomes resolved (never through the goal's own space).
  CompoundAction realize(const ControllableSequence& lc, SpaceId goal_space) const {
    const auto r = resolver();
    std::vector<CompoundAction> parts;
    for (const auto& c : lc) {
      if (is_primitive(c)) {
        parts.push_back(CompoundAction{{std::get<ActionPrimitive>(c)}});
        continue;
      }
      const auto& o = std::get<Outcome>(c);
      const auto res = r.resolve(o, cfg_.resolve.depth, {goal_space});
      if (!res.ok()) throw Error(to_string(res.failure));
      parts.push_back(*res.action);
    }
    auto a = concat(parts);
    if (a.size() > cfg_.resolve.max_length) a.primitives.resize(cfg_.resolve.max_length);
    return a;
  }

  /// Property checks after an episode; throws InvariantViolation.
  void check(const EpisodeRecord& rec, const std::set<SpaceId>& prev_controllable) {
    ++checks_;
    auto fail = [&](const std::string& what) {
      throw InvariantViolation("episode " + std::to_string(rec.episode) + ": " + what);
    };
    if (auto errs = map_.check(); !errs.empty()) fail("interest map: " + errs.front());
    if (!partition_ok()) fail("interest map: leaves do not partition the space");
    if (!h_.weights_in_bounds()) fail("hierarchy weight out of [0,1]");
    if (!h_.acyclic()) fail("hierarchy has an established cycle");
    for (auto s : prev_controllable)
      if (!reg_.is_controllable(s)) fail("controllable set shrank");
    for (auto s : reg_.controllable())
      if (!reg_.for_output(s)) fail("controllable space without active affordance");
    if (!reg_.acyclic()) fail("affordance graph has a cycle");
    for (const auto& a : reg_.affordances())
      if (a.status == AffordanceStatus::Active &&
          (a.samples.size() < cfg_.affordance.min_samples || a.r2 < cfg_.affordance.r2_threshold))
        fail("active affordance below creation thresholds");
    for (std::size_t s = 0; s < spaces_.size(); ++s)
      if (rec.reached[s] && !spaces_[s].contains(*rec.reached[s])) fail("reached outcome outside bounds");
    for (const auto& p : rec.action.primitives)
      if (!p.within_bounds()) fail("primitive outside bounds");
    if (!(rec.competence >= -1.0 && rec.competence <= 0.0)) fail("competence outside [-1,0]");
  }

  /// Restores learned state from a snapshot document.
  static Learner from_snapshot(const json& j);

 private:
  void allow(StrategyId s, const std::vector<SpaceId>& spaces) {
    map_.allow(s, spaces);
    active_.push_back(s);
    counts_.push_back({s, 0});
  }

  void count(const StrategyId& s) {
    for (auto& c : counts_)
      if (c.strategy == s) {
        ++c.count;
        return;
      }
    counts_.push_back({s, 1});
  }

  const OutcomeSpace& space(SpaceId s) const { return spaces_.at(static_cast<std::size_t>(s.value)); }

  static std::optional<Outcome> reached_outcome(const EpisodeRecord& rec) {
    const auto& r = rec.reached_in(rec.goal.space);
    if (!r) return std::nullopt;
    return Outcome{rec.goal.space, *r};
  }

  // Leaf boxes cover each root exactly: total leaf volume equals the root
  // volume and every history goal lies in exactly one leaf.
  bool partition_ok() const {
    for (const auto& sp : spaces_) {
      const auto& t = map_.tree(sp.id);
      double vol = 0.0;
      for (int i : map_.leaves(sp.id)) {
        double v = 1.0;
        for (std::size_t d = 0; d < sp.dim(); ++d) v *= t[static_cast<std::size_t>(i)].upper[d] - t[static_cast<std::size_t>(i)].lower[d];
        vol += v;
      }
      double root = 1.0;
      for (std::size_t d = 0; d < sp.dim(); ++d) root *= sp.width(d);
      if (std::abs(vol - root) > 1e-9 * root) return false;
      for (const auto& e : t[0].history) {
        int hits = 0;
        for (int i : map_.leaves(sp.id)) hits += map_.leaf_contains(sp.id, t[static_cast<std::size_t>(i)], e.goal) ? 1 : 0;
        if (hits != 1) return false;
      }
    }
    return true;
  }

  void update_hierarchy(const EpisodeRecord& rec) {
    for (std::size_t s = 0; s < spaces_.size(); ++s) {
      if (!rec.reached[s]) continue;
      if (first_seen_[s] < 0) first_seen_[s] = static_cast<long>(rec.episode);
      ++produced_[s];
      h_.set_rank(spaces_[s].id, {static_cast<double>(first_seen_[s]), -static_cast<double>(produced_[s]),
                                  spaces_[s].id.value});
    }
    if (chime()) return;
    switch (lc_kind(rec.lc)) {
      case LcKind::Procedure: h_.update(rec.goal.space, lc_procedure_spaces(rec.lc), rec.competence, cfg_.edge_rate); break;
      case LcKind::Direct: h_.update(rec.goal.space, {kActionNode}, rec.competence, cfg_.edge_rate); break;
      case LcKind::Other: break;
    }
  }

  void observe_affordances(const EpisodeRecord& rec) {
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
      Transition tr{rec.steps[i].context, rec.action.primitives[i].params, rec.steps[i].before, rec.steps[i].after,
                    rec.episode};
      reg_.refine_all(tr);
      reg_.add_transition(std::move(tr));
    }
    const auto res = reg_.detect(rec.episode, rng_);
    if (res.created) {
      const auto& a = *res.created;
      h_.add_decomposition(a.output, {a.input.space}, a.r2);
    }
  }

  friend json to_snapshot(const Learner&);

  ExperimentConfig cfg_;
  std::unique_ptr<Environment> env_;
  std::vector<OutcomeSpace> spaces_;
  EpisodicMemory mem_;
  HierarchyGraph h_;
  InterestMap map_;
  AffordanceRegistry reg_;
  std::vector<Teacher> teachers_;
  std::vector<StrategyId> active_;
  std::vector<StrategyCount> counts_;
  std::vector<int> levels_;
  std::vector<long> first_seen_;
  std::vector<std::size_t> produced_;
  std::vector<std::string> errors_;
  Rng rng_;
  int mode_ = 0;
  std::size_t checks_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct GoalResult {
  double error = 1.0;
  std::size_t length = 0;
  bool failed = true;
};

struct SpaceMetrics {
  SpaceId space;
  double mean_error = 1.0;
  double mean_length = 0.0;
  std::size_t goals = 0;
  std::size_t failures = 0;
};

/// Exploitation (no noise) on one benchmark goal with a private environment.
inline GoalResult evaluate_goal(const Learner& l, Environment& env, SpaceId s, const BenchmarkGoal& g) {
  GoalResult r;
  const auto& sp = l.spaces().at(static_cast<std::size_t>(s.value));
  const Outcome goal{s, g.value};
  try {
    if (l.chime()) {
      ControllableSequence lc;
      if (l.registry().is_controllable(s))
        lc = {goal};
      else
        lc = infer_controllable(l.memory(), goal);
      env.reset(g.seed);
      EnvPlanWorld world(env, l.config().chime_max_primitives);
      const auto tr = execute_sequence(lc, l.registry(), world, l.reach_fn(), l.spaces());
      if (tr.failed) return r;
      r.error = -competence(goal.value, env.observe()[static_cast<std::size_t>(s.value)], sp);
      r.length = world.action.size();
    } else {
      const auto res = l.resolver().resolve(goal);
      if (!res.ok()) return r;
      const auto t = run_episode(env, g.seed, *res.action);
      r.error = -competence(goal.value, t.reached[static_cast<std::size_t>(s.value)], sp);
      r.length = res.action->size();
    }
    r.failed = false;
  } catch (const InvariantViolation&) {
    throw;
  } catch (const Error&) {
    r = GoalResult{};
  }
  return r;
}

/// Mean error and executed length per space; failures count as error 1 and
/// are left out of the length mean. Threads split the goal list; results are
/// written by goal index, so the table is independent of the thread count.
inline std::vector<SpaceMetrics> evaluate(const Learner& l, const Benchmark& b, int threads = 1) {
  struct Item {
    SpaceId s;
    const BenchmarkGoal* g;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < b.goals.size(); ++s)
    for (const auto& g : b.goals[s]) items.push_back({SpaceId{static_cast<int>(s)}, &g});
  std::vector<GoalResult> results(items.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    auto env = l.environment().clone();
    for (std::size_t i = begin; i < items.size(); i += stride) results[i] = evaluate_goal(l, *env, items[i].s, *items[i].g);
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(work, k, n);
    for (auto& th : pool) th.join();
  }
  std::vector<SpaceMetrics> out;
  std::size_t i = 0;
  for (std::size_t s = 0; s < b.goals.size(); ++s) {
    SpaceMetrics m;
    m.space = SpaceId{static_cast<int>(s)};
    double err = 0.0, len = 0.0;
    std::size_t ok = 0;
    for (std::size_t k = 0; k < b.goals[s].size(); ++k, ++i) {
      const auto& r = results[i];
      err += r.error;
      if (r.failed) {
        ++m.failures;
      } else {
        len += static_cast<double>(r.length);
        ++ok;
      }
    }
    m.goals = b.goals[s].size();
    m.mean_error = m.goals ? err / static_cast<double>(m.goals) : 1.0;
    m.mean_length = ok ? len / static_cast<double>(ok) : 0.0;
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const Controllable& c) {
  if (is_primitive(c)) return json{{"p", std::get<ActionPrimitive>(c).params}};
  const auto& o = std::get<Outcome>(c);
  return json{{"s", o.space.value}, {"v", o.value}};
}

inline Controllable controllable_from_json(const json& j) {
  if (j.contains("p")) return ActionPrimitive{j.at("p").get<Vec>()};
  return Outcome{SpaceId{j.at("s").get<int>()}, j.at("v").get<Vec>()};
}

inline json to_json(const OutcomeSet& o) {
  json a = json::array();
  for (const auto& v : o) a.push_back(v ? json(*v) : json(nullptr));
  return a;
}

inline OutcomeSet outcome_set_from_json(const json& j) {
  OutcomeSet o;
  for (const auto& v : j) o.push_back(v.is_null() ? std::nullopt : std::optional<Vec>(v.get<Vec>()));
  return o;
}

inline json action_json(const CompoundAction& a) {
  json arr = json::array();
  for (const auto& p : a.primitives) arr.push_back(p.params);
  return arr;
}

/// One episode-log line: fixed leading fields, then details.
inline std::string episode_line(const EpisodeRecord& r, int mode, const std::string& error) {
  json j;
  j["episode"] = r.episode;
  j["strategy"] = r.strategy.name();
  j["goal_space"] = r.goal.space.value;
  j["goal"] = r.goal.value;
  j["action_length"] = r.action.size();
  const auto& reached = r.reached_in(r.goal.space);
  j["reached"] = reached ? json(*reached) : json(nullptr);
  j["competence"] = r.competence;
  j["mode"] = mode;
  j["failed"] = r.failed;
  if (!error.empty()) j["error"] = error;
  json lc = json::array();
  for (const auto& c : r.lc) lc.push_back(to_json(c));
  j["lc"] = lc;
  j["action"] = action_json(r.action);
  j["outcomes"] = to_json(r.reached);
  return j.dump();
}

inline json to_snapshot(const Learner& l) {
  json j;
  j["config"] = to_text(l.cfg_);
  j["episodes"] = l.episode();
  json recs = json::array();
  for (const auto& r : l.mem_.records()) {
    json x;
    x["context"] = r.context;
    x["strategy"] = r.strategy.name();
    x["goal"] = to_json(Controllable{r.goal});
    json lc = json::array();
    for (const auto& c : r.lc) lc.push_back(to_json(c));
    x["lc"] = lc;
    x["action"] = action_json(r.action);
    x["reached"] = to_json(r.reached);
    x["competence"] = r.competence;
    x["failed"] = r.failed;
    json steps = json::array();
    for (const auto& s : r.steps) steps.push_back(json{{"c", s.context}, {"b", to_json(s.before)}, {"a", to_json(s.after)}});
    x["steps"] = steps;
    recs.push_back(x);
  }
  j["records"] = recs;
  json edges = json::array();
  for (auto n : l.h_.nodes())
    for (const auto& d : l.h_.decompositions(n)) {
      json nodes = json::array();
      for (auto m : d.nodes) nodes.push_back(m.value);
      edges.push_back(json{{"from", n.value}, {"nodes", nodes}, {"w", d.weight}, {"u", d.updates}, {"f", d.frozen}});
    }
  j["edges"] = edges;
  json ranks = json::array();
  for (const auto& [id, r] : l.h_.ranks())
    ranks.push_back(json{id.value, std::get<0>(r), std::get<1>(r), std::get<2>(r)});
  j["ranks"] = ranks;
  json trees = json::array();
  for (const auto& t : InterestMapAccess::trees(l.map_)) {
    json regions = json::array();
    for (const auto& r : t) {
      json hist = json::array();
      for (const auto& e : r.history) hist.push_back(json{e.goal, e.competence, e.episode, e.strategy.name()});
      regions.push_back(json{{"lower", r.lower},
                             {"upper", r.upper},
                             {"left", r.left},
                             {"right", r.right},
                             {"dim", r.split_dim},
                             {"cut", r.split_cut},
                             {"history", hist}});
    }
    trees.push_back(regions);
  }
  j["regions"] = trees;
  json affs = json::array();
  for (const auto& a : l.reg_.affordances()) {
    json samples = json::array();
    for (const auto& s : a.samples) samples.push_back(json{s.x, s.ctx, s.y});
    affs.push_back(json{{"id", a.id},
                        {"input", a.input.space.value},
                        {"input_dim", a.input.dim},
                        {"output", a.output.value},
                        {"context", a.context_dims},
                        {"created", a.created},
                        {"r2", a.r2},
                        {"errors", std::vector<double>(a.errors.begin(), a.errors.end())},
                        {"samples", samples}});
  }
  j["affordances"] = affs;
  return j;
}

inline Learner Learner::from_snapshot(const json& j) {
  auto cfg = parse_config(j.at("config").get<std::string>());
  cfg.teachers.clear();
  if (cfg.algorithm == Algorithm::SgimPb) cfg.algorithm = Algorithm::ImPb;  // teachers are not needed to exploit
  Learner l(cfg);
  std::size_t t = 0;
  for (const auto& x : j.at("records")) {
    EpisodeRecord r;
    r.episode = t++;
    r.context = x.at("context").get<Vec>();
    r.strategy = StrategyId::parse(x.at("strategy").get<std::string>());
    r.goal = std::get<Outcome>(controllable_from_json(x.at("goal")));
    for (const auto& c : x.at("lc")) r.lc.push_back(controllable_from_json(c));
    for (const auto& p : x.at("action")) r.action.primitives.push_back(ActionPrimitive{p.get<Vec>()});
    r.reached = outcome_set_from_json(x.at("reached"));
    r.competence = x.at("competence").get<double>();
    r.failed = x.at("failed").get<bool>();
    for (const auto& s : x.at("steps"))
      r.steps.push_back({s.at("c").get<Vec>(), outcome_set_from_json(s.at("b")), outcome_set_from_json(s.at("a"))});
    l.mem_.record(std::move(r));
    l.errors_.push_back("");
  }
  for (const auto& e : j.at("edges")) {
    Decomposition d;
    for (const auto& n : e.at("nodes")) d.nodes.push_back(SpaceId{n.get<int>()});
    d.weight = e.at("w").get<double>();
    d.updates = e.at("u").get<std::size_t>();
    d.frozen = e.at("f").get<bool>();
    l.h_.restore_decomposition(SpaceId{e.at("from").get<int>()}, std::move(d));
  }
  for (const auto& r : j.at("ranks"))
    l.h_.set_rank(SpaceId{r[0].get<int>()}, {r[1].get<double>(), r[2].get<double>(), r[3].get<int>()});
  std::vector<std::vector<Region>> trees;
  std::size_t s = 0;
  for (const auto& t2 : j.at("regions")) {
    std::vector<Region> regions;
    for (const auto& x : t2) {
      Region r;
      r.space = SpaceId{static_cast<int>(s)};
      r.lower = x.at("lower").get<Vec>();
      r.upper = x.at("upper").get<Vec>();
      r.left = x.at("left").get<int>();
      r.right = x.at("right").get<int>();
      r.split_dim = x.at("dim").get<std::size_t>();
      r.split_cut = x.at("cut").get<double>();
      for (const auto& e : x.at("history"))
        r.history.push_back({e[0].get<Vec>(), e[1].get<double>(), e[2].get<std::size_t>(),
                             StrategyId::parse(e[3].get<std::string>())});
      regions.push_back(std::move(r));
    }
    trees.push_back(std::move(regions));
    ++s;
  }
  InterestMapAccess::restore(l.map_, std::move(trees));
  std::vector<Affordance> affs;
  std::set<SpaceId> controllable;
  for (const auto& x : j.at("affordances")) {
    Affordance a;
    a.id = x.at("id").get<int>();
    a.input = {SpaceId{x.at("input").get<int>()}, x.at("input_dim").get<std::size_t>()};
    a.output = SpaceId{x.at("output").get<int>()};
    a.context_dims = x.at("context").get<std::vector<std::size_t>>();
    a.created = x.at("created").get<std::size_t>();
    a.r2 = x.at("r2").get<double>();
    for (double e : x.at("errors")) a.errors.push_back(e);
    for (const auto& smp : x.at("samples")) a.samples.push_back({smp[0].get<Vec>(), smp[1].get<Vec>(), smp[2].get<Vec>()});
    controllable.insert(a.output);
    affs.push_back(std::move(a));
  }
  l.reg_.restore(std::move(affs), std::move(controllable));
  return l;
}

// ---------------------------------------------------------------------------
// Runs

struct SnapshotMetrics {
  std::size_t episode = 0;
  std::vector<SpaceMetrics> spaces;
  std::vector<StrategyCount> counts;  ///< cumulative
};

struct RunResult {
  std::vector<SnapshotMetrics> snapshots;
  std::string episode_log;  ///< one line per episode
};

inline std::string metrics_csv(const std::vector<SnapshotMetrics>& snaps, const std::vector<StrategyId>& strategies) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "snapshot,space,mean_error,mean_length";
  for (const auto& s : strategies) os << "," << s.name();
  os << "\n";
  for (const auto& sn : snaps)
    for (const auto& m : sn.spaces) {
      os << sn.episode << "," << m.space.value << "," << m.mean_error << "," << m.mean_length;
      for (const auto& s : strategies) {
        std::size_t n = 0;
        for (const auto& c : sn.counts)
          if (c.strategy == s) n = c.count;
        os << "," << n;
      }
      os << "\n";
    }
  return os.str();
}

/// Runs the full budget, evaluating every snapshot period and at the end.
/// `on_episode` (optional) sees each record right after it is stored.
inline RunResult run(Learner& l, const Benchmark& bench,
                     const std::function<void(const Learner&, const EpisodeRecord&)>& on_episode = {}) {
  RunResult out;
  std::ostringstream log;
  const auto& cfg = l.config();
  while (l.episode() < cfg.episodes) {
    const auto& rec = l.step();
    log << episode_line(rec, l.mode(), l.error(rec.episode)) << "\n";
    if (on_episode) on_episode(l, rec);
    if (l.episode() % cfg.snapshot_period == 0 || l.episode() == cfg.episodes)
      out.snapshots.push_back({l.episode(), evaluate(l, bench, cfg.eval_threads), l.counts()});
  }
  out.episode_log = log.str();
  return out;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
  if (!f) throw Error("cannot write " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string region_dump(const Learner& l) { return l.interest_map().dump(); }

/// Writes every run artifact into `dir`.
inline void export_run(const Learner& l, const RunResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "config.txt", to_text(l.config()));
  write_file(dir / "episodes.jsonl", r.episode_log);
  write_file(dir / "metrics.csv", metrics_csv(r.snapshots, l.active()));
  write_file(dir / "hierarchy.dot", l.hierarchy().to_dot("hierarchy", true));
  write_file(dir / "ground_truth.dot", l.environment().ground_truth().to_dot("ground_truth"));
  write_file(dir / "regions.txt", region_dump(l));
  write_file(dir / "affordances.txt", l.registry().to_text(l.environment().context_names()));
  write_file(dir / "snapshot.json", to_snapshot(l).dump());
}

}  // namespace sgim
