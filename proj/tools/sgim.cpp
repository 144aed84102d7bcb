// Command-line front end: run, eval, inspect, teach.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sgim/sgim.hpp"

namespace fs = std::filesystem;
using namespace sgim;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

int cmd_run(const std::string& config_path, const std::string& out, long episodes) {
  auto cfg = load_config(config_path);
  if (episodes > 0) cfg.episodes = static_cast<std::size_t>(episodes);
  Learner l(cfg);
  const auto bench = build_benchmark(l.environment(), cfg.benchmark_grid, cfg.benchmark_seed);
  const auto r = run(l, bench);
  export_run(l, r, out);
  const auto& last = r.snapshots.back();
  std::cout << "episodes " << l.episode() << "\n";
  for (const auto& m : last.spaces)
    std::cout << "  " << l.spaces()[static_cast<std::size_t>(m.space.value)].name << " error " << m.mean_error
              << " length " << m.mean_length << " goals " << m.goals << "\n";
  return kOk;
}

int cmd_eval(const std::string& snapshot, const std::string& benchmark, const std::string& out, int threads) {
  const auto j = json::parse(read_file(snapshot));
  const auto l = Learner::from_snapshot(j);
  if (benchmark != l.environment().id())
    throw ConfigError("benchmark " + benchmark + " does not match snapshot environment " + l.environment().id());
  const auto& cfg = l.config();
  const auto bench = build_benchmark(l.environment(), cfg.benchmark_grid, cfg.benchmark_seed);
  const auto table = evaluate(l, bench, threads);
  std::ostringstream os;
  os << std::setprecision(10) << "space,name,goals,failures,mean_error,mean_length\n";
  for (const auto& m : table)
    os << m.space.value << "," << l.spaces()[static_cast<std::size_t>(m.space.value)].name << "," << m.goals << ","
       << m.failures << "," << m.mean_error << "," << m.mean_length << "\n";
  fs::create_directories(out);
  write_file(fs::path(out) / "eval.csv", os.str());
  std::cout << os.str();
  return kOk;
}

int cmd_inspect(const std::string& dir) {
  for (const char* f : {"hierarchy.dot", "regions.txt", "affordances.txt"}) {
    std::cout << "== " << f << "\n" << read_file(fs::path(dir) / f);
  }
  return kOk;
}

int cmd_teach(const std::string& env_id, const std::string& out, int grid, std::uint64_t seed) {
  const auto env = make_environment(env_id);
  const auto levels = ground_truth_levels(*env);
  std::string text;
  int id = 0;
  for (const auto& sp : env->spaces()) {
    const bool procedure = levels[static_cast<std::size_t>(sp.id.value)] >= 1 && sp.dim() != 2;
    std::vector<std::string> log;
    try {
      const auto t = build_teacher(*env, id, procedure ? TeacherKind::Procedure : TeacherKind::Action, sp.id, grid,
                                   seed, &log);
      text += t.to_text();
      std::cout << sp.name << ": " << to_string(t.kind()) << " teacher, " << t.repertoire().size() << " demos, "
                << log.size() << " goals dropped\n";
      ++id;
    } catch (const Error& e) {
      std::cout << sp.name << ": no teacher (" << e.what() << ")\n";
    }
  }
  write_file(out, text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intrinsically motivated hierarchical learner"};
  app.require_subcommand(1);

  std::string config, out, snapshot, benchmark, run_dir, env_id;
  long episodes = 0;
  int threads = 1, grid = 5;
  std::uint64_t seed = 0;

  auto* run_cmd = app.add_subcommand("run", "run an experiment");
  run_cmd->add_option("--config", config, "config file")->required();
  run_cmd->add_option("--out", out, "output directory")->required();
  run_cmd->add_option("--episodes", episodes, "override the episode budget");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a snapshot on a benchmark");
  eval_cmd->add_option("--snapshot", snapshot, "snapshot.json")->required();
  eval_cmd->add_option("--benchmark", benchmark, "benchmark id (environment id)")->required();
  eval_cmd->add_option("--out", out, "output directory")->required();
  eval_cmd->add_option("--threads", threads, "evaluation threads");

  auto* inspect_cmd = app.add_subcommand("inspect", "print hierarchy, regions and affordances of a run");
  inspect_cmd->add_option("--run", run_dir, "run directory")->required();

  auto* teach_cmd = app.add_subcommand("teach", "build and validate teacher repertoires");
  teach_cmd->add_option("--env", env_id, "environment id")->required();
  teach_cmd->add_option("--out", out, "output file")->required();
  teach_cmd->add_option("--grid", grid, "goal grid resolution");
  teach_cmd->add_option("--seed", seed, "teacher seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) return cmd_run(config, out, episodes);
    if (*eval_cmd) return cmd_eval(snapshot, benchmark, out, threads);
    if (*inspect_cmd) return cmd_inspect(run_dir);
    if (*teach_cmd) return cmd_teach(env_id, out, grid, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
