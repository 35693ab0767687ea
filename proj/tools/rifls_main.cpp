#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rifls/error.hpp"
#include "rifls/eval.hpp"
#include "rifls/experiment.hpp"
#include "rifls/observability.hpp"
#include "rifls/sim.hpp"
#include "rifls/smoother.hpp"
#include "rifls/trace_io.hpp"

namespace fs = std::filesystem;
using namespace rifls;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalidConfig = 2, kIoError = 3, kSessionDiverged = 4 };

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? default_experiment() : load_experiment(path);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  return os;
}

int cmd_simulate(const std::string& config, std::optional<std::uint64_t> seed, const fs::path& out) {
  const ExperimentConfig c = load_or_default(config);
  const std::uint64_t s = seed.value_or(c.seed0);
  make_dir(out);
  const sim::SimStream stream = sim::simulate(c.sim, s);
  sim::write_stream(stream, out);
  write_manifest(out, c, "simulate", s);
  std::cout << "frames=" << stream.frames.size() << " mean_speed=" << sim::mean_speed(c.sim.trajectory)
            << " obs_per_frame=" << stream.mean_observations_per_frame()
            << " mean_track_length=" << stream.mean_track_length() << '\n';
  return kOk;
}

int cmd_run(const std::string& config, const fs::path& stream_dir, const std::string& method,
            std::optional<std::uint64_t> seed, const fs::path& out) {
  const ExperimentConfig c = load_or_default(config);
  const eval::Method m = find_method(c, method);
  sim::SimStream s = sim::read_stream(stream_dir);
  if (s.frames.empty()) throw Error(ErrorCode::IoError, "stream has no frames");
  s.seed = seed.value_or(c.seed0);
  const SystemState init = eval::initial_estimate(s, c.initial_velocity_sigma);
  SessionOptions opt;
  opt.trace_frames = c.trace_frames;
  const SessionResult r = run_session(s.measurements(), m.config, init, opt);

  make_dir(out);
  {
    auto os = open_out(out / "steps.jsonl");
    for (const StepOutput& st : r.steps) os << step_to_json(st) << '\n';
  }
  {
    auto os = open_out(out / "trace.jsonl");
    write_traces(os, r.traces);
  }
  {
    auto os = open_out(out / "errors.csv");
    eval::TrialResult t;
    t.method = m.name;
    for (size_t k = 0; k < r.steps.size() && k < s.truth.size(); ++k) {
      t.frames.push_back(eval::frame_error(m.config.formulation, s.truth[k], r.steps[k].estimate,
                                           r.steps[k].nav_cov));
    }
    t.diverged = r.failed;
    t.success = !r.failed && !t.frames.empty() &&
                t.frames.back().rmse_p.norm() <= eval::kSuccessPositionBound;
    os.close();
    eval::write_trial_log(t, out / "errors.csv");
  }
  write_manifest(out, c, "run " + m.name, s.seed);
  if (r.failed) {
    std::cerr << "session diverged: " << r.failure << '\n';
    return kSessionDiverged;
  }
  std::cout << m.name << ": " << r.steps.size() << " frames, " << r.marginalizations
            << " marginalizations\n";
  return kOk;
}

int cmd_audit(const fs::path& trace, const std::string& out, bool first_estimates) {
  std::ifstream is(trace);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + trace.string());
  const std::vector<JacobianTrace> traces = read_traces(is);
  const NullspaceEval mode = first_estimates ? NullspaceEval::FirstEstimates : NullspaceEval::Latest;
  std::ofstream file;
  if (!out.empty()) file = open_out(out);
  std::ostream& os = out.empty() ? std::cout : file;
  os << audit_csv_header() << '\n';
  for (const JacobianTrace& t : traces) os << audit_csv_row(t, nullity_audit(t, mode)) << '\n';
  if (!os) throw Error(ErrorCode::IoError, "failed writing audit");
  return kOk;
}

int cmd_montecarlo(const std::string& config, std::optional<std::uint64_t> seed,
                   std::optional<int> trials, const std::vector<std::string>& methods,
                   const fs::path& out) {
  ExperimentConfig c = load_or_default(config);
  if (seed) c.seed0 = *seed;
  if (trials) {
    if (*trials < 1) throw Error(ErrorCode::InvalidConfig, "--trials must be >= 1");
    c.n_trials = *trials;
  }
  if (!methods.empty()) {
    std::vector<eval::Method> chosen;
    for (const std::string& n : methods) chosen.push_back(find_method(c, n));
    c.methods = chosen;
  }
  make_dir(out);
  eval::MonteCarloOptions opt;
  opt.n_trials = c.n_trials;
  opt.seed0 = c.seed0;
  opt.initial_velocity_sigma = c.initial_velocity_sigma;
  opt.trailing_window = c.trailing_window;
  opt.log_dir = out / "trials";
  const eval::MonteCarloResult r = eval::run_monte_carlo(c.sim, c.methods, opt);
  eval::write_report(r.report, out);
  write_manifest(out, c, "montecarlo", c.seed0);
  for (const eval::MethodReport& m : r.report.methods) {
    std::cout << m.name << ": n_s=" << m.n_success << '/' << m.n_trials
              << " pose NEES=" << m.trailing_nees_pose << " position RMSE=" << m.final_rmse_position
              << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-lag visual-inertial smoother experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string method;
  std::optional<int> trials;
  std::vector<std::string> methods;
  std::string stream;
  std::string trace;
  bool first_estimates = false;

  auto* sim = app.add_subcommand("simulate", "Write a simulated measurement stream");
  sim->add_option("--config", config, "Experiment config (JSON)");
  sim->add_option("--seed", seed, "Stream seed (default: seed0)");
  sim->add_option("--out", out, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run one method on a stream directory");
  run->add_option("--config", config, "Experiment config (JSON)");
  run->add_option("--stream", stream, "Stream directory")->required();
  run->add_option("--method", method, "Method name")->required();
  run->add_option("--seed", seed, "Seed of the initial velocity perturbation");
  run->add_option("--out", out, "Output directory")->required();

  auto* audit = app.add_subcommand("audit", "Nullity audit of a Jacobian trace");
  audit->add_option("--trace", trace, "trace.jsonl written by run")->required();
  audit->add_option("--out", out, "CSV path (default: stdout)");
  audit->add_flag("--first-estimates", first_estimates, "Evaluate N at first estimates");

  auto* mc = app.add_subcommand("montecarlo", "Monte-Carlo comparison of methods");
  mc->add_option("--config", config, "Experiment config (JSON)");
  mc->add_option("--seed", seed, "seed0 override");
  mc->add_option("--trials", trials, "Trial count override");
  mc->add_option("--method", methods, "Restrict to these methods");
  mc->add_option("--out", out, "Output directory")->required();

  auto* dump = app.add_subcommand("config", "Print the default experiment config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  try {
    if (*sim) return cmd_simulate(config, seed, out);
    if (*run) return cmd_run(config, stream, method, seed, out);
    if (*audit) return cmd_audit(trace, out, first_estimates);
    if (*mc) return cmd_montecarlo(config, seed, trials, methods, out);
    if (*dump) {
      std::cout << experiment_to_json(default_experiment()) << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::InvalidConfig: return kInvalidConfig;
      case ErrorCode::IoError: return kIoError;
      case ErrorCode::SessionDiverged:
      case ErrorCode::DivergedStep: return kSessionDiverged;
      default: return kFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
