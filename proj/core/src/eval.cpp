#include "rifls/eval.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "rifls/error.hpp"

namespace rifls::eval {

FrameError frame_error(ErrorFormulation f, const SystemState& truth, const SystemState& est,
                       const Mat15& nav_cov) {
  FrameError e;
  e.stamp = est.stamp;
  const ErrorVector d = error(f, truth, est);
  e.nees_theta = d.segment<3>(0);
  e.nees_p = d.segment<3>(6);
  e.cov_pose.block<3, 3>(0, 0) = nav_cov.block<3, 3>(6, 6);
  e.cov_pose.block<3, 3>(0, 3) = nav_cov.block<3, 3>(6, 0);
  e.cov_pose.block<3, 3>(3, 0) = nav_cov.block<3, 3>(0, 6);
  e.cov_pose.block<3, 3>(3, 3) = nav_cov.block<3, 3>(0, 0);
  e.rmse_p = truth.p() - est.p();
  e.rmse_theta = lie::so3_log(truth.nav.r * est.nav.r.inverse());
  e.rmse_bg = truth.bias_g - est.bias_g;
  e.rmse_ba = truth.bias_a - est.bias_a;
  return e;
}

int successful(const std::vector<TrialResult>& trials) {
  return static_cast<int>(
      std::count_if(trials.begin(), trials.end(), [](const TrialResult& t) { return t.success; }));
}

namespace {

double quad_form(const MatX& cov, const VecX& d, int* regularized) {
  Eigen::LLT<MatX> llt(cov);
  if (llt.info() != Eigen::Success) {
    if (regularized) ++*regularized;
    const MatX c = cov + 1e-12 * MatX::Identity(cov.rows(), cov.cols());
    return d.dot(c.ldlt().solve(d));
  }
  return d.dot(llt.solve(d));
}

void need_success(const std::vector<TrialResult>& trials) {
  if (successful(trials) == 0) throw Error(ErrorCode::NoSuccessfulTrials, "no successful trials");
}

}  // namespace

double nees(const std::vector<TrialResult>& trials, Component c, size_t k, int* regularized) {
  need_success(trials);
  double acc = 0.0;
  int n = 0;
  for (const TrialResult& t : trials) {
    if (!t.success) continue;
    const FrameError& e = t.frames.at(k);
    switch (c) {
      case Component::Position:
        acc += quad_form(e.cov_pose.block<3, 3>(0, 0), e.nees_p, regularized);
        break;
      case Component::Orientation:
        acc += quad_form(e.cov_pose.block<3, 3>(3, 3), e.nees_theta, regularized);
        break;
      case Component::Pose: {
        Vec6 d;
        d << e.nees_p, e.nees_theta;
        acc += quad_form(e.cov_pose, d, regularized);
        break;
      }
    }
    ++n;
  }
  return acc / n;
}

double rmse(const std::vector<TrialResult>& trials, Component c, size_t k) {
  need_success(trials);
  double acc = 0.0;
  int n = 0;
  for (const TrialResult& t : trials) {
    if (!t.success) continue;
    const FrameError& e = t.frames.at(k);
    if (c != Component::Orientation) acc += e.rmse_p.squaredNorm();
    if (c != Component::Position) acc += e.rmse_theta.squaredNorm();
    ++n;
  }
  return std::sqrt(acc / n);
}

double rmse_bias(const std::vector<TrialResult>& trials, bool gyro, size_t k) {
  need_success(trials);
  double acc = 0.0;
  int n = 0;
  for (const TrialResult& t : trials) {
    if (!t.success) continue;
    acc += (gyro ? t.frames.at(k).rmse_bg : t.frames.at(k).rmse_ba).squaredNorm();
    ++n;
  }
  return std::sqrt(acc / n);
}

double trailing_mean(const std::vector<double>& stamps, const std::vector<double>& values,
                     double window) {
  if (stamps.size() != values.size() || stamps.empty() ||
      stamps.back() - stamps.front() < window - 1e-9) {
    throw Error(ErrorCode::CurveTooShort, "curve shorter than the " + std::to_string(window) +
                                              " s window");
  }
  const double t0 = stamps.back() - window - 1e-9;
  double acc = 0.0;
  int n = 0;
  for (size_t i = 0; i < stamps.size(); ++i) {
    if (stamps[i] >= t0) {
      acc += values[i];
      ++n;
    }
  }
  return acc / n;
}

const MethodReport& EnsembleReport::method(const std::string& name) const {
  for (const MethodReport& m : methods) {
    if (m.name == name) return m;
  }
  throw Error(ErrorCode::InvalidConfig, "no method '" + name + "' in report");
}

EnsembleReport aggregate(const std::vector<Method>& methods,
                         const std::vector<std::vector<TrialResult>>& trials,
                         double trailing_window) {
  EnsembleReport rep;
  rep.trailing_window = trailing_window;
  for (size_t m = 0; m < methods.size(); ++m) {
    std::vector<TrialResult> ts = trials[m];
    std::sort(ts.begin(), ts.end(),
              [](const TrialResult& a, const TrialResult& b) { return a.trial < b.trial; });
    MethodReport r;
    r.name = methods[m].name;
    r.formulation = methods[m].config.formulation;
    r.n_trials = static_cast<int>(ts.size());
    r.n_success = successful(ts);
    if (r.n_success > 0) {
      size_t frames = SIZE_MAX;
      for (const TrialResult& t : ts) {
        if (t.success) frames = std::min(frames, t.frames.size());
      }
      const TrialResult& ref = *std::find_if(ts.begin(), ts.end(),
                                             [](const TrialResult& t) { return t.success; });
      for (size_t k = 0; k < frames; ++k) {
        r.stamps.push_back(ref.frames[k].stamp);
        r.nees_position.push_back(nees(ts, Component::Position, k, &r.regularized));
        r.nees_orientation.push_back(nees(ts, Component::Orientation, k, &r.regularized));
        r.nees_pose.push_back(nees(ts, Component::Pose, k, &r.regularized));
        r.rmse_position.push_back(rmse(ts, Component::Position, k));
        r.rmse_orientation.push_back(rmse(ts, Component::Orientation, k));
        r.rmse_bg.push_back(rmse_bias(ts, true, k));
        r.rmse_ba.push_back(rmse_bias(ts, false, k));
      }
      if (!r.stamps.empty() && r.stamps.back() - r.stamps.front() >= trailing_window - 1e-9) {
        r.trailing_nees_position = trailing_mean(r.stamps, r.nees_position, trailing_window);
        r.trailing_nees_orientation = trailing_mean(r.stamps, r.nees_orientation, trailing_window);
        r.trailing_nees_pose = trailing_mean(r.stamps, r.nees_pose, trailing_window);
      }
      if (!r.stamps.empty()) {
        r.final_rmse_position = r.rmse_position.back();
        r.final_rmse_orientation = r.rmse_orientation.back();
      }
    }
    rep.methods.push_back(std::move(r));
  }
  return rep;
}

SystemState initial_estimate(const sim::SimStream& s, double velocity_sigma) {
  SystemState x = s.truth.at(0);
  std::mt19937_64 rng(sim::derive_seed(s.seed, sim::kInitialVelocityStream));
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 3; ++i) x.nav.v(i) += velocity_sigma * n(rng);
  x.bias_g.setZero();
  x.bias_a.setZero();
  return x;
}

std::vector<TrialResult> run_trial(const sim::SimConfig& sim_config,
                                   const std::vector<Method>& methods, int trial,
                                   const MonteCarloOptions& opt) {
  const sim::SimStream s =
      sim::simulate(sim_config, sim::derive_seed(opt.seed0, static_cast<std::uint64_t>(trial)));
  const MeasurementStream ms = s.measurements();
  const SystemState init = initial_estimate(s, opt.initial_velocity_sigma);
  std::vector<TrialResult> out;
  for (const Method& m : methods) {
    TrialResult r;
    r.method = m.name;
    r.trial = trial;
    const SessionResult sr = run_session(ms, m.config, init);
    r.diverged = sr.failed;
    r.failure = sr.failure;
    for (size_t k = 0; k < sr.steps.size(); ++k) {
      r.frames.push_back(
          frame_error(m.config.formulation, s.truth.at(k), sr.steps[k].estimate, sr.steps[k].nav_cov));
    }
    r.success = !r.diverged && !r.frames.empty() &&
                r.frames.back().rmse_p.norm() <= kSuccessPositionBound &&
                r.frames.size() == s.frames.size();
    if (!opt.log_dir.empty()) {
      std::ostringstream name;
      name << "trial_" << m.name << '_' << std::setw(4) << std::setfill('0') << trial << ".csv";
      write_trial_log(r, opt.log_dir / name.str());
    }
    out.push_back(std::move(r));
  }
  return out;
}

int thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RIFLS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

MonteCarloResult run_monte_carlo(const sim::SimConfig& sim_config,
                                 const std::vector<Method>& methods, const MonteCarloOptions& opt) {
  if (opt.n_trials < 1) throw Error(ErrorCode::InvalidConfig, "n_trials must be >= 1");
  if (!opt.log_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opt.log_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + opt.log_dir.string());
  }
  std::vector<std::vector<TrialResult>> per_trial(opt.n_trials);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < opt.n_trials; i = next++) {
      try {
        per_trial[i] = run_trial(sim_config, methods, i, opt);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(thread_count(opt.threads), opt.n_trials);
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  MonteCarloResult out;
  out.trials.resize(methods.size());
  for (auto& trial : per_trial) {
    for (size_t m = 0; m < methods.size(); ++m) out.trials[m].push_back(std::move(trial[m]));
  }
  out.report = aggregate(methods, out.trials, opt.trailing_window);
  return out;
}

void write_trial_log(const TrialResult& t, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  os << std::setprecision(17);
  os << "# method=" << t.method << " trial=" << t.trial << " diverged=" << t.diverged
     << " success=" << t.success << '\n';
  os << "stamp,nees_p(3),nees_theta(3),rmse_p(3),rmse_theta(3),rmse_bg(3),rmse_ba(3),cov_pose(36)\n";
  for (const FrameError& e : t.frames) {
    os << e.stamp;
    for (const Vec3* v : {&e.nees_p, &e.nees_theta, &e.rmse_p, &e.rmse_theta, &e.rmse_bg, &e.rmse_ba}) {
      for (int i = 0; i < 3; ++i) os << ',' << (*v)(i);
    }
    for (int i = 0; i < 6; ++i) {
      for (int k = 0; k < 6; ++k) os << ',' << e.cov_pose(i, k);
    }
    os << '\n';
  }
  if (!os) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

TrialResult read_trial_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  TrialResult t;
  std::string line;
  std::getline(is, line);
  {
    std::istringstream hs(line.substr(line.find('#') + 1));
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = kv.substr(0, eq);
      const std::string v = kv.substr(eq + 1);
      if (k == "method") t.method = v;
      if (k == "trial") t.trial = std::stoi(v);
      if (k == "diverged") t.diverged = v == "1";
      if (k == "success") t.success = v == "1";
    }
  }
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(std::stod(cell));
    if (c.size() != 1 + 18 + 36) throw Error(ErrorCode::IoError, "bad row in " + path.string());
    FrameError e;
    e.stamp = c[0];
    size_t o = 1;
    for (Vec3* v : {&e.nees_p, &e.nees_theta, &e.rmse_p, &e.rmse_theta, &e.rmse_bg, &e.rmse_ba}) {
      for (int i = 0; i < 3; ++i) (*v)(i) = c[o++];
    }
    for (int i = 0; i < 6; ++i) {
      for (int k = 0; k < 6; ++k) e.cov_pose(i, k) = c[o++];
    }
    t.frames.push_back(e);
  }
  return t;
}

void write_report(const EnsembleReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + (dir / name).string());
    os << std::setprecision(17);
    return os;
  };
  {
    auto os = open("summary.csv");
    os << "method,nees_convention,n_success,n_trials,trailing_nees_position,"
          "trailing_nees_orientation,trailing_nees_pose,final_rmse_position,"
          "final_rmse_orientation,regularized\n";
    for (const MethodReport& m : r.methods) {
      os << m.name << ',' << to_string(m.formulation) << ',' << m.n_success << ',' << m.n_trials
         << ',' << m.trailing_nees_position << ',' << m.trailing_nees_orientation << ','
         << m.trailing_nees_pose << ',' << m.final_rmse_position << ','
         << m.final_rmse_orientation << ',' << m.regularized << '\n';
    }
  }
  auto metrics = open("metrics.csv");
  metrics << "method,metric,stamp,value\n";
  for (const MethodReport& m : r.methods) {
    auto os = open("curves_" + m.name + ".csv");
    os << "stamp,nees_position,nees_orientation,nees_pose,rmse_position,rmse_orientation,"
          "rmse_bg,rmse_ba\n";
    const std::vector<std::pair<const char*, const std::vector<double>*>> cols = {
        {"nees_position", &m.nees_position},     {"nees_orientation", &m.nees_orientation},
        {"nees_pose", &m.nees_pose},             {"rmse_position", &m.rmse_position},
        {"rmse_orientation", &m.rmse_orientation}, {"rmse_bg", &m.rmse_bg},
        {"rmse_ba", &m.rmse_ba}};
    for (size_t k = 0; k < m.stamps.size(); ++k) {
      os << m.stamps[k];
      for (const auto& [name, v] : cols) {
        os << ',' << (*v)[k];
        metrics << m.name << ',' << name << ',' << m.stamps[k] << ',' << (*v)[k] << '\n';
      }
      os << '\n';
    }
  }
}

}  // namespace rifls::eval
