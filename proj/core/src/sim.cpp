#include "rifls/sim.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "rifls/error.hpp"

namespace rifls::sim {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Forward-mode scalar for the orientation derivative.
struct Dual {
  double a = 0.0;
  double b = 0.0;
  Dual() = default;
  Dual(double v) : a(v) {}  // NOLINT: implicit from constants
  Dual(double v, double d) : a(v), b(d) {}
};
Dual operator+(Dual x, Dual y) { return {x.a + y.a, x.b + y.b}; }
Dual operator-(Dual x, Dual y) { return {x.a - y.a, x.b - y.b}; }
Dual operator*(Dual x, Dual y) { return {x.a * y.a, x.a * y.b + x.b * y.a}; }
Dual operator/(Dual x, Dual y) { return {x.a / y.a, (x.b * y.a - x.a * y.b) / (y.a * y.a)}; }
Dual sin(Dual x) { return {std::sin(x.a), std::cos(x.a) * x.b}; }
Dual cos(Dual x) { return {std::cos(x.a), -std::sin(x.a) * x.b}; }
Dual sqrt(Dual x) {
  const double s = std::sqrt(x.a);
  return {s, x.b / (2.0 * s)};
}
using std::cos;
using std::sin;
using std::sqrt;

template <typename T>
using V3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using M3 = Eigen::Matrix<T, 3, 3>;

template <typename T>
V3<T> velocity(const TorusTrajectory& c, T t) {
  const T tm = t * c.omega_minor;
  const T tM = t * c.omega_major;
  const T rho = c.major_radius + c.minor_radius * cos(tm);
  const T drho = -c.minor_radius * c.omega_minor * sin(tm);
  V3<T> v;
  v << drho * cos(tM) - rho * c.omega_major * sin(tM), drho * sin(tM) + rho * c.omega_major * cos(tM),
      c.minor_radius * c.omega_minor * cos(tm);
  return v;
}

template <typename T>
M3<T> orientation(const TorusTrajectory& c, T t) {
  const V3<T> v = velocity(c, t);
  const V3<T> x = v / sqrt(v.dot(v));
  const V3<T> up(T(0.0), T(0.0), T(1.0));
  V3<T> z0 = up - x * x.dot(up);
  z0 = z0 / sqrt(z0.dot(z0));
  const V3<T> y0 = z0.cross(x);
  const T phi = c.bank * sin(t * c.omega_minor);
  const V3<T> y = y0 * cos(phi) + z0 * sin(phi);
  const V3<T> z = z0 * cos(phi) - y0 * sin(phi);
  M3<T> r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

double normal(std::mt19937_64& rng) {
  // Fresh distribution per draw: a shared one would carry cached values
  // between generators.
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

Vec3 normal3(std::mt19937_64& rng, double sigma) {
  Vec3 v;
  for (int i = 0; i < 3; ++i) v(i) = sigma * normal(rng);
  return v;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

Scene generate_scene(const SceneConfig& c, std::uint64_t seed) {
  if (!(c.half_x > 0.0 && c.half_y > 0.0 && c.z_max > c.z_min) || c.landmarks < 0) {
    throw Error(ErrorCode::InvalidConfig, "scene dimensions must be positive");
  }
  Scene s;
  s.lower = Vec3(-c.half_x, -c.half_y, c.z_min);
  s.upper = Vec3(c.half_x, c.half_y, c.z_max);
  std::mt19937_64 rng(derive_seed(seed, kSceneStream));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double perimeter = 4.0 * (c.half_x + c.half_y);
  for (int i = 0; i < c.landmarks; ++i) {
    double s_along = u(rng) * perimeter;
    const double z = c.z_min + u(rng) * (c.z_max - c.z_min);
    const double lx = 2.0 * c.half_x;
    const double ly = 2.0 * c.half_y;
    Vec3 p;
    if (s_along < lx) {
      p = Vec3(-c.half_x + s_along, -c.half_y, z);
    } else if ((s_along -= lx) < ly) {
      p = Vec3(c.half_x, -c.half_y + s_along, z);
    } else if ((s_along -= ly) < lx) {
      p = Vec3(c.half_x - s_along, c.half_y, z);
    } else {
      s_along -= lx;
      p = Vec3(-c.half_x, c.half_y - s_along, z);
    }
    s.landmarks.push_back(p);
  }
  return s;
}

TruthSample sample_truth(const TorusTrajectory& c, double t) {
  const double tm = t * c.omega_minor;
  const double tM = t * c.omega_major;
  const double rho = c.major_radius + c.minor_radius * std::cos(tm);
  const double drho = -c.minor_radius * c.omega_minor * std::sin(tm);
  const double ddrho = -c.minor_radius * c.omega_minor * c.omega_minor * std::cos(tm);
  const double wM = c.omega_major;

  TruthSample out;
  const Vec3 p = c.center + Vec3(rho * std::cos(tM), rho * std::sin(tM), c.minor_radius * std::sin(tm));
  const Vec3 v = velocity<double>(c, t);
  const Vec3 a(ddrho * std::cos(tM) - 2.0 * drho * wM * std::sin(tM) - rho * wM * wM * std::cos(tM),
               ddrho * std::sin(tM) + 2.0 * drho * wM * std::cos(tM) - rho * wM * wM * std::sin(tM),
               -c.minor_radius * c.omega_minor * c.omega_minor * std::sin(tm));
  const M3<Dual> rd = orientation<Dual>(c, Dual(t, 1.0));
  Mat3 r;
  Mat3 dr;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) {
      r(i, k) = rd(i, k).a;
      dr(i, k) = rd(i, k).b;
    }
  }
  out.state.nav.r = lie::Rot3(r);
  out.state.nav.v = v;
  out.state.nav.p = p;
  out.state.stamp = t;
  out.omega = lie::unskew(0.5 * (r.transpose() * dr - dr.transpose() * r));
  out.world_accel = a;
  out.accel = r.transpose() * (a - kGravity);
  return out;
}

double mean_speed(const TorusTrajectory& traj, double dt) {
  if (!(traj.duration > 0.0)) return 0.0;
  const int n = std::max(1, static_cast<int>(std::ceil(traj.duration / dt)));
  const double h = traj.duration / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * velocity<double>(traj, i * h).norm();
  }
  return acc * h / traj.duration;
}

void SimConfig::validate() const {
  if (trajectory.duration < 0.0) throw Error(ErrorCode::InvalidConfig, "duration must be >= 0");
  if (!(trajectory.major_radius > trajectory.minor_radius && trajectory.minor_radius >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "torus needs major_radius > minor_radius >= 0");
  }
  if (!(camera_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "camera_rate must be > 0");
  const double ratio = imu_noise.rate / camera_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
    throw Error(ErrorCode::InvalidConfig, "camera_rate must divide the IMU rate");
  }
  if (pixel_sigma < 0.0 || !(max_range > min_depth) || !(min_depth > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid visibility or pixel noise settings");
  }
  if (frontend.break_probability < 0.0 || frontend.break_probability >= 1.0) {
    throw Error(ErrorCode::InvalidConfig, "break_probability must be in [0, 1)");
  }
  if (initial_bias_g_sigma < 0.0 || initial_bias_a_sigma < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "initial bias sigmas must be >= 0");
  }
  imu_noise.validate();
  camera.validate();
}

ImuSynthesis synth_imu(const TorusTrajectory& traj, const ImuNoiseConfig& noise,
                       const Vec3& bias_g0, const Vec3& bias_a0, std::uint64_t seed) {
  ImuSynthesis out;
  const double f = noise.rate;
  const auto n = static_cast<std::int64_t>(std::floor(traj.duration * f + 1e-9));
  std::mt19937_64 meas(derive_seed(seed, kImuStream));
  std::mt19937_64 walk(derive_seed(seed, kBiasStream));
  const double sg = noise.sigma_g * std::sqrt(f);
  const double sa = noise.sigma_a * std::sqrt(f);
  const double sbg = noise.sigma_bg / std::sqrt(f);
  const double sba = noise.sigma_ba / std::sqrt(f);
  Vec3 bg = bias_g0;
  Vec3 ba = bias_a0;
  if (traj.duration <= 0.0) return out;
  for (std::int64_t j = 0; j <= n; ++j) {
    const double t = static_cast<double>(j) / f;
    const TruthSample ts = sample_truth(traj, t);
    ImuSample s;
    s.stamp = t;
    s.gyro = ts.omega + bg + normal3(meas, sg);
    s.accel = ts.accel + ba + normal3(meas, sa);
    out.samples.push_back(s);
    out.bias_g.push_back(bg);
    out.bias_a.push_back(ba);
    bg += normal3(walk, sbg);
    ba += normal3(walk, sba);
  }
  return out;
}

std::vector<std::vector<RawObservation>> synth_frames(const Scene& scene,
                                                      const std::vector<SystemState>& poses,
                                                      const SimConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, kPixelStream));
  const CameraModel& cam = c.camera;
  std::vector<std::vector<RawObservation>> out;
  out.reserve(poses.size());
  for (const SystemState& x : poses) {
    std::vector<RawObservation> frame;
    const Mat3 r_wc = x.R() * cam.r_bc;
    const Vec3 p_wc = x.p() + x.R() * cam.t_bc;
    for (size_t i = 0; i < scene.landmarks.size(); ++i) {
      const Vec3 pc = r_wc.transpose() * (scene.landmarks[i] - p_wc);
      if (pc.z() < c.min_depth || pc.norm() > c.max_range) continue;
      const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
      if (!cam.in_bounds(uv)) continue;
      const Vec2 n(c.pixel_sigma * normal(rng), c.pixel_sigma * normal(rng));
      frame.push_back({static_cast<int>(i), uv + n});
    }
    out.push_back(std::move(frame));
  }
  return out;
}

TrackedFrames frontend_tracks(const std::vector<std::vector<RawObservation>>& frames,
                              const FrontendConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, kFrontendStream));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrackedFrames out;
  std::map<int, LandmarkId> open;  // scene landmark -> live track
  std::map<LandmarkId, int> length;
  LandmarkId next = 0;
  for (size_t k = 0; k < frames.size(); ++k) {
    std::map<int, LandmarkId> now;
    std::vector<Observation> obs;
    for (const RawObservation& z : frames[k]) {
      auto it = open.find(z.landmark);
      LandmarkId track;
      // The draw happens for every continuing landmark so streams stay aligned.
      if (it != open.end() && u(rng) >= c.break_probability) {
        track = it->second;
      } else {
        track = next++;
        out.track_landmark[track] = z.landmark;
      }
      now[z.landmark] = track;
      ++length[track];
      obs.push_back(Observation{static_cast<FrameId>(k), track, z.uv, 1.0});
    }
    open = std::move(now);
    out.frames.push_back(std::move(obs));
  }
  if (!length.empty()) {
    double total = 0.0;
    for (const auto& [t, n] : length) total += n;
    out.mean_track_length = total / static_cast<double>(length.size());
  }
  return out;
}

double SimStream::mean_observations_per_frame() const {
  if (frames.empty()) return 0.0;
  double n = 0.0;
  for (const FrameMeasurements& f : frames) n += static_cast<double>(f.observations.size());
  return n / static_cast<double>(frames.size());
}

double SimStream::mean_track_length() const {
  std::map<LandmarkId, int> length;
  for (const FrameMeasurements& f : frames) {
    for (const Observation& z : f.observations) ++length[z.landmark];
  }
  if (length.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [t, n] : length) total += n;
  return total / static_cast<double>(length.size());
}

SimStream simulate(const SimConfig& c, std::uint64_t seed) {
  c.validate();
  SimStream s;
  s.seed = seed;
  const Scene scene = generate_scene(c.scene, seed);
  std::mt19937_64 brng(derive_seed(seed, kInitialBiasStream));
  const Vec3 bg0 = normal3(brng, c.initial_bias_g_sigma);
  const Vec3 ba0 = normal3(brng, c.initial_bias_a_sigma);
  const ImuSynthesis imu = synth_imu(c.trajectory, c.imu_noise, bg0, ba0, seed);
  s.imu = imu.samples;
  if (s.imu.empty()) return s;

  const auto stride = static_cast<size_t>(std::llround(c.imu_noise.rate / c.camera_rate));
  std::vector<SystemState> poses;
  for (size_t j = 0; j < s.imu.size(); j += stride) {
    SystemState x = sample_truth(c.trajectory, s.imu[j].stamp).state;
    x.bias_g = imu.bias_g[j];
    x.bias_a = imu.bias_a[j];
    poses.push_back(x);
  }
  const auto raw = synth_frames(scene, poses, c, seed);
  TrackedFrames tracked = frontend_tracks(raw, c.frontend, seed);
  for (size_t k = 0; k < poses.size(); ++k) {
    FrameMeasurements fm;
    fm.id = static_cast<FrameId>(k);
    fm.stamp = poses[k].stamp;
    fm.observations = std::move(tracked.frames[k]);
    for (Observation& z : fm.observations) z.sigma = c.pixel_sigma > 0.0 ? c.pixel_sigma : 1.0;
    s.frames.push_back(std::move(fm));
  }
  s.truth = std::move(poses);
  s.track_landmark = std::move(tracked.track_landmark);
  return s;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  os << std::setprecision(17);
  return os;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  return is;
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& p, size_t cols) {
  std::ifstream is = open_in(p);
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::IoError, "bad number '" + cell + "' in " + p.string());
      }
    }
    if (row.size() != cols) throw Error(ErrorCode::IoError, "wrong column count in " + p.string());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string obs_name(FrameId k) {
  std::ostringstream os;
  os << "obs_" << std::setw(6) << std::setfill('0') << k << ".csv";
  return os.str();
}

}  // namespace

void write_stream(const SimStream& s, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  {
    auto os = open_out(dir / "imu.csv");
    os << "stamp,wx,wy,wz,ax,ay,az\n";
    for (const ImuSample& m : s.imu) {
      os << m.stamp << ',' << m.gyro.x() << ',' << m.gyro.y() << ',' << m.gyro.z() << ','
         << m.accel.x() << ',' << m.accel.y() << ',' << m.accel.z() << '\n';
    }
  }
  {
    auto os = open_out(dir / "frames.csv");
    os << "frame,stamp\n";
    for (const FrameMeasurements& f : s.frames) os << f.id << ',' << f.stamp << '\n';
  }
  for (const FrameMeasurements& f : s.frames) {
    auto os = open_out(dir / obs_name(f.id));
    os << "track,u,v,sigma\n";
    for (const Observation& z : f.observations) {
      os << z.landmark << ',' << z.uv.x() << ',' << z.uv.y() << ',' << z.sigma << '\n';
    }
  }
  {
    auto os = open_out(dir / "truth.csv");
    os << "stamp,r00,r01,r02,r10,r11,r12,r20,r21,r22,vx,vy,vz,px,py,pz,bgx,bgy,bgz,bax,bay,baz\n";
    for (const SystemState& x : s.truth) {
      os << x.stamp;
      for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) os << ',' << x.R()(i, k);
      }
      for (const Vec3* v : {&x.v(), &x.p(), &x.bias_g, &x.bias_a}) {
        os << ',' << (*v)(0) << ',' << (*v)(1) << ',' << (*v)(2);
      }
      os << '\n';
    }
  }
  {
    auto os = open_out(dir / "tracks.csv");
    os << "track,landmark\n";
    for (const auto& [t, l] : s.track_landmark) os << t << ',' << l << '\n';
  }
}

SimStream read_stream(const std::filesystem::path& dir) {
  SimStream s;
  for (const auto& r : read_csv(dir / "imu.csv", 7)) {
    s.imu.push_back(ImuSample{r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  }
  for (const auto& r : read_csv(dir / "frames.csv", 2)) {
    FrameMeasurements f;
    f.id = static_cast<FrameId>(r[0]);
    f.stamp = r[1];
    for (const auto& o : read_csv(dir / obs_name(f.id), 4)) {
      f.observations.push_back(
          Observation{f.id, static_cast<LandmarkId>(o[0]), Vec2(o[1], o[2]), o[3]});
    }
    s.frames.push_back(std::move(f));
  }
  for (const auto& r : read_csv(dir / "truth.csv", 22)) {
    SystemState x;
    x.stamp = r[0];
    Mat3 m;
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) m(i, k) = r[1 + 3 * i + k];
    }
    x.nav.r = lie::Rot3(m);
    x.nav.v = Vec3(r[10], r[11], r[12]);
    x.nav.p = Vec3(r[13], r[14], r[15]);
    x.bias_g = Vec3(r[16], r[17], r[18]);
    x.bias_a = Vec3(r[19], r[20], r[21]);
    s.truth.push_back(x);
  }
  for (const auto& r : read_csv(dir / "tracks.csv", 2)) {
    s.track_landmark[static_cast<LandmarkId>(r[0])] = static_cast<int>(r[1]);
  }
  return s;
}

}  // namespace rifls::sim
