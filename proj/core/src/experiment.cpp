#include "rifls/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>

#include "rifls/error.hpp"

namespace rifls {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail("unknown key '" + k + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) fail(std::string(key) + " must be a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(std::string(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(std::string(key) + " must be an integer");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(std::string(key) + " must be a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(std::string(key) + ": " + e.what());
    }
  }

  void get_vec3(const char* key, Vec3& out) {
    std::vector<double> v;
    get_doubles(key, v, 3);
    if (!v.empty()) out = Vec3(v[0], v[1], v[2]);
  }

  void get_doubles(const char* key, std::vector<double>& out, size_t n) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != n) fail(std::string(key) + " must be an array of " + std::to_string(n));
    out.clear();
    for (const json& e : v) {
      if (!e.is_number()) fail(std::string(key) + " entries must be numbers");
      out.push_back(e.get<double>());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string sub(const char* key) const { return path_ + "." + key; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::InvalidConfig, path_ + ": " + msg);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec3_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

json imu_json(const ImuNoiseConfig& n) {
  return {{"sigma_g", n.sigma_g}, {"sigma_a", n.sigma_a}, {"sigma_bg", n.sigma_bg},
          {"sigma_ba", n.sigma_ba}, {"rate", n.rate}};
}

void read_imu(const json& j, ImuNoiseConfig& n, const std::string& path) {
  Reader r(j, path);
  r.get("sigma_g", n.sigma_g);
  r.get("sigma_a", n.sigma_a);
  r.get("sigma_bg", n.sigma_bg);
  r.get("sigma_ba", n.sigma_ba);
  r.get("rate", n.rate);
}

json camera_json(const CameraModel& c) {
  std::vector<double> r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.push_back(c.r_bc(i, k));
  }
  return {{"fx", c.fx},         {"fy", c.fy},     {"cx", c.cx}, {"cy", c.cy},
          {"width", c.width},   {"height", c.height}, {"r_bc", r}, {"t_bc", vec3_json(c.t_bc)}};
}

void read_camera(const json& j, CameraModel& c, const std::string& path) {
  Reader r(j, path);
  r.get("fx", c.fx);
  r.get("fy", c.fy);
  r.get("cx", c.cx);
  r.get("cy", c.cy);
  r.get("width", c.width);
  r.get("height", c.height);
  std::vector<double> m;
  r.get_doubles("r_bc", m, 9);
  if (!m.empty()) {
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) c.r_bc(i, k) = m[3 * i + k];
    }
  }
  r.get_vec3("t_bc", c.t_bc);
}

std::string jac_mode_name(ImuJacobianMode m) {
  return m == ImuJacobianMode::Exact ? "exact" : "identity";
}

json smoother_json(const SmootherConfig& s) {
  const InitialPriorConfig& p = s.initial_prior;
  return {{"horizon", s.horizon},
          {"formulation", std::string(to_string(s.formulation))},
          {"imu_jacobian", jac_mode_name(s.imu_jac_mode)},
          {"fej", s.fej},
          {"max_outer_iters", s.max_outer_iters},
          {"lm_lambda_init", s.lm_lambda_init},
          {"convergence_tol", s.convergence_tol},
          {"function_tol", s.function_tol},
          {"max_lambda_escalations", s.max_lambda_escalations},
          {"min_parallax_deg", s.min_parallax_deg},
          {"covariance_floor", s.covariance_floor},
          {"prior_rank_tol", s.prior_rank_tol},
          {"initial_prior",
           {{"enabled", p.enabled},
            {"sigma_rot", p.sigma_rot},
            {"sigma_vel", p.sigma_vel},
            {"sigma_pos", p.sigma_pos},
            {"sigma_bg", p.sigma_bg},
            {"sigma_ba", p.sigma_ba}}}};
}

void read_smoother(const json& j, SmootherConfig& s, const std::string& path) {
  Reader r(j, path);
  r.get("horizon", s.horizon);
  std::string form;
  r.get("formulation", form);
  if (!form.empty()) {
    try {
      s.formulation = formulation_from_string(form);
    } catch (const Error&) {
      r.fail("unknown formulation '" + form + "'");
    }
  }
  std::string mode;
  r.get("imu_jacobian", mode);
  if (mode == "exact") {
    s.imu_jac_mode = ImuJacobianMode::Exact;
  } else if (mode == "identity") {
    s.imu_jac_mode = ImuJacobianMode::IdentityApprox;
  } else if (!mode.empty()) {
    r.fail("imu_jacobian must be 'exact' or 'identity'");
  }
  r.get("fej", s.fej);
  r.get("max_outer_iters", s.max_outer_iters);
  r.get("lm_lambda_init", s.lm_lambda_init);
  r.get("convergence_tol", s.convergence_tol);
  r.get("function_tol", s.function_tol);
  r.get("max_lambda_escalations", s.max_lambda_escalations);
  r.get("min_parallax_deg", s.min_parallax_deg);
  r.get("covariance_floor", s.covariance_floor);
  r.get("prior_rank_tol", s.prior_rank_tol);
  if (const json* p = r.child("initial_prior")) {
    Reader q(*p, r.sub("initial_prior"));
    q.get("enabled", s.initial_prior.enabled);
    q.get("sigma_rot", s.initial_prior.sigma_rot);
    q.get("sigma_vel", s.initial_prior.sigma_vel);
    q.get("sigma_pos", s.initial_prior.sigma_pos);
    q.get("sigma_bg", s.initial_prior.sigma_bg);
    q.get("sigma_ba", s.initial_prior.sigma_ba);
  }
}

// Fields of `full` that differ from `base`, so method overrides stay minimal.
json diff_object(const json& full, const json& base) {
  json out = json::object();
  for (const auto& [k, v] : full.items()) {
    if (!base.contains(k) || base.at(k) != v) {
      if (v.is_object() && base.contains(k) && base.at(k).is_object()) {
        out[k] = diff_object(v, base.at(k));
      } else {
        out[k] = v;
      }
    }
  }
  return out;
}

json to_json(const ExperimentConfig& c) {
  const sim::SimConfig& s = c.sim;
  const sim::TorusTrajectory& t = s.trajectory;
  json j;
  j["trajectory"] = {{"major_radius", t.major_radius}, {"minor_radius", t.minor_radius},
                     {"omega_major", t.omega_major},   {"omega_minor", t.omega_minor},
                     {"bank", t.bank},                 {"center", vec3_json(t.center)},
                     {"duration", t.duration}};
  j["scene"] = {{"half_x", s.scene.half_x}, {"half_y", s.scene.half_y}, {"z_min", s.scene.z_min},
                {"z_max", s.scene.z_max},   {"landmarks", s.scene.landmarks}};
  j["imu_noise"] = imu_json(s.imu_noise);
  j["camera"] = camera_json(s.camera);
  j["frontend"] = {{"break_probability", s.frontend.break_probability}};
  j["sensors"] = {{"camera_rate", s.camera_rate},
                  {"pixel_sigma", s.pixel_sigma},
                  {"max_range", s.max_range},
                  {"min_depth", s.min_depth},
                  {"initial_bias_g_sigma", s.initial_bias_g_sigma},
                  {"initial_bias_a_sigma", s.initial_bias_a_sigma}};
  j["smoother"] = smoother_json(c.smoother);
  j["methods"] = json::array();
  for (const eval::Method& m : c.methods) {
    const std::vector<std::string> names = preset_names();
    const bool is_preset = std::find(names.begin(), names.end(), m.name) != names.end();
    const SmootherConfig base = is_preset ? preset(m.name, c.smoother) : c.smoother;
    json e = {{"name", m.name}};
    if (!is_preset) e["preset"] = "custom";
    const json d = diff_object(smoother_json(m.config), smoother_json(base));
    if (!d.empty()) e["smoother"] = d;
    j["methods"].push_back(std::move(e));
  }
  j["n_trials"] = c.n_trials;
  j["seed0"] = c.seed0;
  j["initial_velocity_sigma"] = c.initial_velocity_sigma;
  j["trailing_window"] = c.trailing_window;
  j["trace_frames"] = c.trace_frames;
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace

SmootherConfig ExperimentConfig::default_smoother() {
  SmootherConfig s;
  s.initial_prior.enabled = true;
  return s;
}

std::vector<std::string> preset_names() {
  return {"fls-traditional", "fls-traditional-fej", "ri-fls", "ri-fls-exact", "ri-fls-smart"};
}

SmootherConfig preset(const std::string& name, const SmootherConfig& base) {
  SmootherConfig s = base;
  s.fej = false;
  s.imu_jac_mode = ImuJacobianMode::IdentityApprox;
  if (name == "fls-traditional") {
    s.formulation = ErrorFormulation::Traditional;
  } else if (name == "fls-traditional-fej") {
    s.formulation = ErrorFormulation::Traditional;
    s.fej = true;
  } else if (name == "ri-fls") {
    s.formulation = ErrorFormulation::RightInvariant;
  } else if (name == "ri-fls-exact") {
    s.formulation = ErrorFormulation::RightInvariant;
    s.imu_jac_mode = ImuJacobianMode::Exact;
  } else if (name == "ri-fls-smart") {
    s.formulation = ErrorFormulation::RightInvariant;
    s.min_parallax_deg = 3.0;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown method '" + name + "'");
  }
  return s;
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  for (const std::string& n : preset_names()) {
    c.methods.push_back({n, bind_sensors(preset(n, c.smoother), c.sim)});
  }
  return c;
}

SmootherConfig bind_sensors(SmootherConfig s, const sim::SimConfig& sim) {
  s.imu_noise = sim.imu_noise;
  s.camera = sim.camera;
  s.pixel_sigma = sim.pixel_sigma > 0.0 ? sim.pixel_sigma : 1.0;
  return s;
}

ExperimentConfig parse_experiment(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  sim::SimConfig& s = c.sim;
  {
    Reader r(j, "config");
    if (const json* t = r.child("trajectory")) {
      Reader q(*t, r.sub("trajectory"));
      q.get("major_radius", s.trajectory.major_radius);
      q.get("minor_radius", s.trajectory.minor_radius);
      q.get("omega_major", s.trajectory.omega_major);
      q.get("omega_minor", s.trajectory.omega_minor);
      q.get("bank", s.trajectory.bank);
      q.get_vec3("center", s.trajectory.center);
      q.get("duration", s.trajectory.duration);
    }
    if (const json* t = r.child("scene")) {
      Reader q(*t, r.sub("scene"));
      q.get("half_x", s.scene.half_x);
      q.get("half_y", s.scene.half_y);
      q.get("z_min", s.scene.z_min);
      q.get("z_max", s.scene.z_max);
      q.get("landmarks", s.scene.landmarks);
    }
    if (const json* t = r.child("imu_noise")) read_imu(*t, s.imu_noise, r.sub("imu_noise"));
    if (const json* t = r.child("camera")) read_camera(*t, s.camera, r.sub("camera"));
    if (const json* t = r.child("frontend")) {
      Reader q(*t, r.sub("frontend"));
      q.get("break_probability", s.frontend.break_probability);
    }
    if (const json* t = r.child("sensors")) {
      Reader q(*t, r.sub("sensors"));
      q.get("camera_rate", s.camera_rate);
      q.get("pixel_sigma", s.pixel_sigma);
      q.get("max_range", s.max_range);
      q.get("min_depth", s.min_depth);
      q.get("initial_bias_g_sigma", s.initial_bias_g_sigma);
      q.get("initial_bias_a_sigma", s.initial_bias_a_sigma);
    }
    if (const json* t = r.child("smoother")) read_smoother(*t, c.smoother, r.sub("smoother"));
    const json* methods = r.child("methods");
    r.get("n_trials", c.n_trials);
    r.get("seed0", c.seed0);
    r.get("initial_velocity_sigma", c.initial_velocity_sigma);
    r.get("trailing_window", c.trailing_window);
    r.get("trace_frames", c.trace_frames);
    r.get("output_dir", c.output_dir);

    const std::vector<std::string> names = preset_names();
    if (!methods) {
      for (const std::string& n : names) c.methods.push_back({n, preset(n, c.smoother)});
    } else {
      if (!methods->is_array()) r.fail("methods must be an array");
      std::set<std::string> used;
      for (size_t i = 0; i < methods->size(); ++i) {
        const json& m = methods->at(i);
        const std::string path = r.sub("methods") + "[" + std::to_string(i) + "]";
        eval::Method method;
        if (m.is_string()) {
          method.name = m.get<std::string>();
          method.config = preset(method.name, c.smoother);
        } else {
          Reader q(m, path);
          q.get("name", method.name);
          std::string base = method.name;
          q.get("preset", base);
          if (method.name.empty()) q.fail("method needs a name");
          if (std::find(names.begin(), names.end(), base) != names.end()) {
            method.config = preset(base, c.smoother);
          } else if (base == "custom") {
            method.config = c.smoother;
          } else {
            q.fail("unknown preset '" + base + "'");
          }
          if (const json* o = q.child("smoother")) read_smoother(*o, method.config, path + ".smoother");
        }
        if (!used.insert(method.name).second) r.fail("duplicate method '" + method.name + "'");
        c.methods.push_back(std::move(method));
      }
    }
  }
  if (c.n_trials < 1) throw Error(ErrorCode::InvalidConfig, "n_trials must be >= 1");
  if (!(c.initial_velocity_sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "initial_velocity_sigma must be >= 0");
  }
  if (!(c.trailing_window > 0.0)) throw Error(ErrorCode::InvalidConfig, "trailing_window must be > 0");
  s.validate();
  c.smoother = bind_sensors(c.smoother, s);
  c.smoother.validate();
  for (eval::Method& m : c.methods) {
    m.config = bind_sensors(m.config, s);
    m.config.validate();
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str());
}

std::string experiment_to_json(const ExperimentConfig& c) { return to_json(c).dump(2); }

std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

eval::Method find_method(const ExperimentConfig& c, const std::string& name) {
  for (const eval::Method& m : c.methods) {
    if (m.name == name) return m;
  }
  return {name, bind_sensors(preset(name, c.smoother), c.sim)};
}

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& c,
                    const std::string& command, std::uint64_t seed) {
  json m = {{"tool", "rifls"},
            {"version", kToolVersion},
            {"command", command},
            {"seed", seed},
            {"config_hash", hash_hex(config_hash(c))},
            {"config", to_json(c)}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

}  // namespace rifls
