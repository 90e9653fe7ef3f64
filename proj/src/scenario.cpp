#include "dbot/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace dbot {
namespace {

using nlohmann::json;

// Walks one JSON object; every key read is remembered so leftovers can be
// reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ScenarioError(fmt::format("{}: {}", path_.empty() ? "<root>" : path_, what));
  }
  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  const json& raw(const std::string& k) {
    if (!has(k)) throw ScenarioError(fmt::format("{}: missing required key", key_path(k)));
    return j_.at(k);
  }

  double num(const std::string& k, double def) { return has(k) ? to_num(j_.at(k), key_path(k)) : def; }
  double num(const std::string& k) { return to_num(raw(k), key_path(k)); }
  int integer(const std::string& k, int def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_integer()) throw ScenarioError(fmt::format("{}: expected an integer", key_path(k)));
    return v.get<int>();
  }
  bool boolean(const std::string& k, bool def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_boolean()) throw ScenarioError(fmt::format("{}: expected a boolean", key_path(k)));
    return v.get<bool>();
  }
  std::string str(const std::string& k, const std::string& def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_string()) throw ScenarioError(fmt::format("{}: expected a string", key_path(k)));
    return v.get<std::string>();
  }
  Obj child(const std::string& k) { return Obj(raw(k), key_path(k)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ScenarioError(fmt::format("{}: unknown key", key_path(it.key())));
  }

  static double to_num(const json& v, const std::string& where) {
    if (!v.is_number()) throw ScenarioError(fmt::format("{}: expected a number", where));
    double d = v.get<double>();
    if (!std::isfinite(d)) throw ScenarioError(fmt::format("{}: not finite", where));
    return d;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const json& array_at(Obj& o, const std::string& k) {
  const json& a = o.raw(k);
  if (!a.is_array()) throw ScenarioError(fmt::format("{}: expected an array", o.key_path(k)));
  return a;
}

Rect read_rect(const json& j, const std::string& path) {
  Obj o(j, path);
  Rect r{o.num("xmin"), o.num("ymin"), o.num("xmax"), o.num("ymax")};
  o.finish();
  if (!(r.xmin < r.xmax && r.ymin < r.ymax)) o.fail("empty rectangle");
  return r;
}

void read_robot(Obj o, RobotParams& r) {
  r.mass = o.num("mass", r.mass);
  r.wheel_radius = o.num("wheel_radius", r.wheel_radius);
  r.track_width = o.num("track_width", r.track_width);
  r.wheel_count = o.integer("wheel_count", r.wheel_count);
  r.mu = o.num("mu", r.mu);
  r.g = o.num("g", r.g);
  r.v_max = o.num("v_max", r.v_max);
  r.wheel_omega_max = o.num("wheel_omega_max", r.wheel_omega_max);
  r.ticks_per_wheel_rev = o.integer("ticks_per_wheel_rev", r.ticks_per_wheel_rev);
  o.finish();
}

// Duplicate keys are invisible after parsing, so catch them in the parser.
json parse_checked(const std::string& text) {
  std::vector<std::set<std::string>> stack;
  std::vector<std::string> path;
  auto cb = [&](int /*depth*/, json::parse_event_t ev, json& parsed) {
    switch (ev) {
      case json::parse_event_t::object_start:
        stack.emplace_back();
        break;
      case json::parse_event_t::object_end:
        stack.pop_back();
        break;
      case json::parse_event_t::key: {
        const auto k = parsed.get<std::string>();
        if (!stack.back().insert(k).second) throw ScenarioError(fmt::format("duplicate key \"{}\"", k));
        break;
      }
      default:
        break;
    }
    return true;
  };
  try {
    return json::parse(text, cb);
  } catch (const json::parse_error& e) {
    throw ScenarioError(fmt::format("malformed JSON: {}", e.what()));
  }
}

int steps_for(double hz, double dt, const char* name) {
  if (!(hz > 0.0)) throw ScenarioError(fmt::format("rates.{}: must be positive", name));
  const double ratio = 1.0 / (hz * dt);
  const double r = std::round(ratio);
  if (r < 1.0 || std::abs(ratio - r) > 1e-6 * r)
    throw ScenarioError(fmt::format("rates.{}: period {} s is not a whole multiple of sim_dt {} s",
                                    name, 1.0 / hz, dt));
  return static_cast<int>(r);
}

}  // namespace

int Scenario::control_steps() const { return steps_for(rates.control_hz, sim_dt, "control_hz"); }
int Scenario::autonomy_steps() const { return steps_for(rates.autonomy_hz, sim_dt, "autonomy_hz"); }
int Scenario::telemetry_steps() const { return steps_for(rates.telemetry_hz, sim_dt, "telemetry_hz"); }
int Scenario::gps_steps() const { return steps_for(rates.gps_hz, sim_dt, "gps_hz"); }

int Scenario::status_ticks() const {
  const int s = steps_for(rates.status_hz, sim_dt, "status_hz");
  const int c = control_steps();
  if (s % c != 0) throw ScenarioError("rates.status_hz: status period is not a multiple of the control period");
  return s / c;
}

std::int64_t Scenario::total_steps() const {
  return static_cast<std::int64_t>(std::llround(duration / sim_dt));
}

void Scenario::validate() const {
  if (!(sim_dt > 0.0)) throw ScenarioError("sim_dt: must be positive");
  if (!(duration > 0.0)) throw ScenarioError("duration: must be positive");
  try {
    plant.robot.validate();
    world.validate();
    lidar.validate();
    ekf.validate();
    faults.channel.validate();
    planner.mppi.validate();
  } catch (const std::exception& e) {
    throw ScenarioError(e.what());
  }
  control_steps();
  status_ticks();
  const int a = autonomy_steps();
  telemetry_steps();
  if (gps_steps() % a != 0) throw ScenarioError("rates.gps_hz: GPS period is not a multiple of the autonomy period");
  if (!open_loop && goals.empty()) throw ScenarioError("goals: at least one goal is required");
  for (std::size_t i = 0; i < goals.size(); ++i)
    if (!world.bounds.contains(goals[i])) throw ScenarioError(fmt::format("goals[{}]: outside world bounds", i));
  if (!world.bounds.contains(Vec2{start.x, start.y})) throw ScenarioError("start: outside world bounds");
  if (!(mapping.resolution > 0.0)) throw ScenarioError("mapping.resolution: must be positive");
  if (!(mapping.l_occ > 0.0 && mapping.l_free < 0.0 && mapping.l_max > 0.0))
    throw ScenarioError("mapping: log-odds increments have the wrong sign");
  if (!(mapping.inflation_radius > 0.0)) throw ScenarioError("mapping.inflation_radius: must be positive");
  if (!(rates.map_snapshot_period > 0.0)) throw ScenarioError("rates.map_snapshot_period: must be positive");
  if (open_loop && !(open_loop->period > 0.0)) throw ScenarioError("drive.period: must be positive");
  for (const auto& b : faults.battery_overrides)
    if (!(b.end >= b.start)) throw ScenarioError("faults.battery_overrides: end before start");
}

RobotParams parse_robot_params(const std::string& text) {
  RobotParams r;
  read_robot(Obj(parse_checked(text), ""), r);
  try {
    r.validate();
  } catch (const ParameterError& e) {
    throw ScenarioError(e.what());
  }
  return r;
}

Scenario parse_scenario(const std::string& text) {
  const json root = parse_checked(text);
  Scenario s;
  Obj o(root, "");

  const json& seed = o.raw("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
    throw ScenarioError("seed: expected a non-negative integer");
  s.seed = seed.get<std::uint64_t>();
  s.duration = o.num("duration");
  s.sim_dt = o.num("sim_dt", s.sim_dt);

  if (o.has("robot")) read_robot(o.child("robot"), s.plant.robot);

  if (o.has("plant")) {
    Obj p = o.child("plant");
    s.plant.motor_tau = p.num("motor_tau", s.plant.motor_tau);
    s.plant.left_radius_scale = p.num("left_radius_scale", s.plant.left_radius_scale);
    s.plant.right_radius_scale = p.num("right_radius_scale", s.plant.right_radius_scale);
    s.plant.track_scale = p.num("track_scale", s.plant.track_scale);
    s.plant.logic_current = p.num("logic_current", s.plant.logic_current);
    s.plant.footprint_length = p.num("footprint_length", s.plant.footprint_length);
    s.plant.footprint_width = p.num("footprint_width", s.plant.footprint_width);
    p.finish();
  }
  s.planner.mppi.footprint_length = s.plant.footprint_length;
  s.planner.mppi.footprint_width = s.plant.footprint_width;

  {
    Obj p = o.child("start");
    s.start = {p.num("x"), p.num("y"), p.num("theta", 0.0)};
    p.finish();
  }

  if (o.has("battery")) {
    Obj b = o.child("battery");
    s.battery.soc = b.num("soc", s.battery.soc);
    s.battery.capacity = b.num("capacity", s.battery.capacity);
    s.battery.internal_resistance = b.num("internal_resistance", s.battery.internal_resistance);
    s.battery.v_full = b.num("v_full", s.battery.v_full);
    s.battery.v_empty = b.num("v_empty", s.battery.v_empty);
    b.finish();
    if (!(s.battery.soc >= 0.0 && s.battery.soc <= 1.0)) throw ScenarioError("battery.soc: outside [0, 1]");
  }
  s.battery.voltage = s.battery.open_circuit();

  {
    Obj w = o.child("world");
    s.world.bounds = read_rect(w.raw("bounds"), "world.bounds");
    if (w.has("obstacles")) {
      const json& a = array_at(w, "obstacles");
      for (std::size_t i = 0; i < a.size(); ++i)
        s.world.static_obstacles.push_back(read_rect(a[i], fmt::format("world.obstacles[{}]", i)));
    }
    if (w.has("agents")) {
      const json& a = array_at(w, "agents");
      for (std::size_t i = 0; i < a.size(); ++i) {
        Obj g(a[i], fmt::format("world.agents[{}]", i));
        Agent ag;
        ag.id = g.integer("id", static_cast<int>(i) + 1);
        try {
          ag.cls = object_class_from_string(g.str("class", "Pedestrian"));
        } catch (const std::invalid_argument&) {
          g.fail("unknown object class");
        }
        ag.pose = {g.num("x"), g.num("y"), g.num("theta", 0.0)};
        ag.twist = {g.num("v", 0.0), g.num("omega", 0.0)};
        ag.size_x = g.num("size_x", ag.size_x);
        ag.size_y = g.num("size_y", ag.size_y);
        g.finish();
        s.world.agents.push_back(ag);
      }
    }
    w.finish();
  }

  if (o.has("goals")) {
    const json& a = array_at(o, "goals");
    for (std::size_t i = 0; i < a.size(); ++i) {
      Obj g(a[i], fmt::format("goals[{}]", i));
      s.goals.push_back({g.num("x"), g.num("y")});
      g.finish();
    }
  }

  if (o.has("lidar")) {
    Obj l = o.child("lidar");
    s.lidar.n_beams = l.integer("n_beams", s.lidar.n_beams);
    s.lidar.fov = l.num("fov", s.lidar.fov);
    s.lidar.max_range = l.num("max_range", s.lidar.max_range);
    s.lidar.sigma_r = l.num("sigma_r", s.lidar.sigma_r);
    l.finish();
  }

  bool r_gps_set = false, r_yaw_set = false;
  if (o.has("noise")) {
    Obj n = o.child("noise");
    s.sensors.gps_sigma = n.num("gps_sigma", s.sensors.gps_sigma);
    s.sensors.yaw_rate_sigma = n.num("yaw_rate_sigma", s.sensors.yaw_rate_sigma);
    s.sensors.detector_sigma = n.num("detector_sigma", s.sensors.detector_sigma);
    s.sensors.detector_dropout = n.num("detector_dropout", s.sensors.detector_dropout);
    s.sensors.detector_range = n.num("detector_range", s.sensors.detector_range);
    s.sensors.detector_fov = n.num("detector_fov", s.sensors.detector_fov);
    if (n.has("ekf")) {
      Obj e = n.child("ekf");
      const double qxy = e.num("q_xy", s.ekf.q_odom(0, 0));
      const double qth = e.num("q_theta", s.ekf.q_odom(2, 2));
      s.ekf.q_odom = Eigen::Vector3d(qxy, qxy, qth).asDiagonal();
      s.ekf.q_reference_dt = e.num("q_reference_dt", s.ekf.q_reference_dt);
      if (e.has("r_gps")) {
        s.ekf.r_gps = Eigen::Matrix2d::Identity() * e.num("r_gps");
        r_gps_set = true;
      }
      if (e.has("r_yaw_rate")) {
        s.ekf.r_yaw_rate = e.num("r_yaw_rate");
        r_yaw_set = true;
      }
      s.ekf.var_omega_odom = e.num("var_omega_odom", s.ekf.var_omega_odom);
      e.finish();
    }
    n.finish();
    if (s.sensors.gps_sigma < 0.0 || s.sensors.yaw_rate_sigma < 0.0 || s.sensors.detector_sigma < 0.0)
      throw ScenarioError("noise: sigmas must be non-negative");
    if (s.sensors.detector_dropout < 0.0 || s.sensors.detector_dropout > 1.0)
      throw ScenarioError("noise.detector_dropout: outside [0, 1]");
  }
  // Unless overridden the filter trusts the sensors as configured.
  if (!r_gps_set) s.ekf.r_gps = Eigen::Matrix2d::Identity() * std::max(s.sensors.gps_sigma * s.sensors.gps_sigma, 1e-6);
  if (!r_yaw_set) s.ekf.r_yaw_rate = std::max(s.sensors.yaw_rate_sigma * s.sensors.yaw_rate_sigma, 1e-9);

  if (o.has("faults")) {
    Obj f = o.child("faults");
    auto& ch = s.faults.channel;
    ch.latency = f.num("latency", ch.latency);
    ch.drop_prob = f.num("drop_prob", ch.drop_prob);
    ch.corrupt_prob = f.num("corrupt_prob", ch.corrupt_prob);
    if (f.has("blackouts")) {
      const json& a = array_at(f, "blackouts");
      for (std::size_t i = 0; i < a.size(); ++i) {
        const auto where = fmt::format("faults.blackouts[{}]", i);
        if (!a[i].is_array() || a[i].size() != 2) throw ScenarioError(where + ": expected [start, end]");
        ch.blackout_intervals.emplace_back(Obj::to_num(a[i][0], where), Obj::to_num(a[i][1], where));
      }
    }
    if (f.has("battery_overrides")) {
      const json& a = array_at(f, "battery_overrides");
      for (std::size_t i = 0; i < a.size(); ++i) {
        Obj b(a[i], fmt::format("faults.battery_overrides[{}]", i));
        s.faults.battery_overrides.push_back({b.num("start"), b.num("end"), b.num("voltage")});
        b.finish();
      }
    }
    f.finish();
  }

  if (o.has("rates")) {
    Obj r = o.child("rates");
    s.rates.control_hz = r.num("control_hz", s.rates.control_hz);
    s.rates.status_hz = r.num("status_hz", s.rates.status_hz);
    s.rates.autonomy_hz = r.num("autonomy_hz", s.rates.autonomy_hz);
    s.rates.telemetry_hz = r.num("telemetry_hz", s.rates.telemetry_hz);
    s.rates.gps_hz = r.num("gps_hz", s.rates.gps_hz);
    s.rates.map_snapshot_period = r.num("map_snapshot_period", s.rates.map_snapshot_period);
    r.finish();
  }

  if (o.has("firmware")) {
    Obj f = o.child("firmware");
    s.firmware.gains.kp = f.num("kp", s.firmware.gains.kp);
    s.firmware.gains.ki = f.num("ki", s.firmware.gains.ki);
    s.firmware.gains.kd = f.num("kd", s.firmware.gains.kd);
    s.firmware.watchdog_timeout = f.num("watchdog_timeout", s.firmware.watchdog_timeout);
    s.firmware.battery_fault_v = f.num("battery_fault_v", s.firmware.battery_fault_v);
    f.finish();
  }

  if (o.has("mapping")) {
    Obj m = o.child("mapping");
    s.mapping.resolution = m.num("resolution", s.mapping.resolution);
    s.mapping.l_occ = m.num("l_occ", s.mapping.l_occ);
    s.mapping.l_free = m.num("l_free", s.mapping.l_free);
    s.mapping.l_max = m.num("l_max", s.mapping.l_max);
    s.mapping.occ_threshold = m.num("occ_threshold", s.mapping.occ_threshold);
    s.mapping.inflation_radius = m.num("inflation_radius", s.mapping.inflation_radius);
    m.finish();
  }

  if (o.has("planner")) {
    Obj p = o.child("planner");
    s.planner.astar.alpha = p.num("alpha", s.planner.astar.alpha);
    s.planner.goal_tolerance = p.num("goal_tolerance", s.planner.goal_tolerance);
    s.planner.arrival_tolerance = p.num("arrival_tolerance", s.planner.arrival_tolerance);
    s.planner.replan_deviation = p.num("replan_deviation", s.planner.replan_deviation);
    s.planner.dynamic_mask_margin = p.num("dynamic_mask_margin", s.planner.dynamic_mask_margin);
    if (p.has("mppi")) {
      Obj m = p.child("mppi");
      auto& q = s.planner.mppi;
      q.K = m.integer("K", q.K);
      q.H = m.integer("H", q.H);
      q.dt = m.num("dt", q.dt);
      q.lambda = m.num("lambda", q.lambda);
      q.sigma_v = m.num("sigma_v", q.sigma_v);
      q.sigma_omega = m.num("sigma_omega", q.sigma_omega);
      q.w_obs = m.num("w_obs", q.w_obs);
      q.w_path = m.num("w_path", q.w_path);
      q.w_goal = m.num("w_goal", q.w_goal);
      q.w_ctrl = m.num("w_ctrl", q.w_ctrl);
      q.v_min = m.num("v_min", q.v_min);
      q.v_max = m.num("v_max", q.v_max);
      q.omega_min = m.num("omega_min", q.omega_min);
      q.omega_max = m.num("omega_max", q.omega_max);
      q.track_margin = m.num("track_margin", q.track_margin);
      q.static_margin = m.num("static_margin", q.static_margin);
      q.w_margin = m.num("w_margin", q.w_margin);
      q.brake_rollouts = m.integer("brake_rollouts", q.brake_rollouts);
      m.finish();
    }
    p.finish();
  }

  if (o.has("estimator")) {
    Obj e = o.child("estimator");
    s.use_encoders = e.boolean("use_encoders", s.use_encoders);
    e.finish();
  }

  if (o.has("drive")) {
    Obj d = o.child("drive");
    const auto mode = d.str("mode", "goals");
    if (mode == "figure_eight") {
      OpenLoopDrive ol;
      ol.v = d.num("v", ol.v);
      ol.period = d.num("period", ol.period);
      s.open_loop = ol;
    } else if (mode != "goals") {
      throw ScenarioError("drive.mode: expected \"goals\" or \"figure_eight\"");
    }
    d.finish();
  }
  o.finish();

  s.firmware.ticks_per_wheel_rev = s.plant.robot.ticks_per_wheel_rev;
  s.firmware.control_period = 1.0 / s.rates.control_hz;
  s.validate();
  s.firmware.status_every = s.status_ticks();
  try {
    s.firmware.validate();
  } catch (const std::exception& e) {
    throw ScenarioError(e.what());
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(fmt::format("cannot open scenario file {}", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace dbot
