#include "dbot/runner.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "dbot/estimation.hpp"
#include "dbot/mapping.hpp"
#include "dbot/planning.hpp"

namespace dbot {

// High-level computing unit: estimation, mapping, planning and the operator
// command chain. Talks to the firmware only through encoded frames.
class Autonomy {
 public:
  explicit Autonomy(const Scenario& s)
      : s_(s),
        ekf_(s.start, Eigen::Vector3d(0.01, 0.01, 0.01).asDiagonal(), s.ekf),
        dr_(s.start),
        grid_(make_grid(s)),
        costmap_(inflate(grid_, s.mapping.inflation_radius)),
        goals_(s.goals),
        nominal_(static_cast<std::size_t>(s.planner.mppi.H)) {}

  FrameDecoder& decoder() { return decoder_; }

  void on_status(const StatusPayload& st, double t, double imu_yaw_rate) {
    last_status_ = st;
    have_status_ = true;
    if (!have_ticks_) {
      have_ticks_ = true;
      last_ticks_l_ = st.left_ticks;
      last_ticks_r_ = st.right_ticks;
      last_status_t_ = t;
      return;
    }
    const double dt = t - last_status_t_;
    if (!(dt > 0.0)) return;
    const double tick_angle = 2.0 * kPi / s_.plant.robot.ticks_per_wheel_rev;
    const auto dl = static_cast<std::int32_t>(static_cast<std::uint32_t>(st.left_ticks) -
                                              static_cast<std::uint32_t>(last_ticks_l_));
    const auto dr = static_cast<std::int32_t>(static_cast<std::uint32_t>(st.right_ticks) -
                                              static_cast<std::uint32_t>(last_ticks_r_));
    last_ticks_l_ = st.left_ticks;
    last_ticks_r_ = st.right_ticks;
    last_status_t_ = t;

    const Twist2D enc = twist_from_wheels({dl * tick_angle / dt, dr * tick_angle / dt}, s_.plant.robot);
    Twist2D odom = s_.use_encoders ? enc : last_cmd_twist_;
    odom.omega = ekf_update_yawrate(imu_yaw_rate, odom.omega, s_.ekf.r_yaw_rate, s_.ekf.var_omega_odom);
    ekf_.predict(odom, dt);
    dr_ = integrate_pose(dr_, s_.use_encoders ? enc : last_cmd_twist_, dt);
  }

  // One autonomy period. Returns encoded frames for the downlink.
  std::vector<std::vector<std::uint8_t>> tick(double t, const std::vector<double>& scan,
                                              const std::vector<Detection>& dets, const std::optional<Vec2>& gps,
                                              const std::vector<OperatorCommand>& cmds, RunCounters& counters) {
    std::vector<std::vector<std::uint8_t>> out;
    auto send = [&](const Frame& f) { out.push_back(encode_frame(f)); };

    for (const auto& c : cmds) apply(c, send);
    reassert(t, send);

    if (gps) ekf_.update_gps(Eigen::Vector2d(gps->x, gps->y));
    const Pose2D est = ekf_.state().pose();

    detections_ = dets;
    map_scan(est, scan);
    for (const auto& d : dets) tracks_.observe(d.agent_id, {t, d.center, d.footprint});
    tracks_.prune(t);

    Twist2D cmd{};
    if (s_.open_loop) {
      const double half = s_.open_loop->period / 2.0;
      const double w = 2.0 * kPi / half;
      cmd = {s_.open_loop->v, std::fmod(t, s_.open_loop->period) < half ? w : -w};
    } else {
      cmd = navigate(t, est, counters);
    }
    last_cmd_twist_ = cmd;
    const WheelSpeeds w = wheels_from_twist_clamped(cmd, s_.plant.robot);
    send(make_cmd_vel(tx_seq_++, CmdVelPayload::from_wheels(w)));
    last_cmd_twist_ = twist_from_wheels(w, s_.plant.robot);
    return out;
  }

  Pose2D est_pose() const { return ekf_.state().pose(); }
  Pose2D dr_pose() const { return dr_; }
  int goal_index() const { return goal_index_; }
  std::optional<Vec2> goal() const {
    if (s_.open_loop || goal_index_ >= static_cast<int>(goals_.size())) return std::nullopt;
    return goals_[goal_index_];
  }
  std::uint64_t path_id() const { return path_.empty() ? 0 : path_.id; }
  const PlannedPath& path() const { return path_; }
  const OccupancyGrid& grid() const { return grid_; }
  const std::vector<Detection>& detections() const { return detections_; }
  const PlannerSummary& planner() const { return planner_; }
  std::optional<StatusPayload> last_status() const {
    return have_status_ ? std::optional(last_status_) : std::nullopt;
  }

  // Paths produced since the last call.
  std::vector<PlannedPath> take_new_paths() { return std::exchange(new_paths_, {}); }

 private:
  static OccupancyGrid make_grid(const Scenario& s) {
    OccupancyGrid g = OccupancyGrid::make(GridGeometry::covering(s.world.bounds, s.mapping.resolution));
    g.l_occ = s.mapping.l_occ;
    g.l_free = s.mapping.l_free;
    g.l_max = s.mapping.l_max;
    g.occ_threshold = s.mapping.occ_threshold;
    return g;
  }

  template <class Send>
  void apply(const OperatorCommand& c, Send& send) {
    switch (c.kind) {
      case CommandKind::EStop:
        estop_ = true;
        send(make_frame(FrameKind::EStop, tx_seq_++));
        break;
      case CommandKind::Resume:
        estop_ = false;
        send(make_frame(FrameKind::Resume, tx_seq_++));
        break;
      case CommandKind::SetGoal:
        // An operator goal supersedes whatever is left of the plan.
        goals_.push_back({c.x, c.y});
        goal_index_ = static_cast<int>(goals_.size()) - 1;
        drop_path();
        break;
      case CommandKind::Lock:
      case CommandKind::Unlock:
        want_lock_ = c.kind == CommandKind::Lock ? LockState::Locked : LockState::Unlocked;
        send(make_frame(c.kind == CommandKind::Lock ? FrameKind::Lock : FrameKind::Unlock, tx_seq_++));
        break;
    }
  }

  // Latched requests are repeated until the firmware reports them, so a lost
  // frame cannot silently cancel an operator action.
  template <class Send>
  void reassert(double t, Send& send) {
    if (!have_status_) return;
    if (estop_ && last_status_.mode != static_cast<std::uint8_t>(FirmwareMode::EStopped))
      send(make_frame(FrameKind::EStop, tx_seq_++));
    if (want_lock_ && last_status_.lock != static_cast<std::uint8_t>(*want_lock_) && t - last_lock_resend_ >= 0.5) {
      last_lock_resend_ = t;
      send(make_frame(*want_lock_ == LockState::Locked ? FrameKind::Lock : FrameKind::Unlock, tx_seq_++));
    }
  }

  void map_scan(const Pose2D& est, const std::vector<double>& scan) {
    if (scan.empty()) return;
    // Beams ending on a detected agent still clear space but leave no trace.
    std::vector<std::uint8_t> mask(scan.size(), 0);
    if (!detections_.empty()) {
      const double m = s_.planner.dynamic_mask_margin;
      for (std::size_t k = 0; k < scan.size(); ++k) {
        if (scan[k] >= s_.lidar.max_range) continue;
        const double a = est.theta + s_.lidar.beam_angle(static_cast<int>(k));
        const Vec2 e{est.x + scan[k] * std::cos(a), est.y + scan[k] * std::sin(a)};
        for (const auto& d : detections_) {
          if (Rect::centered(d.center, d.footprint.x + 2 * m, d.footprint.y + 2 * m).contains(e)) {
            mask[k] = 1;
            break;
          }
        }
      }
    }
    update_grid(grid_, est, scan, s_.lidar, mask);
    if (grid_.lethal_version != costmap_version_) {
      costmap_ = inflate(grid_, s_.mapping.inflation_radius);
      costmap_version_ = grid_.lethal_version;
      costmap_changed_ = true;
    }
  }

  void drop_path() {
    path_ = {};
    std::fill(nominal_.begin(), nominal_.end(), Twist2D{});
  }

  bool path_blocked() const {
    for (const auto& c : path_.cells)
      if (costmap_.lethal(c)) return true;
    return false;
  }

  bool replan(const Pose2D& est, Vec2 goal, RunCounters& counters) {
    ++counters.replans;
    Vec2 start{est.x, est.y};
    // The estimate can sit inside inflation; start from the nearest clear cell.
    if (costmap_.lethal_at(start)) {
      const CellIndex c0 = costmap_.geom.cell_of(start);
      const int reach = static_cast<int>(std::ceil(0.5 / costmap_.geom.resolution));
      double best = 1e18;
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dx = -reach; dx <= reach; ++dx) {
          const CellIndex c{c0.ix + dx, c0.iy + dy};
          if (!costmap_.geom.in_bounds(c) || costmap_.lethal(c)) continue;
          const double d = dx * dx + dy * dy;
          if (d < best) {
            best = d;
            start = costmap_.geom.center(c);
          }
        }
    }
    try {
      PlannedPath p = astar(costmap_, start, goal, s_.planner.astar);
      p.id = ++path_counter_;
      path_ = p;
      new_paths_.push_back(p);
      return true;
    } catch (const NoPathError&) {
    } catch (const InvalidEndpointError&) {
    }
    ++counters.plan_failures;
    return false;
  }

  Twist2D navigate(double t, const Pose2D& est, RunCounters& counters) {
    (void)t;
    planner_.safe_stop = false;
    if (estop_ || goal_index_ >= static_cast<int>(goals_.size())) {
      drop_path();
      planner_.path_id = 0;
      return {};
    }
    const Vec2 goal = goals_[goal_index_];
    if (std::hypot(est.x - goal.x, est.y - goal.y) <= s_.planner.arrival_tolerance) {
      ++goal_index_;
      drop_path();
      planner_.path_id = 0;
      return {};
    }

    bool need = path_.empty();
    if (!need && costmap_changed_ && path_blocked()) need = true;
    if (!need && distance_to_polyline({est.x, est.y}, path_.waypoints) > s_.planner.replan_deviation) need = true;
    costmap_changed_ = false;
    if (need && !replan(est, goal, counters) && path_.empty()) {
      planner_.path_id = 0;
      return {};
    }

    const auto tracks = tracks_.tracks();
    ++counters.mppi_calls;
    MppiResult r = mppi_plan(est, nominal_, path_, costmap_, tracks, s_.planner.mppi, s_.seed, mppi_calls_++);
    nominal_ = std::move(r.nominal);
    planner_.min_cost = r.diag.min_cost;
    planner_.mean_cost = r.diag.mean_cost;
    planner_.ess = r.diag.ess;
    planner_.safe_stop = r.diag.safe_stop;
    planner_.path_id = path_.id;
    planner_.path_points = path_.waypoints.size();
    if (r.diag.safe_stop) ++counters.safe_stops;
    return r.command;
  }

  const Scenario& s_;
  FrameDecoder decoder_;
  std::uint16_t tx_seq_ = 0;

  PoseEstimator ekf_;
  Pose2D dr_;
  bool have_ticks_ = false;
  std::int32_t last_ticks_l_ = 0, last_ticks_r_ = 0;
  double last_status_t_ = 0.0;
  bool have_status_ = false;
  StatusPayload last_status_;
  Twist2D last_cmd_twist_;

  OccupancyGrid grid_;
  Costmap costmap_;
  std::uint64_t costmap_version_ = 0;
  bool costmap_changed_ = false;
  TrackHistory tracks_;
  std::vector<Detection> detections_;

  std::vector<Vec2> goals_;
  int goal_index_ = 0;
  PlannedPath path_;
  std::uint64_t path_counter_ = 0;
  std::vector<PlannedPath> new_paths_;
  std::vector<Twist2D> nominal_;
  std::uint64_t mppi_calls_ = 0;
  PlannerSummary planner_;

  bool estop_ = false;
  std::optional<LockState> want_lock_;
  double last_lock_resend_ = -1e9;
};

namespace {

double wall_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Simulation::Simulation(const Scenario& s, RunOptions opts)
    : s_(s),
      opts_(std::move(opts)),
      total_(s.total_steps()),
      ctrl_steps_(s.control_steps()),
      aut_steps_(s.autonomy_steps()),
      tel_steps_(s.telemetry_steps()),
      gps_steps_(s.gps_steps()),
      plant_(s.plant, s.world, s.start, s.battery),
      firmware_(s.firmware),
      down_(s.faults.channel, make_stream(s.seed, StreamId::ChannelDown)),
      up_(s.faults.channel, make_stream(s.seed, StreamId::ChannelUp)),
      hlcu_(std::make_unique<Autonomy>(s_)),
      rng_lidar_(make_stream(s.seed, StreamId::Lidar)),
      rng_gps_(make_stream(s.seed, StreamId::Gps)),
      rng_imu_(make_stream(s.seed, StreamId::Imu)),
      rng_det_(make_stream(s.seed, StreamId::Detector)),
      publisher_(opts_.telemetry_log_path.empty() ? TelemetryPublisher() : TelemetryPublisher(opts_.telemetry_log_path)) {
  s_.validate();
  if (opts_.telemetry_sink) publisher_.set_sink(opts_.telemetry_sink);
  for (std::size_t i = 1; i < opts_.commands.size(); ++i)
    if (opts_.commands[i].t < opts_.commands[i - 1].t) throw std::invalid_argument("command log is not time ordered");
  if (!opts_.csv_path.empty()) {
    csv_.open(opts_.csv_path, std::ios::binary | std::ios::trunc);
    paths_csv_.open(paths_file_for(opts_.csv_path), std::ios::binary | std::ios::trunc);
    if (!csv_ || !paths_csv_) throw std::runtime_error(fmt::format("cannot write {}", opts_.csv_path));
    csv_ << trajectory_csv_header();
    paths_csv_ << path_csv_header();
  }
  if (!opts_.record_commands_path.empty()) std::ofstream(opts_.record_commands_path, std::ios::trunc);
  wall_start_ = wall_seconds();
}

Simulation::~Simulation() = default;

void Simulation::step() {
  const std::int64_t n = step_;
  const double t = time();

  // plant
  if (n > 0) {
    const auto& fw = firmware_.state();
    plant_.step(fw.pwm_left, fw.pwm_right, fw.relay_closed, s_.sim_dt);
  }
  double battery_v = plant_.battery().voltage;
  for (const auto& o : s_.faults.battery_overrides)
    if (t >= o.start && t <= o.end) battery_v = o.voltage;

  // operator commands enter the queue; they act at the next autonomy tick
  if (opts_.live_commands)
    for (auto& c : opts_.live_commands()) inbox_.emplace_back(t, c);
  while (next_script_ < opts_.commands.size() && opts_.commands[next_script_].t <= t) {
    inbox_.emplace_back(opts_.commands[next_script_].t, opts_.commands[next_script_].cmd);
    ++next_script_;
  }

  // channels
  const auto down = down_.deliver(t);
  if (!down.empty()) firmware_.receive(down, t);
  const auto up = up_.deliver(t);
  if (!up.empty()) {
    hlcu_->decoder().feed(up, [&](const Frame& f) {
      if (f.kind != FrameKind::Status) return;
      const StatusPayload st = parse_status(f);
      const double yaw = sample_yaw_rate(plant_.twist(), s_.sensors.yaw_rate_sigma, rng_imu_);
      hlcu_->on_status(st, t, yaw);
      result_.statuses.push_back({t, st});
      ++result_.counters.status_frames;
    });
  }

  // firmware
  if (n % ctrl_steps_ == 0) {
    const auto status = firmware_.tick(plant_.encoder_left().ticks, plant_.encoder_right().ticks, battery_v, t);
    if (status) up_.send(*status, t);
    log_sample(t);
  }

  // autonomy
  if (n % aut_steps_ == 0) {
    const Pose2D truth = plant_.pose();
    const auto scan = lidar_scan(plant_.world(), truth, s_.lidar, rng_lidar_);
    auto dets = detect(plant_.world(), truth, s_.sensors.detector_fov, s_.sensors.detector_range,
                       s_.sensors.detector_sigma, s_.sensors.detector_dropout, rng_det_);
    std::optional<Vec2> gps;
    if (n % gps_steps_ == 0 && n > 0) gps = sample_gps(truth, s_.sensors.gps_sigma, rng_gps_);

    std::vector<OperatorCommand> cmds;
    for (auto& [rx, c] : inbox_) {
      cmds.push_back(c);
      result_.commands.push_back({rx, t, c});
    }
    if (!opts_.record_commands_path.empty() && !inbox_.empty()) {
      std::ofstream rec(opts_.record_commands_path, std::ios::app);
      for (auto& [rx, c] : inbox_) rec << encode_logged_command({rx, c});
    }
    inbox_.clear();

    for (const auto& bytes : hlcu_->tick(t, scan, dets, gps, cmds, result_.counters)) down_.send(bytes, t);
    for (auto& p : hlcu_->take_new_paths()) {
      if (paths_csv_.is_open()) paths_csv_ << path_csv_rows(p.id, p.waypoints);
      result_.log.paths[p.id] = std::move(p.waypoints);
    }
    if (csv_.is_open()) {
      csv_.flush();
      paths_csv_.flush();
    }
  }

  // telemetry
  if (n % tel_steps_ == 0) publish_telemetry(t);

  if (opts_.realtime) {
    const double lag = t - (wall_seconds() - wall_start_);
    if (lag > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(lag));
  }
  ++step_;
}

void Simulation::log_sample(double t) {
  const auto& fw = firmware_.state();
  TrajectorySample s;
  s.t = t;
  s.true_pose = plant_.pose();
  s.v_true = plant_.twist().v;
  s.est_pose = hlcu_->est_pose();
  s.dr_pose = hlcu_->dr_pose();
  s.setpoints = fw.setpoints;
  s.pwm_left = fw.pwm_left;
  s.pwm_right = fw.pwm_right;
  s.mode = fw.mode;
  s.lock = fw.lock;
  s.goal_index = hlcu_->goal_index();
  s.path_id = hlcu_->path_id();
  if (csv_.is_open()) csv_ << trajectory_csv_row(s);
  result_.log.samples.push_back(s);
}

void Simulation::publish_telemetry(double t) {
  TelemetryRecord r;
  r.t = t;
  r.pose_est = hlcu_->est_pose();
  r.pose_true = plant_.pose();
  r.twist = plant_.twist();
  const auto& fw = firmware_.state();
  r.setpoints = fw.setpoints;
  r.pwm_left = fw.pwm_left;
  r.pwm_right = fw.pwm_right;
  // What the robot reports over the link, as an operator would see it.
  if (const auto st = hlcu_->last_status()) {
    r.battery_mv = st->battery_mv;
    r.mode = static_cast<FirmwareMode>(st->mode);
    r.lock = static_cast<LockState>(st->lock);
  }
  r.goal = hlcu_->goal();
  r.planner = hlcu_->planner();
  r.detections = hlcu_->detections();
  if (t + 1e-9 >= next_snapshot_) {
    r.map = snapshot(hlcu_->grid(), ++snapshot_id_);
    next_snapshot_ += s_.rates.map_snapshot_period;
  }
  r.map_ref = snapshot_id_;
  if (publisher_.publish(r)) ++result_.counters.telemetry_records;
}

RunResult Simulation::finish() {
  while (!done()) step();
  if (csv_.is_open()) {
    csv_.flush();
    paths_csv_.flush();
  }
  auto& c = result_.counters;
  c.downlink_sent = down_.sent();
  c.downlink_dropped = down_.dropped();
  c.downlink_corrupted = down_.corrupted();
  c.downlink_blacked_out = down_.blacked_out();
  c.uplink_sent = up_.sent();
  c.uplink_dropped = up_.dropped();
  c.uplink_corrupted = up_.corrupted();
  c.uplink_blacked_out = up_.blacked_out();
  c.firmware_frames = firmware_.decoder().frames();
  c.firmware_crc_errors = firmware_.decoder().errors();
  result_.metrics = compute_metrics(result_.log, s_);
  if (!opts_.metrics_path.empty()) {
    std::ofstream m(opts_.metrics_path, std::ios::binary | std::ios::trunc);
    m << encode_metrics(result_.metrics);
  }
  return std::move(result_);
}

RunResult run(const Scenario& s, RunOptions opts) {
  Simulation sim(s, std::move(opts));
  return sim.finish();
}

}  // namespace dbot
