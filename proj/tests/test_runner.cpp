#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbot/runner.hpp"

using namespace dbot;

namespace {

std::string scenario_path(const char* name) { return std::string(DBOT_SCENARIO_DIR) + "/" + name; }

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Scenario shortened(const char* name, double duration) {
  Scenario s = load_scenario(scenario_path(name));
  s.duration = duration;
  return s;
}

TrajectorySample sample_at(double t, double x, double y, double theta = 0.0) {
  TrajectorySample s;
  s.t = t;
  s.true_pose = s.est_pose = s.dr_pose = {x, y, theta};
  s.mode = FirmwareMode::Operational;
  return s;
}

Scenario open_field() {
  return parse_scenario(R"({"seed": 1, "duration": 1, "start": {"x": 1, "y": 1},
    "world": {"bounds": {"xmin": 0, "ymin": 0, "xmax": 10, "ymax": 10},
              "obstacles": [{"xmin": 5, "ymin": 0, "xmax": 6, "ymax": 1}]},
    "goals": [{"x": 4, "y": 1}, {"x": 4, "y": 4}]})");
}

}  // namespace

TEST_CASE("metrics on a hand-made log") {
  const Scenario s = open_field();
  TrajectoryLog log;
  log.paths[1] = {{1, 1}, {4, 1}};
  for (int i = 0; i <= 30; ++i) {
    auto smp = sample_at(0.01 * i, 1 + 0.1 * i, 1.2, 0.1);
    smp.v_true = 1.0;
    smp.path_id = 1;
    smp.est_pose.x += 0.3;
    smp.dr_pose.y += 0.4;
    log.samples.push_back(smp);
  }
  const auto m = compute_metrics(log, s);
  // last sample at (4, 1.2) is within 0.3 of goal 0
  CHECK(m.goal_success == std::vector<bool>{true, false});
  CHECK_FALSE(m.all_goals());
  CHECK(m.path_deviation_mean == doctest::Approx(0.2));
  CHECK(m.path_deviation_max == doctest::Approx(0.2));
  CHECK(m.heading_rmse == doctest::Approx(0.1));
  CHECK(m.distance == doctest::Approx(3.0));
  CHECK(m.elapsed == doctest::Approx(0.3));
  CHECK(m.position_rmse_est == doctest::Approx(0.3));
  CHECK(m.position_rmse_dr == doctest::Approx(0.4));
  CHECK(m.collisions == 0);
}

TEST_CASE("metrics count collision intervals and mode events") {
  const Scenario s = open_field();
  TrajectoryLog log;
  const double xs[] = {4.0, 4.9, 5.0, 4.0, 4.0, 5.2, 5.2};
  const FirmwareMode modes[] = {FirmwareMode::Operational, FirmwareMode::Failsafe, FirmwareMode::Failsafe,
                                FirmwareMode::Operational, FirmwareMode::EStopped, FirmwareMode::Failsafe,
                                FirmwareMode::EStopped};
  for (int i = 0; i < 7; ++i) {
    auto smp = sample_at(0.01 * i, xs[i], 0.5);
    smp.mode = modes[i];
    log.samples.push_back(smp);
  }
  const auto m = compute_metrics(log, s);
  CHECK(m.collisions == 2);
  CHECK(m.failsafe_events == 2);
  CHECK(m.estop_events == 2);
  CHECK_THROWS_AS(compute_metrics(TrajectoryLog{}, s), MetricsError);
}

TEST_CASE("moving agents are re-simulated for collisions") {
  const Scenario s = parse_scenario(R"({"seed": 1, "duration": 1, "start": {"x": 1, "y": 1},
    "world": {"bounds": {"xmin": 0, "ymin": 0, "xmax": 10, "ymax": 10},
              "agents": [{"x": 2, "y": 5, "v": 1.0, "size_x": 0.5, "size_y": 0.5}]},
    "goals": [{"x": 9, "y": 9}]})");
  TrajectoryLog log;
  log.samples.push_back(sample_at(0.0, 4.0, 5.0));  // agent still at x = 2
  log.samples.push_back(sample_at(2.0, 4.0, 5.0));  // agent arrives
  const auto m = compute_metrics(log, s);
  CHECK(m.collisions == 1);
}

TEST_CASE("csv round trip") {
  TrajectorySample smp = sample_at(0.1, 1.0 / 3.0, 2.0, -0.7);
  smp.setpoints = {1.25, -3.5};
  smp.pwm_left = 0.123456789012345;
  smp.goal_index = 1;
  smp.path_id = 4;
  smp.lock = LockState::Unlocked;
  const auto csv = temp_path("dbot_rt.csv");
  {
    std::ofstream f(csv);
    f << trajectory_csv_header() << trajectory_csv_row(smp);
    std::ofstream p(paths_file_for(csv));
    p << path_csv_header() << path_csv_rows(4, {{0, 0}, {0.1, 0.7}});
  }
  const auto log = read_trajectory(csv, paths_file_for(csv));
  REQUIRE(log.samples.size() == 1);
  const auto& r = log.samples[0];
  CHECK(r.true_pose.x == smp.true_pose.x);
  CHECK(r.pwm_left == smp.pwm_left);
  CHECK(r.setpoints.right == -3.5);
  CHECK(r.goal_index == 1);
  CHECK(r.path_id == 4);
  CHECK(r.lock == LockState::Unlocked);
  CHECK(log.paths.at(4).size() == 2);
  CHECK(log.paths.at(4)[1].y == 0.7);
  std::remove(csv.c_str());
  std::remove(paths_file_for(csv).c_str());
}

TEST_CASE("static corridor reaches its goal") {
  const Scenario s = load_scenario(scenario_path("corridor_static.json"));
  const auto csv = temp_path("dbot_runner_static.csv");
  RunOptions opts;
  opts.csv_path = csv;
  const auto r = run(s, opts);
  CHECK(r.metrics.all_goals());
  CHECK(r.metrics.collisions == 0);
  CHECK(r.metrics.failsafe_events == 0);
  CHECK(r.counters.replans >= 1);
  CHECK(r.counters.mppi_calls > 0);

  // metrics recomputed from the files match the in-memory run
  const auto log = read_trajectory(csv, paths_file_for(csv));
  CHECK(log.samples.size() == r.log.samples.size());
  CHECK(compute_metrics(log, s) == r.metrics);
  std::remove(csv.c_str());
  std::remove(paths_file_for(csv).c_str());
}

TEST_CASE("identical runs write identical files") {
  const Scenario s = shortened("corridor_pedestrian.json", 4.0);
  std::string outputs[2];
  for (int i = 0; i < 2; ++i) {
    RunOptions o;
    o.csv_path = temp_path("dbot_det_" + std::to_string(i) + ".csv");
    o.telemetry_log_path = temp_path("dbot_det_" + std::to_string(i) + ".jsonl");
    run(s, o);
    outputs[i] = slurp(o.csv_path) + slurp(paths_file_for(o.csv_path)) + slurp(o.telemetry_log_path);
    std::remove(o.csv_path.c_str());
    std::remove(paths_file_for(o.csv_path).c_str());
    std::remove(o.telemetry_log_path.c_str());
  }
  CHECK(outputs[0].size() > 1000);
  CHECK(outputs[0] == outputs[1]);

  Scenario other = s;
  other.seed += 1;
  RunOptions o;
  o.csv_path = temp_path("dbot_det_other.csv");
  run(other, o);
  CHECK(slurp(o.csv_path) != outputs[0].substr(0, slurp(o.csv_path).size()));
  std::remove(o.csv_path.c_str());
  std::remove(paths_file_for(o.csv_path).c_str());
}

TEST_CASE("telemetry stream cadence") {
  const Scenario s = shortened("corridor_static.json", 5.0);
  std::vector<TelemetryRecord> recs;
  RunOptions o;
  o.telemetry_sink = [&](const std::string& line) { recs.push_back(parse_telemetry(line)); };
  const auto r = run(s, o);
  CHECK(recs.size() == 51);
  CHECK(r.counters.telemetry_records == 51);
  int maps = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].t == doctest::Approx(0.1 * static_cast<double>(i)));
    if (i) CHECK(recs[i].t > recs[i - 1].t);
    if (recs[i].map) {
      ++maps;
      CHECK(recs[i].map_ref == recs[i].map->id);
      CHECK(decode_rle(recs[i].map->rle).size() ==
            static_cast<std::size_t>(recs[i].map->geom.width * recs[i].map->geom.height));
    }
  }
  CHECK(maps == 3);  // t = 0, 2, 4
  CHECK(recs.back().mode == FirmwareMode::Operational);
}

TEST_CASE("blackout trips the watchdog once and recovers") {
  const Scenario s = load_scenario(scenario_path("blackout.json"));
  const auto r = run(s);
  CHECK(r.metrics.failsafe_events == 1);
  double first = -1, last = -1;
  for (const auto& smp : r.log.samples) {
    if (smp.mode == FirmwareMode::Failsafe) {
      if (first < 0) first = smp.t;
      last = smp.t;
      CHECK(smp.pwm_left == 0.0);
      CHECK(smp.pwm_right == 0.0);
    }
  }
  CHECK(first > 5.1);
  CHECK(first <= 5.21 + 1e-9);
  CHECK(last < 6.3);
  CHECK(r.log.samples.back().mode == FirmwareMode::Operational);
}

TEST_CASE("scripted commands reach the firmware") {
  const Scenario s = load_scenario(scenario_path("estop.json"));
  RunOptions o;
  o.commands = load_command_log(scenario_path("estop_commands.jsonl"));
  const auto rec = temp_path("dbot_recorded.jsonl");
  o.record_commands_path = rec;
  const auto r = run(s, o);
  REQUIRE(r.commands.size() == 2);
  CHECK(r.commands[0].cmd.kind == CommandKind::EStop);
  CHECK(r.commands[0].received == 3.0);
  CHECK(r.commands[0].applied >= 3.0);
  CHECK(r.commands[0].applied <= 3.1 + 1e-9);
  CHECK(r.metrics.estop_events == 1);

  bool stopped_after = true, unlocked = false;
  for (const auto& smp : r.log.samples) {
    if (smp.t >= 3.2 && smp.mode != FirmwareMode::EStopped) stopped_after = false;
    if (smp.lock == LockState::Unlocked) {
      unlocked = true;
      CHECK(smp.t >= 5.0);
    }
  }
  CHECK(stopped_after);
  CHECK(unlocked);
  bool status_saw_unlock = false;
  for (const auto& e : r.statuses)
    if (e.status.lock == static_cast<std::uint8_t>(LockState::Unlocked)) status_saw_unlock = true;
  CHECK(status_saw_unlock);

  // the recorded log replays to the same run
  RunOptions replay;
  replay.commands = load_command_log(rec);
  REQUIRE(replay.commands.size() == 2);
  const auto r2 = run(s, replay);
  CHECK(r2.metrics == r.metrics);
  std::remove(rec.c_str());
}

TEST_CASE("live commands and goal injection") {
  Scenario s = shortened("corridor_static.json", 3.0);
  int polls = 0;
  RunOptions o;
  o.live_commands = [&]() -> std::vector<OperatorCommand> {
    if (++polls != 100) return {};
    OperatorCommand c;
    c.kind = CommandKind::EStop;
    return {c};
  };
  const auto r = run(s, o);
  REQUIRE(r.commands.size() == 1);
  CHECK(r.commands[0].received == doctest::Approx(99 * s.sim_dt));
  CHECK(r.log.samples.back().mode == FirmwareMode::EStopped);

  // a goal command extends the goal list
  RunOptions g;
  LoggedCommand lc;
  lc.t = 0.5;
  lc.cmd.kind = CommandKind::SetGoal;
  lc.cmd.x = 3.0;
  lc.cmd.y = 2.0;
  g.commands = {lc};
  Scenario s2 = shortened("corridor_static.json", 6.0);
  const auto r2 = run(s2, g);
  CHECK(r2.log.samples.back().goal_index >= 1);
}
