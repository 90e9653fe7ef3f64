#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dbot/firmware.hpp"
#include "dbot/link.hpp"
#include "dbot/metrics.hpp"
#include "dbot/plant.hpp"
#include "dbot/scenario.hpp"
#include "dbot/telemetry.hpp"

namespace dbot {

struct RunOptions {
  std::string csv_path;  // trajectory CSV; the path file goes next to it
  std::string metrics_path;
  std::string telemetry_log_path;
  std::string record_commands_path;
  std::vector<LoggedCommand> commands;  // scripted, t = sim time of receipt
  // Polled once per simulation step for live operator commands.
  std::function<std::vector<OperatorCommand>()> live_commands;
  std::function<void(const std::string&)> telemetry_sink;
  bool realtime = false;
};

struct AppliedCommand {
  double received = 0.0;  // sim time the command entered the queue
  double applied = 0.0;   // autonomy tick that acted on it
  OperatorCommand cmd;
};

struct StatusEvent {
  double t = 0.0;  // when the autonomy side decoded it
  StatusPayload status;
};

struct RunCounters {
  std::uint64_t downlink_sent = 0, downlink_dropped = 0, downlink_corrupted = 0, downlink_blacked_out = 0;
  std::uint64_t uplink_sent = 0, uplink_dropped = 0, uplink_corrupted = 0, uplink_blacked_out = 0;
  std::uint64_t firmware_frames = 0, firmware_crc_errors = 0;
  std::uint64_t status_frames = 0;
  std::uint64_t replans = 0, plan_failures = 0, mppi_calls = 0, safe_stops = 0;
  std::uint64_t telemetry_records = 0;
};

struct RunResult {
  MetricsReport metrics;
  TrajectoryLog log;
  std::vector<AppliedCommand> commands;
  std::vector<StatusEvent> statuses;
  RunCounters counters;
};

class Autonomy;

// Fixed-step master loop. Within one step the order is always
// plant -> channels -> firmware tick -> autonomy tick -> telemetry.
class Simulation {
 public:
  Simulation(const Scenario& s, RunOptions opts);
  ~Simulation();

  bool done() const { return step_ > total_; }
  // n / rate when the rate is integral keeps sample times free of accumulated
  // representation error (5.1 rather than 5.1000000000000005).
  double time() const {
    const double rate = std::round(1.0 / s_.sim_dt);
    return std::abs(rate * s_.sim_dt - 1.0) < 1e-12 ? static_cast<double>(step_) / rate
                                                     : static_cast<double>(step_) * s_.sim_dt;
  }
  void step();
  RunResult finish();

  const Plant& plant() const { return plant_; }
  const Firmware& firmware() const { return firmware_; }

 private:
  void log_sample(double t);
  void publish_telemetry(double t);

  Scenario s_;
  RunOptions opts_;
  std::int64_t step_ = 0;
  std::int64_t total_;
  int ctrl_steps_, aut_steps_, tel_steps_, gps_steps_;

  Plant plant_;
  Firmware firmware_;
  Channel down_, up_;
  std::unique_ptr<Autonomy> hlcu_;
  RngStream rng_lidar_, rng_gps_, rng_imu_, rng_det_;

  std::size_t next_script_ = 0;
  std::vector<std::pair<double, OperatorCommand>> inbox_;
  TelemetryPublisher publisher_;
  std::uint64_t snapshot_id_ = 0;
  double next_snapshot_ = 0.0;

  std::ofstream csv_, paths_csv_;
  std::uint64_t paths_written_ = 0;
  RunResult result_;
  double wall_start_ = 0.0;
};

RunResult run(const Scenario& s, RunOptions opts = {});

}  // namespace dbot
