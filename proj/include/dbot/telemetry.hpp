#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbot/firmware.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/link.hpp"
#include "dbot/mapping.hpp"
#include "dbot/plant.hpp"

namespace dbot {

inline constexpr int kTelemetrySchemaVersion = 1;

struct PlannerSummary {
  double min_cost = 0.0;
  double mean_cost = 0.0;
  double ess = 0.0;
  bool safe_stop = false;
  std::uint64_t path_id = 0;
  std::uint64_t path_points = 0;
};

struct TelemetryRecord {
  double t = 0.0;
  Pose2D pose_est;
  Pose2D pose_true;
  Twist2D twist;
  WheelSpeeds setpoints;
  double pwm_left = 0.0;
  double pwm_right = 0.0;
  int battery_mv = 0;
  FirmwareMode mode = FirmwareMode::Init;
  LockState lock = LockState::Locked;
  std::optional<Vec2> goal;
  PlannerSummary planner;
  std::vector<Detection> detections;
  std::uint64_t map_ref = 0;  // id of the latest map snapshot, 0 = none yet
  std::optional<GridSnapshot> map;

  friend bool operator==(const TelemetryRecord&, const TelemetryRecord&);
};

struct TelemetryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One newline-terminated JSON object, keys in schema order.
std::string encode_telemetry(const TelemetryRecord& r);
TelemetryRecord parse_telemetry(const std::string& line);

enum class CommandKind : std::uint8_t { EStop, Resume, SetGoal, Lock, Unlock };

const char* to_wire(CommandKind k);

struct OperatorCommand {
  CommandKind kind = CommandKind::EStop;
  double x = 0.0;
  double y = 0.0;
  double issued_at = 0.0;  // wall clock, s since epoch
  std::uint64_t client_id = 0;
};

struct CommandRejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Strict parse of {"cmd":"ESTOP"|"RESUME"|"LOCK"|"UNLOCK"} or
// {"cmd":"GOAL","x":..,"y":..}. Throws CommandRejected with the reason.
OperatorCommand parse_command(const std::string& line);
std::string encode_command(const OperatorCommand& c);

// Replayable command log: one {"t":..,"cmd":..} line per applied command,
// t being the simulation time of the autonomy tick that applied it.
struct LoggedCommand {
  double t = 0.0;
  OperatorCommand cmd;
};
std::string encode_logged_command(const LoggedCommand& c);
LoggedCommand parse_logged_command(const std::string& line);
std::vector<LoggedCommand> load_command_log(const std::string& path);

// Enforces the non-decreasing time invariant and fans lines out to the
// replay file and an optional live sink.
class TelemetryPublisher {
 public:
  using Sink = std::function<void(const std::string&)>;

  TelemetryPublisher() = default;
  explicit TelemetryPublisher(const std::string& log_path);

  void set_sink(Sink s) { sink_ = std::move(s); }
  // Returns false (and publishes nothing) when r.t precedes the last record.
  bool publish(const TelemetryRecord& r);

  std::uint64_t published() const { return published_; }
  std::uint64_t violations() const { return violations_; }

 private:
  std::optional<double> last_t_;
  std::ofstream log_;
  Sink sink_;
  std::uint64_t published_ = 0;
  std::uint64_t violations_ = 0;
};

}  // namespace dbot
