#pragma once

#include <cstdint>
#include <optional>
#include <type_traits>

#include "dbot/kinematics.hpp"
#include "dbot/link.hpp"

namespace dbot {

struct PidGains {
  double kp = 0.04;
  double ki = 0.27;  // duty per (rad/s * s)
  double kd = 0.0;
  double out_min = -1.0;
  double out_max = 1.0;
  double integral_min = -1.0;
  double integral_max = 1.0;

  void validate() const;
};

struct PidState {
  double integral = 0.0;  // already scaled by ki, in duty
  double prev_error = 0.0;
  bool initialized = false;
};

struct PidOutput {
  double duty = 0.0;
  PidState state;
};

// Clamped-integral PID with derivative on error; the first call has no
// derivative term.
PidOutput pid_step(const PidGains& g, const PidState& s, double setpoint, double measured,
                   double dt);

enum class FirmwareMode : std::uint8_t { Init = 0, Operational = 1, Failsafe = 2, EStopped = 3, BatteryFault = 4 };

const char* to_string(FirmwareMode m);

inline constexpr double kWatchdogTimeout = 0.200;

// Failsafe iff the gap strictly exceeds the timeout.
FirmwareMode watchdog_mode(double last_cmd_rx, double now, double timeout = kWatchdogTimeout);

struct FirmwareConfig {
  PidGains gains;
  double control_period = 0.010;
  int status_every = 5;  // control ticks per Status frame
  double watchdog_timeout = kWatchdogTimeout;
  double battery_fault_v = 6.4;
  int ticks_per_wheel_rev = 374;

  void validate() const;
};

struct FirmwareCounters {
  std::uint32_t frames_rx = 0;
  std::uint32_t malformed = 0;
  std::uint32_t status_ignored = 0;
  std::uint32_t failsafe_events = 0;
  std::uint32_t estop_events = 0;
  std::uint32_t battery_faults = 0;
};

// Entire firmware state. Fixed size, no owned heap storage.
struct FirmwareState {
  FirmwareMode mode = FirmwareMode::Init;
  double last_cmd_rx = 0.0;
  bool have_cmd = false;
  WheelSpeeds setpoints;
  PidState pid_left, pid_right;
  LockState lock = LockState::Locked;
  bool relay_closed = true;
  std::uint64_t tick_count = 0;
  double last_tick_time = 0.0;
  double pwm_left = 0.0;
  double pwm_right = 0.0;
  std::int32_t last_left_ticks = 0;
  std::int32_t last_right_ticks = 0;
  std::uint16_t battery_mv = 0;
  std::uint16_t tx_seq = 0;
  FirmwareCounters counters;
};

static_assert(std::is_trivially_copyable_v<FirmwareState>,
              "firmware state must stay flat and statically sized");

FirmwareState on_frame(const FirmwareConfig& cfg, const FirmwareState& fw, const Frame& f, double now);

struct ControlInputs {
  WheelSpeeds encoder_rates;  // rad/s
  std::int32_t left_ticks = 0;
  std::int32_t right_ticks = 0;
  double battery_v = 0.0;
};

struct ControlOutput {
  double pwm_left = 0.0;
  double pwm_right = 0.0;
  FirmwareState state;
  std::optional<Frame> status;
};

ControlOutput control_tick(const FirmwareConfig& cfg, const FirmwareState& fw, const ControlInputs& in,
                           double now);

// Stateful wrapper used by the simulation loop: owns the decoder and derives
// wheel rates from cumulative tick counts sampled at each control tick.
class Firmware {
 public:
  explicit Firmware(FirmwareConfig cfg);

  // Bytes arriving on the UART. Frames are applied in order at time now.
  void receive(std::span<const std::uint8_t> bytes, double now);
  // One control period. Returns an encoded Status frame when one is due.
  std::optional<std::vector<std::uint8_t>> tick(std::int64_t left_ticks, std::int64_t right_ticks,
                                                double battery_v, double now);

  const FirmwareState& state() const { return state_; }
  const FirmwareConfig& config() const { return cfg_; }
  const FrameDecoder& decoder() const { return decoder_; }
  WheelSpeeds measured_rates() const { return rates_; }

 private:
  FirmwareConfig cfg_;
  FirmwareState state_;
  FrameDecoder decoder_;
  WheelSpeeds rates_;
  bool sampled_ = false;
};

}  // namespace dbot
