#include "dbot/firmware.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dbot {

void PidGains::validate() const {
  if (!(out_min < out_max)) throw ParameterError("pid out_min must be < out_max");
  if (!(integral_min <= integral_max)) throw ParameterError("pid integral bounds inverted");
  if (integral_min < out_min || integral_max > out_max) {
    throw ParameterError("pid integral bounds must lie within output bounds");
  }
}

PidOutput pid_step(const PidGains& g, const PidState& s, double setpoint, double measured, double dt) {
  if (!(dt > 0.0)) throw ParameterError("pid_step needs dt > 0");
  const double e = setpoint - measured;
  PidOutput out;
  out.state.integral = std::clamp(s.integral + g.ki * e * dt, g.integral_min, g.integral_max);
  const double deriv = s.initialized ? (e - s.prev_error) / dt : 0.0;
  out.state.prev_error = e;
  out.state.initialized = true;
  out.duty = std::clamp(g.kp * e + out.state.integral + g.kd * deriv, g.out_min, g.out_max);
  return out;
}

const char* to_string(FirmwareMode m) {
  switch (m) {
    case FirmwareMode::Init: return "Init";
    case FirmwareMode::Operational: return "Operational";
    case FirmwareMode::Failsafe: return "Failsafe";
    case FirmwareMode::EStopped: return "EStopped";
    case FirmwareMode::BatteryFault: return "BatteryFault";
  }
  return "?";
}

FirmwareMode watchdog_mode(double last_cmd_rx, double now, double timeout) {
  return (now - last_cmd_rx > timeout) ? FirmwareMode::Failsafe : FirmwareMode::Operational;
}

void FirmwareConfig::validate() const {
  gains.validate();
  if (!(control_period > 0.0)) throw ParameterError("control_period must be > 0");
  if (status_every < 1) throw ParameterError("status_every must be >= 1");
  if (!(watchdog_timeout > 0.0)) throw ParameterError("watchdog_timeout must be > 0");
  if (ticks_per_wheel_rev < 1) throw ParameterError("ticks_per_wheel_rev must be >= 1");
}

namespace {

bool latched(FirmwareMode m) { return m == FirmwareMode::EStopped || m == FirmwareMode::BatteryFault; }

void halt_outputs(FirmwareState& fw) {
  fw.pwm_left = fw.pwm_right = 0.0;
  fw.pid_left = {};
  fw.pid_right = {};
}

}  // namespace

FirmwareState on_frame(const FirmwareConfig& cfg, const FirmwareState& in, const Frame& f, double now) {
  (void)cfg;
  FirmwareState fw = in;
  ++fw.counters.frames_rx;
  const auto expected = payload_size(static_cast<std::uint8_t>(f.kind));
  if (!expected || *expected != f.len) {
    ++fw.counters.malformed;
    return fw;
  }
  switch (f.kind) {
    case FrameKind::CmdVel: {
      fw.setpoints = parse_cmd_vel(f).to_wheels();
      fw.last_cmd_rx = now;
      fw.have_cmd = true;
      if (fw.mode == FirmwareMode::Failsafe || fw.mode == FirmwareMode::Init) {
        fw.mode = FirmwareMode::Operational;
      }
      break;
    }
    case FrameKind::EStop:
      if (fw.mode != FirmwareMode::EStopped) ++fw.counters.estop_events;
      fw.mode = FirmwareMode::EStopped;
      fw.relay_closed = false;
      halt_outputs(fw);
      break;
    case FrameKind::Resume:
      if (latched(fw.mode)) {
        fw.mode = FirmwareMode::Operational;
        fw.relay_closed = true;
      }
      break;
    case FrameKind::Lock:
      fw.lock = LockState::Locked;
      break;
    case FrameKind::Unlock:
      fw.lock = LockState::Unlocked;
      break;
    case FrameKind::Status:
      ++fw.counters.status_ignored;
      break;
  }
  return fw;
}

ControlOutput control_tick(const FirmwareConfig& cfg, const FirmwareState& in, const ControlInputs& inputs,
                           double now) {
  if (in.tick_count > 0 && !(now > in.last_tick_time)) {
    throw std::logic_error("control_tick time must strictly increase");
  }
  ControlOutput out;
  FirmwareState& fw = out.state;
  fw = in;
  fw.last_tick_time = now;
  fw.last_left_ticks = inputs.left_ticks;
  fw.last_right_ticks = inputs.right_ticks;
  fw.battery_mv = static_cast<std::uint16_t>(std::clamp(std::lround(inputs.battery_v * 1000.0), 0L, 65535L));

  if (inputs.battery_v < cfg.battery_fault_v && fw.mode != FirmwareMode::EStopped &&
      fw.mode != FirmwareMode::BatteryFault) {
    fw.mode = FirmwareMode::BatteryFault;
    ++fw.counters.battery_faults;
  }
  if (fw.mode == FirmwareMode::Operational) {
    const double since = fw.have_cmd ? fw.last_cmd_rx : 0.0;
    if (watchdog_mode(since, now, cfg.watchdog_timeout) == FirmwareMode::Failsafe) {
      fw.mode = FirmwareMode::Failsafe;
      ++fw.counters.failsafe_events;
    }
  }

  if (fw.mode == FirmwareMode::Operational) {
    const double dt = cfg.control_period;
    const auto l = pid_step(cfg.gains, fw.pid_left, fw.setpoints.left, inputs.encoder_rates.left, dt);
    const auto r = pid_step(cfg.gains, fw.pid_right, fw.setpoints.right, inputs.encoder_rates.right, dt);
    fw.pid_left = l.state;
    fw.pid_right = r.state;
    fw.pwm_left = l.duty;
    fw.pwm_right = r.duty;
  } else {
    halt_outputs(fw);
  }

  if (fw.tick_count % static_cast<std::uint64_t>(cfg.status_every) == 0) {
    StatusPayload sp;
    sp.mode = static_cast<std::uint8_t>(fw.mode);
    sp.lock = static_cast<std::uint8_t>(fw.lock);
    sp.battery_mv = fw.battery_mv;
    sp.left_ticks = inputs.left_ticks;
    sp.right_ticks = inputs.right_ticks;
    out.status = make_status(fw.tx_seq++, sp);
  }
  ++fw.tick_count;
  out.pwm_left = fw.pwm_left;
  out.pwm_right = fw.pwm_right;
  return out;
}

Firmware::Firmware(FirmwareConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Firmware::receive(std::span<const std::uint8_t> bytes, double now) {
  decoder_.feed(bytes, [&](const Frame& f) { state_ = on_frame(cfg_, state_, f, now); });
}

std::optional<std::vector<std::uint8_t>> Firmware::tick(std::int64_t left_ticks, std::int64_t right_ticks,
                                                        double battery_v, double now) {
  // The counters are 32-bit on the wire; wrap like the MCU register would.
  const auto l32 = static_cast<std::int32_t>(static_cast<std::uint32_t>(left_ticks));
  const auto r32 = static_cast<std::int32_t>(static_cast<std::uint32_t>(right_ticks));
  const double tick_angle = 2.0 * kPi / cfg_.ticks_per_wheel_rev;
  if (sampled_) {
    const auto dl = static_cast<std::int32_t>(static_cast<std::uint32_t>(l32) - static_cast<std::uint32_t>(state_.last_left_ticks));
    const auto dr = static_cast<std::int32_t>(static_cast<std::uint32_t>(r32) - static_cast<std::uint32_t>(state_.last_right_ticks));
    rates_ = {dl * tick_angle / cfg_.control_period, dr * tick_angle / cfg_.control_period};
  }
  sampled_ = true;
  ControlInputs in{rates_, l32, r32, battery_v};
  ControlOutput out = control_tick(cfg_, state_, in, now);
  state_ = out.state;
  if (out.status) return encode_frame(*out.status);
  return std::nullopt;
}

}  // namespace dbot
