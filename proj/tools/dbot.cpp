// dbot: scenario runner, sizing calculator and telemetry replay.
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dbot/gateway.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/runner.hpp"
#include "dbot/scenario.hpp"
#include "json.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cmd_size(const std::string& params_path, double v) {
  const dbot::RobotParams p = params_path.empty() ? dbot::RobotParams{} : dbot::parse_robot_params(read_file(params_path));
  const auto r = dbot::actuator_sizing(p, v);
  nlohmann::ordered_json j;
  j["v"] = v;
  j["omega_required"] = r.omega_required;
  j["rpm_required"] = r.rpm_required;
  j["weight"] = r.weight;
  j["wheel_load"] = r.wheel_load;
  j["traction_force"] = r.traction_force;
  j["startup_torque"] = r.startup_torque;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_run(const std::string& scenario_path, std::optional<std::uint64_t> seed, const std::string& serve,
            dbot::RunOptions opts, const std::string& commands_path) {
  dbot::Scenario s = dbot::load_scenario(scenario_path);
  if (seed) s.seed = *seed;
  if (!commands_path.empty()) opts.commands = dbot::load_command_log(commands_path);

  std::unique_ptr<dbot::Gateway> gw;
  if (!serve.empty()) {
    dbot::GatewayConfig cfg;
    cfg.address = dbot::parse_bind_address(serve);
    gw = std::make_unique<dbot::Gateway>(cfg);
    gw->start();
    std::cerr << fmt::format("serving on {}:{} (ws path /ws)\n", cfg.address.host, gw->port());
    opts.telemetry_sink = [g = gw.get()](const std::string& line) { g->broadcast(line); };
    opts.live_commands = [g = gw.get()] { return g->poll_commands(); };
  }
  const auto res = dbot::run(s, std::move(opts));
  if (gw) gw->stop();
  std::cout << dbot::encode_metrics(res.metrics);
  return 0;
}

int cmd_replay(const std::string& log_path, const std::string& serve, double speed) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", log_path));
  dbot::GatewayConfig cfg;
  cfg.address = dbot::parse_bind_address(serve);
  dbot::Gateway gw(cfg);
  gw.start();
  std::cerr << fmt::format("replaying {} on {}:{}\n", log_path, cfg.address.host, gw.port());

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<double> first_t;
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double t = 0.0;
    try {
      t = nlohmann::json::parse(line).at("t").get<double>();
    } catch (const std::exception&) {
      continue;  // not a telemetry record
    }
    if (!first_t) first_t = t;
    if (speed > 0.0) {
      const auto due = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                std::chrono::duration<double>((t - *first_t) / speed));
      std::this_thread::sleep_until(due);
    }
    gw.broadcast(line + "\n");
    ++n;
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  gw.stop();
  std::cerr << fmt::format("replayed {} records\n", n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Delivery robot software twin"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario");
  std::string scenario, serve, commands;
  std::uint64_t seed_v = 0;
  bool headless = false;
  dbot::RunOptions opts;
  run->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed_v, "override the scenario seed");
  auto* headless_opt = run->add_flag("--headless", headless, "no gateway");
  run->add_option("--serve", serve, "gateway bind address, e.g. 127.0.0.1:8080")->excludes(headless_opt);
  run->add_option("--log", opts.telemetry_log_path, "telemetry line log for replay");
  run->add_option("--metrics", opts.metrics_path, "metrics JSON output");
  run->add_option("--csv", opts.csv_path, "trajectory CSV output");
  run->add_option("--commands", commands, "command log to apply")->check(CLI::ExistingFile);
  run->add_option("--record-commands", opts.record_commands_path, "write received commands here");
  run->add_flag("--realtime", opts.realtime, "pace the simulation to wall time");

  auto* size = app.add_subcommand("size", "actuator sizing");
  std::string params;
  double v = 0.0;
  size->add_option("--params", params, "robot parameter JSON")->check(CLI::ExistingFile);
  size->add_option("--v", v, "target speed, m/s")->required();

  auto* replay = app.add_subcommand("replay", "re-broadcast a telemetry log");
  std::string log_path, replay_serve = "127.0.0.1:8080";
  double speed = 1.0;
  replay->add_option("--log", log_path, "telemetry log")->required()->check(CLI::ExistingFile);
  replay->add_option("--serve", replay_serve, "gateway bind address");
  replay->add_option("--speed", speed, "playback speed, 0 = as fast as possible");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) {
      std::optional<std::uint64_t> seed;
      if (*seed_opt) seed = seed_v;
      return cmd_run(scenario, seed, serve, std::move(opts), commands);
    }
    if (*size) return cmd_size(params, v);
    if (*replay) return cmd_replay(log_path, replay_serve, speed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
