// Runs the headless acceptance suite and prints one PASS/FAIL line per criterion.
#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "dbot/estimation.hpp"
#include "dbot/gateway.hpp"
#include "dbot/link.hpp"
#include "dbot/mapping.hpp"
#include "dbot/planning.hpp"
#include "dbot/runner.hpp"
#include "json.hpp"

using namespace dbot;
using Clock = std::chrono::steady_clock;

namespace {

std::string scenario_path(const std::string& name) { return std::string(DBOT_SCENARIO_DIR) + "/" + name; }

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dbot_acc_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) out.append(buf.data(), n);
  status = ::pclose(p);
  return out;
}

// 1 -------------------------------------------------------------------------
Outcome sizing() {
  Outcome o;
  int status = 0;
  const auto out = run_command(std::string(DBOT_CLI) + " size --v 3", status);
  o.require(status == 0, "size command failed");
  if (status != 0) return o;
  const auto j = nlohmann::json::parse(out);
  // Independent recomputation from the raw inputs.
  const double m = 15.0, r = 0.09, n = 4.0, v = 3.0, mu = 0.6, g = 9.81;
  const double pi = std::acos(-1.0);
  const double omega = v / r;
  const double rpm = omega * 60.0 / (2.0 * pi);
  const double torque = mu * (m * g / n) * r;
  const double got_w = j.at("omega_required"), got_rpm = j.at("rpm_required"), got_t = j.at("startup_torque");
  o.require(rel_err(got_w, omega) <= 1e-6, fmt::format("omega {} vs {}", got_w, omega));
  o.require(rel_err(got_rpm, rpm) <= 1e-6, fmt::format("rpm {} vs {}", got_rpm, rpm));
  o.require(rel_err(got_t, torque) <= 1e-6, fmt::format("torque {} vs {}", got_t, torque));
  o.require(std::abs(got_w - 33.333) < 1e-3 && std::abs(got_rpm - 318.31) < 1e-2 && std::abs(got_t - 1.986) < 1e-3,
            "reported values differ from the stated constants");
  o.detail = fmt::format("omega={:.6f} rpm={:.4f} torque={:.6f}", got_w, got_rpm, got_t) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome failsafe_timing() {
  Outcome o;
  const Scenario s = load_scenario(scenario_path("blackout.json"));
  o.require(s.faults.channel.blackout_intervals.size() == 1, "scenario needs one blackout");
  if (!o.pass) return o;
  const double b0 = s.faults.channel.blackout_intervals[0].first;
  const double b1 = s.faults.channel.blackout_intervals[0].second;
  const double bound = b0 + s.firmware.watchdog_timeout + s.firmware.control_period;
  const auto r = run(s);
  int bad = 0;
  double first_failsafe = -1.0;
  for (const auto& smp : r.log.samples) {
    if (smp.mode == FirmwareMode::Failsafe && first_failsafe < 0) first_failsafe = smp.t;
    if (smp.t > bound + 1e-9 && smp.t <= b1 && (smp.pwm_left != 0.0 || smp.pwm_right != 0.0)) ++bad;
  }
  o.require(bad == 0, fmt::format("{} samples with PWM != 0 after {:.3f} s", bad, bound));
  o.require(r.metrics.failsafe_events == 1, fmt::format("{} failsafe events", r.metrics.failsafe_events));

  // First CmdVel the firmware accepts after the blackout, then motion.
  double resumed = -1.0, moving = -1.0;
  for (const auto& smp : r.log.samples) {
    if (smp.t <= b1) continue;
    if (resumed < 0 && smp.mode == FirmwareMode::Operational) resumed = smp.t;
    if (resumed >= 0 && smp.pwm_left != 0.0 && smp.v_true > 0.05) {
      moving = smp.t;
      break;
    }
  }
  o.require(resumed > 0 && resumed <= b1 + 0.2, "firmware did not return to Operational after the blackout");
  o.require(moving > 0, "robot did not resume motion");
  o.detail = fmt::format("failsafe at {:.3f} s, resumed {:.3f} s, moving {:.3f} s", first_failsafe, resumed, moving) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome pid_tracking() {
  Outcome o;
  PlantConfig pc;
  FirmwareConfig fc;
  fc.ticks_per_wheel_rev = pc.robot.ticks_per_wheel_rev;
  const double dt = 0.005;
  const int ctrl = 2;
  const double setpoint = 0.5 * pc.robot.wheel_omega_max;
  World w;
  w.bounds = {-100, -100, 100, 100};
  Plant plant(pc, w, {0, 0, 0});
  Firmware fw(fc);
  std::uint16_t seq = 0;
  double settled_at = -1.0;
  double worst_after = 0.0;
  const double total = 6.0;
  for (int n = 0; n * dt <= total + 1e-12; ++n) {
    const double t = n * dt;
    if (n > 0) plant.step(fw.state().pwm_left, fw.state().pwm_right, fw.state().relay_closed, dt);
    if (n % 20 == 0) fw.receive(encode_frame(make_cmd_vel(seq++, CmdVelPayload::from_wheels({setpoint, setpoint}))), t);
    if (n % ctrl == 0) fw.tick(plant.encoder_left().ticks, plant.encoder_right().ticks, plant.battery().voltage, t);
    const double err = std::max(std::abs(plant.motor_left().omega - setpoint), std::abs(plant.motor_right().omega - setpoint)) / setpoint;
    if (err > 0.02) {
      settled_at = -1.0;
    } else if (settled_at < 0) {
      settled_at = t;
    }
    if (t >= 1.0) worst_after = std::max(worst_after, err);
  }
  o.require(settled_at >= 0 && settled_at <= 1.0, fmt::format("settled at {:.3f} s", settled_at));
  o.require(worst_after <= 0.02, fmt::format("max error after 1 s {:.2f}%", 100 * worst_after));
  o.detail = fmt::format("setpoint {:.1f} rad/s, in band from {:.3f} s, worst error over [1, 6] s {:.2f}%", setpoint,
                         settled_at, 100 * worst_after) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome ekf_correctness() {
  Outcome o;
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> pos(-20, 20), ang(-kPi, kPi), vel(-3, 3), om(-4, 4), dts(0.001, 0.2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const EkfState s{pos(gen), pos(gen), ang(gen)};
    Twist2D u{vel(gen), om(gen)};
    if (i % 10 == 0) u.omega = 0.0;
    const double dt = dts(gen);
    const auto F = motion_jacobian(s, u, dt);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      Pose2D p = s.pose(), m = s.pose();
      (c == 0 ? p.x : c == 1 ? p.y : p.theta) += h;
      (c == 0 ? m.x : c == 1 ? m.y : m.theta) -= h;
      const Pose2D a = integrate_pose(p, u, dt), b = integrate_pose(m, u, dt);
      const double col[3] = {(a.x - b.x) / (2 * h), (a.y - b.y) / (2 * h), normalize_angle(a.theta - b.theta) / (2 * h)};
      for (int r = 0; r < 3; ++r) worst = std::max(worst, std::abs(F(r, c) - col[r]));
    }
  }
  o.require(worst < 1e-6, fmt::format("jacobian error {:.3g}", worst));

  PoseEstimator est({0, 0, 0}, Eigen::Matrix3d::Identity() * 0.01, NoiseConfig{});
  RngStream rng(77, 1);
  bool psd = true;
  for (int i = 0; i < 10000 && psd; ++i) {
    est.predict({3.0 * rng.uniform() - 1.0, 6.0 * rng.uniform() - 3.0}, 0.05);
    if (i % 10 == 0) est.update_gps({rng.gaussian(5.0), rng.gaussian(5.0)});
    const auto& P = est.covariance();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(P);
    psd = P.isApprox(P.transpose(), 1e-12) && es.eigenvalues().minCoeff() >= 0.0;
  }
  o.require(psd, "covariance lost symmetry or PSD");

  const Scenario s = load_scenario(scenario_path("figure_eight.json"));
  const auto r = run(s);
  o.require(r.metrics.position_rmse_est < r.metrics.position_rmse_dr,
            fmt::format("EKF RMSE {:.3f} !< DR {:.3f}", r.metrics.position_rmse_est, r.metrics.position_rmse_dr));
  o.detail = fmt::format("jacobian max err {:.2g}, P PSD over 1e4 cycles: {}, figure-eight RMSE EKF {:.3f} m vs DR {:.3f} m",
                         worst, psd ? "yes" : "no", r.metrics.position_rmse_est, r.metrics.position_rmse_dr) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 5 -------------------------------------------------------------------------
CostUm dijkstra(const Costmap& c, CellIndex s, CellIndex t, const AStarParams& p) {
  const auto& g = c.geom;
  constexpr CostUm inf = std::numeric_limits<CostUm>::max();
  std::vector<CostUm> d(g.size(), inf);
  using E = std::pair<CostUm, std::size_t>;
  std::priority_queue<E, std::vector<E>, std::greater<>> q;
  d[g.index(s)] = 0;
  q.push({0, g.index(s)});
  while (!q.empty()) {
    const auto [dist, i] = q.top();
    q.pop();
    if (dist > d[i]) continue;
    const CellIndex cur{static_cast<int>(i % g.width), static_cast<int>(i / g.width)};
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        const CellIndex n{cur.ix + dx, cur.iy + dy};
        if (!g.in_bounds(n) || c.lethal(n)) continue;
        const bool diag = dx && dy;
        if (diag && diagonal_blocked(c, cur, n)) continue;
        const CostUm nd = dist + edge_cost_um(c, n, diag, p);
        if (nd < d[g.index(n)]) {
          d[g.index(n)] = nd;
          q.push({nd, g.index(n)});
        }
      }
  }
  return d[g.index(t)];
}

Outcome astar_optimality() {
  Outcome o;
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> cell(0, 19);
  int maps = 0, equal = 0, unreachable = 0;
  while (maps < 100) {
    auto grid = OccupancyGrid::make(GridGeometry::covering({0, 0, 1.0, 1.0}, 0.05));
    for (auto& v : grid.log_odds) v = u(gen) < 0.2 ? 5.0 : 0.0;
    const auto cm = inflate(grid, 0.08);
    const CellIndex s{cell(gen), cell(gen)}, t{cell(gen), cell(gen)};
    if (cm.lethal(s) || cm.lethal(t)) continue;
    ++maps;
    const AStarParams p{1.0 + u(gen)};
    const CostUm want = dijkstra(cm, s, t, p);
    if (want == std::numeric_limits<CostUm>::max()) {
      bool threw = false;
      try {
        astar_cells(cm, s, t, p);
      } catch (const NoPathError&) {
        threw = true;
      }
      if (threw) ++equal;
      ++unreachable;
      continue;
    }
    const auto path = astar_cells(cm, s, t, p);
    if (std::llround(path.cost * 1e6) == want) ++equal;
  }
  o.require(equal == maps, fmt::format("{} of {} maps differ", maps - equal, maps));
  o.detail = fmt::format("{}/{} maps exact ({} unreachable, both agree)", equal, maps, unreachable) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 6 -------------------------------------------------------------------------
// A cell is a true obstacle cell when it shares positive area with an obstacle.
bool cell_overlaps(const Rect& cell, const Rect& r) {
  return cell.xmax > r.xmin && cell.xmin < r.xmax && cell.ymax > r.ymin && cell.ymin < r.ymax;
}

Outcome mapping_fidelity() {
  Outcome o;
  const Scenario s = load_scenario(scenario_path("mapping_static.json"));
  auto grid = OccupancyGrid::make(GridGeometry::covering(s.world.bounds, s.mapping.resolution));
  grid.l_occ = s.mapping.l_occ;
  grid.l_free = s.mapping.l_free;
  grid.l_max = s.mapping.l_max;
  grid.occ_threshold = s.mapping.occ_threshold;
  RngStream rng = make_stream(s.seed, StreamId::Lidar);
  const Vec2 c{5.0, 5.0};
  const double scan_dt = 1.0 / s.rates.autonomy_hz;
  int scans = 0;
  // Ground-truth path: one lap outside the obstacles, one lap through the middle.
  for (double t = 0.0; t < s.duration - 1e-9; t += scan_dt, ++scans) {
    const bool outer = t < s.duration / 2;
    const double radius = outer ? 3.5 : 1.0;
    const double phase = 2.0 * kPi * (outer ? t : t - s.duration / 2) / (s.duration / 2) - kPi / 2;
    const Pose2D p{c.x + radius * std::cos(phase), c.y + radius * std::sin(phase), phase + kPi / 2};
    update_grid(grid, p, lidar_scan(s.world, p, s.lidar, rng), s.lidar);
  }
  std::size_t inter = 0, uni = 0, truth_n = 0, occ_n = 0;
  for (int iy = 0; iy < grid.geom.height; ++iy)
    for (int ix = 0; ix < grid.geom.width; ++ix) {
      const Rect cell = grid.geom.cell_rect({ix, iy});
      bool truth = false;
      for (const auto& r : s.world.static_obstacles) truth = truth || cell_overlaps(cell, r);
      const bool occ = grid.occupied({ix, iy});
      inter += truth && occ;
      uni += truth || occ;
      truth_n += truth;
      occ_n += occ;
    }
  const double iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  o.require(iou >= 0.90, fmt::format("IoU {:.3f}", iou));
  o.detail = fmt::format("IoU {:.4f} over {} scans ({} truth cells, {} occupied, {} shared)", iou, scans, truth_n, occ_n,
                         inter) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome mppi_navigation() {
  Outcome o;
  std::string summary;
  for (const char* name : {"corridor_static.json", "corridor_pedestrian.json", "corridor_narrow_gap.json"}) {
    const Scenario base = load_scenario(scenario_path(name));
    int ok = 0, collided = 0;
    for (int seed = 0; seed < 100; ++seed) {
      Scenario s = base;
      s.seed = static_cast<std::uint64_t>(seed) + 1;
      const auto r = run(s);
      if (r.metrics.collisions > 0) ++collided;
      if (r.metrics.all_goals() && r.metrics.collisions == 0) ++ok;
    }
    o.require(ok >= 95, fmt::format("{} only {}/100", name, ok));
    summary += fmt::format("{}{} {}/100 ({} with collisions)", summary.empty() ? "" : ", ", name, ok, collided);
  }
  o.detail = summary + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 8 -------------------------------------------------------------------------
Frame random_frame(std::mt19937_64& gen, std::uint16_t seq) {
  static const FrameKind kinds[] = {FrameKind::CmdVel, FrameKind::EStop, FrameKind::Resume,
                                    FrameKind::Lock,   FrameKind::Unlock, FrameKind::Status};
  Frame f = make_frame(kinds[gen() % 6], seq);
  for (std::size_t i = 0; i < f.len; ++i) f.payload[i] = static_cast<std::uint8_t>(gen());
  return f;
}

Outcome protocol_robustness() {
  Outcome o;
  const std::string check = "123456789";
  const std::vector<std::uint8_t> cb(check.begin(), check.end());
  o.require(crc16_bitwise(cb) == 0x29B1, "bitwise oracle disagrees with 0x29B1");
  o.require(crc16(cb) == 0x29B1, "crc16(\"123456789\") != 0x29B1");

  // 1e6 frames through a corrupting, lossy channel with garbage between frames.
  ChannelModel m;
  m.drop_prob = 0.05;
  m.corrupt_prob = 0.2;
  Channel ch(m, RngStream(31, 1));
  FrameDecoder dec;
  std::mt19937_64 gen(99);
  std::deque<Frame> recent;
  std::uint64_t emitted = 0, invalid = 0;
  for (std::uint32_t i = 0; i < 1000000; ++i) {
    const Frame f = random_frame(gen, static_cast<std::uint16_t>(i));
    recent.push_back(f);
    if (recent.size() > 4) recent.pop_front();
    auto bytes = encode_frame(f);
    if (gen() % 8 == 0) bytes.insert(bytes.begin(), static_cast<std::uint8_t>(gen()));
    ch.send(bytes, static_cast<double>(i));
    dec.feed(ch.deliver(static_cast<double>(i)), [&](const Frame& got) {
      ++emitted;
      bool known = false;
      for (const auto& r : recent) known = known || r == got;
      // independent CRC check of what was accepted
      const auto enc = encode_frame(got);
      const std::vector<std::uint8_t> covered(enc.begin() + 2, enc.end() - 2);
      const std::uint16_t crc = static_cast<std::uint16_t>((enc[enc.size() - 2] << 8) | enc.back());
      if (!known || crc16_bitwise(covered) != crc) ++invalid;
    });
  }
  o.require(invalid == 0, fmt::format("{} invalid frames delivered", invalid));

  // Pure random bytes: anything accepted must carry a valid CRC and appear verbatim.
  std::vector<std::uint8_t> noise(4000000);
  for (auto& b : noise) b = static_cast<std::uint8_t>(gen());
  for (std::size_t i = 0; i + 1 < noise.size(); i += 997) {
    noise[i] = kSync0;
    noise[i + 1] = kSync1;
  }
  FrameDecoder nd;
  std::uint64_t noise_frames = 0;
  nd.feed(noise, [&](const Frame& got) {
    ++noise_frames;
    const auto enc = encode_frame(got);
    const std::vector<std::uint8_t> covered(enc.begin() + 2, enc.end() - 2);
    const std::uint16_t crc = static_cast<std::uint16_t>((enc[enc.size() - 2] << 8) | enc.back());
    if (crc16_bitwise(covered) != crc || std::search(noise.begin(), noise.end(), enc.begin(), enc.end()) == noise.end())
      ++invalid;
  });
  o.require(invalid == 0, "random stream produced an invalid frame");

  // Chunking invariance over 1e4 random partitions.
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 300; ++i) {
    const auto b = encode_frame(random_frame(gen, static_cast<std::uint16_t>(i)));
    stream.insert(stream.end(), b.begin(), b.end());
    for (int k = static_cast<int>(gen() % 3); k > 0; --k) stream.push_back(static_cast<std::uint8_t>(gen()));
  }
  stream[stream.size() / 2] ^= 0x10;
  FrameDecoder ref;
  const auto want = ref.feed(stream);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    FrameDecoder d;
    std::size_t idx = 0, i = 0;
    bool same = true;
    while (i < stream.size()) {
      const std::size_t n = std::min<std::size_t>(gen() % 64, stream.size() - i);
      d.feed(std::span(stream).subspan(i, n), [&](const Frame& f) {
        if (idx >= want.size() || !(want[idx] == f)) same = false;
        ++idx;
      });
      i += n;
    }
    if (!same || idx != want.size() || d.errors() != ref.errors()) ++mismatches;
  }
  o.require(mismatches == 0, fmt::format("{} partitions disagree", mismatches));
  o.detail = fmt::format("crc 0x29B1 ok, {} frames accepted from 1e6 sent (channel corrupted {}), 0 invalid; "
                         "{} frames from random bytes; 10000 partitions identical",
                         emitted, ch.corrupted(), noise_frames) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome determinism() {
  Outcome o;
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const auto path = temp_path(fmt::format("det{}.csv", i));
    int status = 0;
    run_command(fmt::format("{} run --scenario {} --commands {} --csv {} --headless > /dev/null", DBOT_CLI,
                            scenario_path("corridor_pedestrian.json"), scenario_path("estop_commands.jsonl"), path),
                status);
    o.require(status == 0, "run command failed");
    csv[i] = slurp(path) + slurp(paths_file_for(path));
    std::filesystem::remove(path);
    std::filesystem::remove(paths_file_for(path));
  }
  o.require(!csv[0].empty(), "no trajectory written");
  o.require(csv[0] == csv[1], "trajectory CSVs differ");
  o.detail = fmt::format("two CLI runs with a command log, {} bytes, identical: {}", csv[0].size(),
                         csv[0] == csv[1] ? "yes" : "no") +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// 10 ------------------------------------------------------------------------
struct EstopCheck {
  double received = -1, estopped = -1, unlock_received = -1, unlock_status = -1;
};

EstopCheck inspect_estop(const RunResult& r) {
  EstopCheck e;
  for (const auto& a : r.commands) {
    if (a.cmd.kind == CommandKind::EStop && e.received < 0) e.received = a.received;
    if (a.cmd.kind == CommandKind::Unlock && e.unlock_received < 0) e.unlock_received = a.received;
  }
  if (e.received >= 0) {
    for (const auto& smp : r.log.samples) {
      if (smp.t >= e.received && smp.mode == FirmwareMode::EStopped && smp.pwm_left == 0.0 && smp.pwm_right == 0.0) {
        e.estopped = smp.t;
        break;
      }
    }
  }
  if (e.unlock_received >= 0) {
    for (const auto& st : r.statuses) {
      if (st.t >= e.unlock_received && st.status.lock == static_cast<std::uint8_t>(LockState::Unlocked)) {
        e.unlock_status = st.t;
        break;
      }
    }
  }
  return e;
}

// Minimal raw-TCP operator: waits for telemetry past t_estop, sends ESTOP, then UNLOCK.
void scripted_client(int port, double t_estop, std::atomic<bool>& done, std::string& error) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(static_cast<std::uint16_t>(port));
  ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
    error = "client could not connect";
    ::close(fd);
    return;
  }
  const std::string hello = "{\"cmd\":\"DIAG\"}\n";  // identifies us as a raw client right away
  ::send(fd, hello.data(), hello.size(), MSG_NOSIGNAL);
  std::string buf;
  int stage = 0;
  while (!done && stage < 3) {
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    char tmp[8192];
    const auto n = ::recv(fd, tmp, sizeof tmp, 0);
    if (n <= 0) break;
    buf.append(tmp, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buf.find('\n')) != std::string::npos) {
      const auto line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      if (j.contains("type")) {
        if (j["type"] == "ack" && j["cmd"] == "UNLOCK") stage = 3;
        continue;
      }
      if (!j.contains("t")) continue;
      const double t = j["t"];
      if (stage == 0 && t >= t_estop) {
        const std::string cmd = "{\"cmd\":\"ESTOP\"}\n";
        ::send(fd, cmd.data(), cmd.size(), MSG_NOSIGNAL);
        stage = 1;
      } else if (stage == 1 && j["mode"] == "EStopped") {
        const std::string cmd = "{\"cmd\":\"UNLOCK\"}\n";
        ::send(fd, cmd.data(), cmd.size(), MSG_NOSIGNAL);
        stage = 2;
      }
    }
  }
  if (stage < 3) error = fmt::format("client stopped at stage {}", stage);
  ::close(fd);
}

Outcome estop_chain() {
  Outcome o;
  const Scenario base = load_scenario(scenario_path("estop.json"));
  const double bound = 2.0 / base.rates.autonomy_hz + 1.0 / base.rates.control_hz;

  // Live gateway with a socket client; the loop is slowed slightly so the
  // client's replies land mid-run.
  GatewayConfig gc;
  gc.address.port = 0;
  Gateway gw(gc);
  gw.start();
  std::atomic<bool> done{false};
  std::string client_error;
  std::thread client(scripted_client, gw.port(), 3.0, std::ref(done), std::ref(client_error));
  while (gw.client_count() == 0) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  RunOptions live;
  live.telemetry_sink = [&](const std::string& line) { gw.broadcast(line); };
  std::int64_t polls = 0;
  live.live_commands = [&] {
    if (++polls % 4 == 0) std::this_thread::sleep_for(std::chrono::microseconds(1000));
    return gw.poll_commands();
  };
  const auto lr = run(base, live);
  done = true;
  client.join();
  gw.stop();
  const auto le = inspect_estop(lr);
  o.require(client_error.empty(), client_error);
  o.require(le.received >= 0 && le.estopped >= 0 && le.estopped - le.received <= bound + 1e-9,
            fmt::format("live: EStop received {:.3f} s, EStopped {:.3f} s", le.received, le.estopped));
  o.require(le.unlock_status >= 0, "live: no Status frame reported Unlocked");

  // Same chain from the scripted command log on 20 seeds.
  const auto script = load_command_log(scenario_path("estop_commands.jsonl"));
  double worst = 0.0;
  int failures = 0;
  for (int seed = 1; seed <= 20; ++seed) {
    Scenario s = base;
    s.seed = static_cast<std::uint64_t>(seed);
    RunOptions opts;
    opts.commands = script;
    const auto e = inspect_estop(run(s, opts));
    if (e.estopped < 0 || e.unlock_status < 0 || e.estopped - e.received > bound + 1e-9) ++failures;
    if (e.estopped >= 0) worst = std::max(worst, e.estopped - e.received);
  }
  o.require(failures == 0, fmt::format("{} scripted seeds failed", failures));
  o.detail = fmt::format("bound {:.3f} s; live socket: EStop at {:.3f} s -> EStopped {:.3f} s, Unlock in Status at {:.3f} s; "
                         "scripted 20 seeds worst latency {:.3f} s",
                         bound, le.received, le.estopped, le.unlock_status, worst) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> all = {
      {1, "sizing", sizing},
      {2, "failsafe timing", failsafe_timing},
      {3, "PID tracking", pid_tracking},
      {4, "EKF correctness", ekf_correctness},
      {5, "A* optimality", astar_optimality},
      {6, "mapping fidelity", mapping_fidelity},
      {7, "MPPI navigation", mppi_navigation},
      {8, "protocol robustness", protocol_robustness},
      {9, "determinism", determinism},
      {10, "E-stop chain", estop_chain},
  };
  // optional arguments select criteria by id
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s %2d %-20s %.2fs  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
