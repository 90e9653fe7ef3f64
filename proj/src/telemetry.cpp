#include "dbot/telemetry.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

namespace dbot {

using ojson = nlohmann::ordered_json;

namespace {

ojson pose_json(const Pose2D& p) { return ojson{{"x", p.x}, {"y", p.y}, {"theta", p.theta}}; }

Pose2D pose_from(const ojson& j) { return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("theta").get<double>()}; }

FirmwareMode mode_from(const std::string& s) {
  for (int i = 0; i <= 4; ++i) {
    if (s == to_string(static_cast<FirmwareMode>(i))) return static_cast<FirmwareMode>(i);
  }
  throw TelemetryError("unknown mode " + s);
}

}  // namespace

bool operator==(const TelemetryRecord& a, const TelemetryRecord& b) {
  auto pose_eq = [](const Pose2D& p, const Pose2D& q) { return p.x == q.x && p.y == q.y && p.theta == q.theta; };
  auto det_eq = [](const Detection& p, const Detection& q) {
    return p.agent_id == q.agent_id && p.cls == q.cls && p.center.x == q.center.x && p.center.y == q.center.y &&
           p.footprint.x == q.footprint.x && p.footprint.y == q.footprint.y && p.confidence == q.confidence;
  };
  if (!(a.t == b.t && pose_eq(a.pose_est, b.pose_est) && pose_eq(a.pose_true, b.pose_true) &&
        a.twist.v == b.twist.v && a.twist.omega == b.twist.omega && a.setpoints.left == b.setpoints.left &&
        a.setpoints.right == b.setpoints.right && a.pwm_left == b.pwm_left && a.pwm_right == b.pwm_right &&
        a.battery_mv == b.battery_mv && a.mode == b.mode && a.lock == b.lock && a.map_ref == b.map_ref)) {
    return false;
  }
  if (a.goal.has_value() != b.goal.has_value()) return false;
  if (a.goal && (a.goal->x != b.goal->x || a.goal->y != b.goal->y)) return false;
  const PlannerSummary &p = a.planner, &q = b.planner;
  if (!(p.min_cost == q.min_cost && p.mean_cost == q.mean_cost && p.ess == q.ess && p.safe_stop == q.safe_stop &&
        p.path_id == q.path_id && p.path_points == q.path_points)) {
    return false;
  }
  if (a.detections.size() != b.detections.size()) return false;
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    if (!det_eq(a.detections[i], b.detections[i])) return false;
  }
  if (a.map.has_value() != b.map.has_value()) return false;
  if (a.map) {
    const auto &m = *a.map, &n = *b.map;
    if (!(m.id == n.id && m.rle == n.rle && m.geom.origin.x == n.geom.origin.x && m.geom.origin.y == n.geom.origin.y &&
          m.geom.resolution == n.geom.resolution && m.geom.width == n.geom.width && m.geom.height == n.geom.height)) {
      return false;
    }
  }
  return true;
}

std::string encode_telemetry(const TelemetryRecord& r) {
  ojson j;
  j["v"] = kTelemetrySchemaVersion;
  j["t"] = r.t;
  j["pose_est"] = pose_json(r.pose_est);
  j["pose_true"] = pose_json(r.pose_true);
  j["twist"] = ojson{{"v", r.twist.v}, {"omega", r.twist.omega}};
  j["wheels"] = ojson{{"set_left", r.setpoints.left},
                      {"set_right", r.setpoints.right},
                      {"pwm_left", r.pwm_left},
                      {"pwm_right", r.pwm_right}};
  j["battery_mv"] = r.battery_mv;
  j["mode"] = to_string(r.mode);
  j["lock"] = r.lock == LockState::Locked ? "Locked" : "Unlocked";
  j["goal"] = r.goal ? ojson::array({r.goal->x, r.goal->y}) : ojson(nullptr);
  j["planner"] = ojson{{"min_cost", r.planner.min_cost},
                       {"mean_cost", r.planner.mean_cost},
                       {"ess", r.planner.ess},
                       {"safe_stop", r.planner.safe_stop},
                       {"path_id", r.planner.path_id},
                       {"path_points", r.planner.path_points}};
  ojson dets = ojson::array();
  for (const Detection& d : r.detections) {
    dets.push_back(ojson{{"id", d.agent_id},
                         {"class", std::string(to_string(d.cls))},
                         {"x", d.center.x},
                         {"y", d.center.y},
                         {"size_x", d.footprint.x},
                         {"size_y", d.footprint.y},
                         {"confidence", d.confidence}});
  }
  j["detections"] = std::move(dets);
  j["map_ref"] = r.map_ref;
  if (r.map) {
    const GridSnapshot& m = *r.map;
    j["map"] = ojson{{"id", m.id},
                     {"origin", ojson::array({m.geom.origin.x, m.geom.origin.y})},
                     {"resolution", m.geom.resolution},
                     {"width", m.geom.width},
                     {"height", m.geom.height},
                     {"cells", m.rle}};
  }
  return j.dump() + "\n";
}

TelemetryRecord parse_telemetry(const std::string& line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw TelemetryError(std::string("malformed telemetry: ") + e.what());
  }
  try {
    if (j.at("v").get<int>() != kTelemetrySchemaVersion) throw TelemetryError("schema version mismatch");
    TelemetryRecord r;
    r.t = j.at("t").get<double>();
    r.pose_est = pose_from(j.at("pose_est"));
    r.pose_true = pose_from(j.at("pose_true"));
    r.twist = {j.at("twist").at("v").get<double>(), j.at("twist").at("omega").get<double>()};
    const auto& w = j.at("wheels");
    r.setpoints = {w.at("set_left").get<double>(), w.at("set_right").get<double>()};
    r.pwm_left = w.at("pwm_left").get<double>();
    r.pwm_right = w.at("pwm_right").get<double>();
    r.battery_mv = j.at("battery_mv").get<int>();
    r.mode = mode_from(j.at("mode").get<std::string>());
    r.lock = j.at("lock").get<std::string>() == "Locked" ? LockState::Locked : LockState::Unlocked;
    if (!j.at("goal").is_null()) r.goal = Vec2{j["goal"].at(0).get<double>(), j["goal"].at(1).get<double>()};
    const auto& p = j.at("planner");
    r.planner = {p.at("min_cost").get<double>(), p.at("mean_cost").get<double>(), p.at("ess").get<double>(),
                 p.at("safe_stop").get<bool>(), p.at("path_id").get<std::uint64_t>(),
                 p.at("path_points").get<std::uint64_t>()};
    for (const auto& d : j.at("detections")) {
      Detection det;
      det.agent_id = d.at("id").get<int>();
      det.cls = object_class_from_string(d.at("class").get<std::string>());
      det.center = {d.at("x").get<double>(), d.at("y").get<double>()};
      det.footprint = {d.at("size_x").get<double>(), d.at("size_y").get<double>()};
      det.confidence = d.at("confidence").get<double>();
      r.detections.push_back(det);
    }
    r.map_ref = j.at("map_ref").get<std::uint64_t>();
    if (j.contains("map")) {
      const auto& m = j["map"];
      GridSnapshot s;
      s.id = m.at("id").get<std::uint64_t>();
      s.geom.origin = {m.at("origin").at(0).get<double>(), m.at("origin").at(1).get<double>()};
      s.geom.resolution = m.at("resolution").get<double>();
      s.geom.width = m.at("width").get<int>();
      s.geom.height = m.at("height").get<int>();
      s.rle = m.at("cells").get<std::string>();
      r.map = std::move(s);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw TelemetryError(std::string("telemetry schema: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw TelemetryError(std::string("telemetry schema: ") + e.what());
  }
}

const char* to_wire(CommandKind k) {
  switch (k) {
    case CommandKind::EStop: return "ESTOP";
    case CommandKind::Resume: return "RESUME";
    case CommandKind::SetGoal: return "GOAL";
    case CommandKind::Lock: return "LOCK";
    case CommandKind::Unlock: return "UNLOCK";
  }
  return "?";
}

namespace {

OperatorCommand command_from(const nlohmann::json& j, const std::set<std::string>& extra_keys) {
  if (!j.is_object()) throw CommandRejected("command must be a JSON object");
  if (!j.contains("cmd") || !j["cmd"].is_string()) throw CommandRejected("missing string field \"cmd\"");
  const std::string name = j["cmd"].get<std::string>();
  OperatorCommand c;
  std::set<std::string> allowed = extra_keys;
  allowed.insert("cmd");
  if (name == "ESTOP") {
    c.kind = CommandKind::EStop;
  } else if (name == "RESUME") {
    c.kind = CommandKind::Resume;
  } else if (name == "LOCK") {
    c.kind = CommandKind::Lock;
  } else if (name == "UNLOCK") {
    c.kind = CommandKind::Unlock;
  } else if (name == "GOAL") {
    c.kind = CommandKind::SetGoal;
    allowed.insert("x");
    allowed.insert("y");
    for (const char* k : {"x", "y"}) {
      if (!j.contains(k) || !j[k].is_number()) throw CommandRejected(std::string("GOAL needs numeric \"") + k + "\"");
    }
    c.x = j["x"].get<double>();
    c.y = j["y"].get<double>();
    if (!std::isfinite(c.x) || !std::isfinite(c.y)) throw CommandRejected("GOAL coordinates must be finite");
  } else {
    throw CommandRejected("unknown cmd \"" + name + "\"");
  }
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw CommandRejected("unexpected key \"" + k + "\"");
  }
  return c;
}

nlohmann::json parse_object(const std::string& line) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw CommandRejected("not valid JSON");
  }
}

}  // namespace

OperatorCommand parse_command(const std::string& line) { return command_from(parse_object(line), {}); }

std::string encode_command(const OperatorCommand& c) {
  ojson j;
  j["cmd"] = to_wire(c.kind);
  if (c.kind == CommandKind::SetGoal) {
    j["x"] = c.x;
    j["y"] = c.y;
  }
  return j.dump();
}

std::string encode_logged_command(const LoggedCommand& c) {
  ojson j;
  j["t"] = c.t;
  j["cmd"] = to_wire(c.cmd.kind);
  if (c.cmd.kind == CommandKind::SetGoal) {
    j["x"] = c.cmd.x;
    j["y"] = c.cmd.y;
  }
  return j.dump() + "\n";
}

LoggedCommand parse_logged_command(const std::string& line) {
  const auto j = parse_object(line);
  if (!j.is_object() || !j.contains("t") || !j["t"].is_number()) throw CommandRejected("log line needs numeric \"t\"");
  LoggedCommand lc;
  lc.t = j["t"].get<double>();
  lc.cmd = command_from(j, {"t"});
  return lc;
}

std::vector<LoggedCommand> load_command_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open command log " + path);
  std::vector<LoggedCommand> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_logged_command(line));
    } catch (const CommandRejected& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (out.size() > 1 && out.back().t < out[out.size() - 2].t) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": command times must be non-decreasing");
    }
  }
  return out;
}

TelemetryPublisher::TelemetryPublisher(const std::string& log_path) {
  log_.open(log_path, std::ios::binary | std::ios::trunc);
  if (!log_) throw std::runtime_error("cannot open telemetry log " + log_path);
}

bool TelemetryPublisher::publish(const TelemetryRecord& r) {
  if (last_t_ && r.t < *last_t_) {
    ++violations_;
    return false;
  }
  last_t_ = r.t;
  const std::string line = encode_telemetry(r);
  if (log_.is_open()) log_ << line;
  if (sink_) sink_(line);
  ++published_;
  return true;
}

}  // namespace dbot
