#pragma once
#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "polyrl/env.hpp"
#include "polyrl/rng.hpp"

namespace polyrl {

enum class Kind : int32_t { none = 0, key = 1, ball = 2, box = 3, goal = 4 };
enum class Color : int32_t { none = 0, red = 1, green = 2, blue = 3, yellow = 4, purple = 5, grey = 6 };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::key: return "key";
    case Kind::ball: return "ball";
    case Kind::box: return "box";
    case Kind::goal: return "goal";
    default: return "none";
  }
}
inline const char* color_name(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
    case Color::purple: return "purple";
    case Color::grey: return "grey";
    default: return "none";
  }
}
inline Kind kind_from(const std::string& s) {
  for (int k = 1; k <= 4; ++k)
    if (s == kind_name(Kind(k))) return Kind(k);
  throw ConfigError("unknown object kind: " + s);
}
inline Color color_from(const std::string& s) {
  for (int c = 1; c <= 6; ++c)
    if (s == color_name(Color(c))) return Color(c);
  throw ConfigError("unknown color: " + s);
}

enum class MissionKind : int32_t { go_to = 0, pick_up = 1, pickup_then_goto = 2 };

struct MissionSpec {
  MissionKind kind = MissionKind::go_to;
  Color c1 = Color::none;
  Kind k1 = Kind::none;
  Color c2 = Color::none;  // second stage of pickup_then_goto
  Kind k2 = Kind::none;

  // Stable structural enumeration: ids agree across configurations.
  int32_t id() const {
    int a = (int(c1) - 1) * 4 + (int(k1) - 1);
    switch (kind) {
      case MissionKind::go_to: return a;
      case MissionKind::pick_up: return 24 + a;
      case MissionKind::pickup_then_goto:
        return 48 + a * 24 + (int(c2) - 1) * 4 + (int(k2) - 1);
    }
    return -1;
  }

  std::string to_string() const {
    std::string s;
    switch (kind) {
      case MissionKind::go_to: s = "goto"; break;
      case MissionKind::pick_up: s = "pickup"; break;
      case MissionKind::pickup_then_goto: s = "pickup_then_goto"; break;
    }
    s += std::string(" ") + color_name(c1) + " " + kind_name(k1);
    if (kind == MissionKind::pickup_then_goto)
      s += std::string(" ") + color_name(c2) + " " + kind_name(k2);
    return s;
  }

  static MissionSpec parse(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    if (!(in >> word)) throw ConfigError("empty mission");
    MissionSpec m;
    std::string c, k;
    if (word == "goto") {
      m.kind = MissionKind::go_to;
    } else if (word == "pickup") {
      m.kind = MissionKind::pick_up;
    } else if (word == "pickup_then_goto") {
      m.kind = MissionKind::pickup_then_goto;
    } else {
      throw ConfigError("unknown mission type: " + word);
    }
    if (!(in >> c >> k)) throw ConfigError("mission missing target: " + text);
    m.c1 = color_from(c);
    m.k1 = kind_from(k);
    if (m.kind == MissionKind::pickup_then_goto) {
      if (!(in >> c >> k)) throw ConfigError("mission missing second target: " + text);
      m.c2 = color_from(c);
      m.k2 = kind_from(k);
    }
    return m;
  }
};

struct RoomsObject {
  Kind kind = Kind::none;
  Color color = Color::none;
  int x = 0, y = 0;
};

struct RoomsConfig {
  std::vector<std::string> rows;  // '#' wall, '.' floor, 'D' door
  std::vector<RoomsObject> objects;
  MissionSpec mission;
  int horizon = 100;
  int start_x = 1, start_y = 1, start_dir = 1;  // 0=N 1=E 2=S 3=W
  double shaping = 0.5;

  int width() const { return rows.empty() ? 0 : int(rows[0].size()); }
  int height() const { return int(rows.size()); }

  uint64_t hash() const {
    ByteWriter w;
    for (const auto& r : rows) w.str(r);
    w.u32(uint32_t(objects.size()));
    for (const auto& o : objects) {
      w.u32(uint32_t(o.kind));
      w.u32(uint32_t(o.color));
      w.u32(uint32_t(o.x));
      w.u32(uint32_t(o.y));
    }
    w.str(mission.to_string());
    w.u32(uint32_t(horizon));
    w.u32(uint32_t(start_x));
    w.u32(uint32_t(start_y));
    w.u32(uint32_t(start_dir));
    w.f64(shaping);
    return fnv1a64(w.data());
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "grid:\n";
    for (const auto& r : rows) out << r << "\n";
    out << "objects:\n";
    for (const auto& o : objects)
      out << kind_name(o.kind) << " " << color_name(o.color) << " " << o.x << " " << o.y << "\n";
    out << "mission: " << mission.to_string() << "\n";
    const char* dirs = "NESW";
    out << "start: " << start_x << " " << start_y << " " << dirs[start_dir] << "\n";
    out << "horizon: " << horizon << "\n";
    out << "shaping: " << format_g17(shaping) << "\n";
    return out.str();
  }

  static RoomsConfig parse(const std::string& text) {
    RoomsConfig cfg;
    std::istringstream in(text);
    std::string line;
    enum { top, grid, objs } section = top;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == ';') continue;
      if (line == "grid:") { section = grid; continue; }
      if (line == "objects:") { section = objs; continue; }
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string key = line.substr(0, colon);
        std::string val = line.substr(colon + 1);
        while (!val.empty() && val.front() == ' ') val.erase(val.begin());
        if (key == "mission") { cfg.mission = MissionSpec::parse(val); section = top; continue; }
        if (key == "horizon") { cfg.horizon = std::stoi(val); section = top; continue; }
        if (key == "shaping") { cfg.shaping = std::stod(val); section = top; continue; }
        if (key == "start") {
          std::istringstream sv(val);
          std::string d;
          if (!(sv >> cfg.start_x >> cfg.start_y >> d) || d.size() != 1)
            throw ConfigError("bad start line: " + line);
          const std::string dirs = "NESW";
          auto pos = dirs.find(d[0]);
          if (pos == std::string::npos) throw ConfigError("bad start direction: " + d);
          cfg.start_dir = int(pos);
          section = top;
          continue;
        }
        throw ConfigError("unknown config key: " + key);
      }
      if (section == grid) {
        cfg.rows.push_back(line);
      } else if (section == objs) {
        std::istringstream ov(line);
        std::string k, c;
        RoomsObject o;
        if (!(ov >> k >> c >> o.x >> o.y)) throw ConfigError("bad object line: " + line);
        o.kind = kind_from(k);
        o.color = color_from(c);
        cfg.objects.push_back(o);
      } else {
        throw ConfigError("unexpected line outside a section: " + line);
      }
    }
    return cfg;
  }
};

// dx/dy per direction: N, E, S, W.
constexpr int kDX[4] = {0, 1, 0, -1};
constexpr int kDY[4] = {-1, 0, 1, 0};

constexpr int kActLeft = 0, kActRight = 1, kActForward = 2, kActPickup = 3,
              kActDrop = 4, kActToggle = 5, kActDone = 6, kRoomsActions = 7;

// Occupancy codes for the 5x5 egocentric window.
constexpr int32_t kOccOut = 0, kOccWall = 1, kOccFloor = 2, kOccDoorClosed = 3, kOccDoorOpen = 4;
inline int32_t occ_object(Kind k, Color c) { return 5 + (int32_t(k) - 1) * 6 + (int32_t(c) - 1); }

class RoomsEnv final : public Environment {
 public:
  explicit RoomsEnv(const RoomsConfig& cfg) : cfg_(cfg) {
    validate_static();
    label_rooms();
    hash_ = cfg_.hash();
    reset();
  }

  int action_count() const override { return kRoomsActions; }
  int horizon() const override { return cfg_.horizon; }
  bool terminal() const override { return done_; }
  bool succeeded() const override { return success_; }
  uint64_t config_hash() const override { return hash_; }
  const RoomsConfig& config() const { return cfg_; }
  int room_count() const { return room_count_; }
  int32_t room_at(int x, int y) const { return room_id_[idx(x, y)]; }
  int32_t current_info() const override { return room_at(x_, y_); }

  void reset() override {
    x_ = cfg_.start_x;
    y_ = cfg_.start_y;
    dir_ = cfg_.start_dir;
    carried_ = -1;
    door_mask_ = 0;  // all doors start closed
    steps_ = 0;
    done_ = false;
    success_ = false;
    obj_pos_.clear();
    for (const auto& o : cfg_.objects) obj_pos_.push_back({o.x, o.y});
  }

  StepOutcome step(int action) override {
    if (done_) throw UsageError("step after terminal");
    if (action < 0 || action >= kRoomsActions) throw UsageError("invalid rooms action");
    apply(action);
    steps_ += 1;
    StepOutcome out;
    if (mission_satisfied()) {
      success_ = true;
      done_ = true;
      out.reward = reward_on_success(steps_ - 1, cfg_.horizon, cfg_.shaping);
    } else if (steps_ >= cfg_.horizon) {
      done_ = true;
      out.reward = 0.0;
    }
    out.terminal = done_;
    out.info = current_info();
    out.observation = observation();
    return out;
  }

  Obs observation() const override {
    Obs o;
    o.reserve(6 + 25);
    o.push_back(x_);
    o.push_back(y_);
    o.push_back(dir_);
    if (carried_ >= 0) {
      o.push_back(int32_t(cfg_.objects[carried_].kind));
      o.push_back(int32_t(cfg_.objects[carried_].color));
    } else {
      o.push_back(0);
      o.push_back(0);
    }
    o.push_back(cfg_.mission.id());
    int fdx = kDX[dir_], fdy = kDY[dir_];
    int rdx = kDX[(dir_ + 1) % 4], rdy = kDY[(dir_ + 1) % 4];
    for (int f = 0; f < 5; ++f)
      for (int l = -2; l <= 2; ++l) {
        int cx = x_ + f * fdx + l * rdx;
        int cy = y_ + f * fdy + l * rdy;
        o.push_back(occ_code(cx, cy));
      }
    return o;
  }

  EnvState snapshot() const override {
    EnvState s;
    s.config_hash = hash_;
    s.words = {x_, y_, dir_, carried_, int64_t(door_mask_), steps_, done_ ? 1 : 0, success_ ? 1 : 0};
    for (const auto& p : obj_pos_) {
      s.words.push_back(p.first);
      s.words.push_back(p.second);
    }
    return s;
  }

  void restore(const EnvState& s) override {
    if (s.config_hash != hash_) throw ConfigError("snapshot config hash mismatch");
    size_t want = 8 + 2 * cfg_.objects.size();
    if (s.words.size() != want) throw ConfigError("snapshot word count mismatch");
    x_ = int(s.words[0]);
    y_ = int(s.words[1]);
    dir_ = int(s.words[2]);
    carried_ = int(s.words[3]);
    door_mask_ = uint32_t(s.words[4]);
    steps_ = int(s.words[5]);
    done_ = s.words[6] != 0;
    success_ = s.words[7] != 0;
    obj_pos_.clear();
    for (size_t i = 0; i < cfg_.objects.size(); ++i)
      obj_pos_.push_back({int(s.words[8 + 2 * i]), int(s.words[9 + 2 * i])});
  }

  std::unique_ptr<Environment> clone() const override {
    auto e = std::make_unique<RoomsEnv>(cfg_);
    e->restore(snapshot());
    return e;
  }

  // Fresh start state with a relocated agent; used by the perturbation suite.
  EnvState start_state_at(int x, int y, int dir) const {
    if (!is_floor(x, y) || object_at(x, y) >= 0)
      throw UsageError("perturbed start must be a free floor cell");
    RoomsEnv tmp(cfg_);
    tmp.x_ = x;
    tmp.y_ = y;
    tmp.dir_ = dir;
    return tmp.snapshot();
  }

  bool is_floor(int x, int y) const { return in_bounds(x, y) && cfg_.rows[y][x] == '.'; }
  bool is_door(int x, int y) const { return in_bounds(x, y) && cfg_.rows[y][x] == 'D'; }
  int object_at(int x, int y) const {
    for (size_t i = 0; i < obj_pos_.size(); ++i)
      if (int(i) != carried_ && obj_pos_[i].first == x && obj_pos_[i].second == y) return int(i);
    return -1;
  }
  int carried() const { return carried_; }
  int agent_x() const { return x_; }
  int agent_y() const { return y_; }
  int agent_dir() const { return dir_; }
  int steps_taken() const { return steps_; }

  // Physical-state key for the planner: snapshot words minus step/terminal
  // bookkeeping, so BFS merges states regardless of elapsed time.
  std::string planner_key() const {
    EnvState s = snapshot();
    ByteWriter w;
    for (size_t i = 0; i < s.words.size(); ++i)
      if (i != 5 && i != 6 && i != 7) w.i64(s.words[i]);
    const auto& b = w.data();
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
  }

 private:
  bool in_bounds(int x, int y) const {
    return y >= 0 && y < cfg_.height() && x >= 0 && x < cfg_.width();
  }
  size_t idx(int x, int y) const { return size_t(y) * cfg_.width() + x; }

  int door_index(int x, int y) const {
    auto it = door_index_.find(idx(x, y));
    return it == door_index_.end() ? -1 : it->second;
  }
  bool door_open(int x, int y) const {
    int d = door_index(x, y);
    return d >= 0 && (door_mask_ >> d) & 1;
  }

  int32_t occ_code(int x, int y) const {
    if (!in_bounds(x, y)) return kOccOut;
    char c = cfg_.rows[y][x];
    if (c == '#') return kOccWall;
    int oi = object_at(x, y);
    if (oi >= 0) return occ_object(cfg_.objects[oi].kind, cfg_.objects[oi].color);
    if (c == 'D') return door_open(x, y) ? kOccDoorOpen : kOccDoorClosed;
    return kOccFloor;
  }

  bool passable(int x, int y) const {
    if (!in_bounds(x, y)) return false;
    char c = cfg_.rows[y][x];
    if (c == '#') return false;
    if (c == 'D' && !door_open(x, y)) return false;
    return object_at(x, y) < 0;
  }

  void apply(int action) {
    int fx = x_ + kDX[dir_], fy = y_ + kDY[dir_];
    switch (action) {
      case kActLeft: dir_ = (dir_ + 3) % 4; break;
      case kActRight: dir_ = (dir_ + 1) % 4; break;
      case kActForward:
        if (passable(fx, fy)) { x_ = fx; y_ = fy; }
        break;
      case kActPickup: {
        int oi = object_at(fx, fy);
        if (oi >= 0 && carried_ < 0 && cfg_.objects[oi].kind != Kind::goal) {
          carried_ = oi;
          obj_pos_[oi] = {-1, -1};
        }
        break;
      }
      case kActDrop:
        if (carried_ >= 0 && is_floor(fx, fy) && object_at(fx, fy) < 0 &&
            !(fx == x_ && fy == y_)) {
          obj_pos_[carried_] = {fx, fy};
          carried_ = -1;
        }
        break;
      case kActToggle: {
        int d = door_index(fx, fy);
        if (d >= 0) door_mask_ ^= (1u << d);
        break;
      }
      case kActDone: break;
    }
  }

  bool front_has(Color c, Kind k) const {
    int fx = x_ + kDX[dir_], fy = y_ + kDY[dir_];
    int oi = object_at(fx, fy);
    return oi >= 0 && cfg_.objects[oi].color == c && cfg_.objects[oi].kind == k;
  }
  bool carrying(Color c, Kind k) const {
    return carried_ >= 0 && cfg_.objects[carried_].color == c && cfg_.objects[carried_].kind == k;
  }

  bool mission_satisfied() const {
    const auto& m = cfg_.mission;
    switch (m.kind) {
      case MissionKind::go_to: return front_has(m.c1, m.k1);
      case MissionKind::pick_up: return carrying(m.c1, m.k1);
      case MissionKind::pickup_then_goto:
        return carrying(m.c1, m.k1) && front_has(m.c2, m.k2);
    }
    return false;
  }

  void validate_static() {
    if (cfg_.rows.empty()) throw ConfigError("empty grid");
    size_t w = cfg_.rows[0].size();
    if (w < 3 || cfg_.rows.size() < 3) throw ConfigError("grid too small");
    for (const auto& r : cfg_.rows) {
      if (r.size() != w) throw ConfigError("ragged grid rows");
      for (char c : r)
        if (c != '#' && c != '.' && c != 'D') throw ConfigError(std::string("bad grid char: ") + c);
    }
    for (size_t x = 0; x < w; ++x)
      if (cfg_.rows.front()[x] != '#' || cfg_.rows.back()[x] != '#')
        throw ConfigError("grid border must be wall");
    for (const auto& r : cfg_.rows)
      if (r.front() != '#' || r.back() != '#') throw ConfigError("grid border must be wall");
    if (cfg_.horizon < 1) throw ConfigError("horizon must be >= 1");

    int doors = 0;
    for (int y = 0; y < cfg_.height(); ++y)
      for (int x = 0; x < cfg_.width(); ++x)
        if (cfg_.rows[y][x] == 'D') door_index_[idx(x, y)] = doors++;
    if (doors > 30) throw ConfigError("too many doors (door mask is 30 bits)");

    std::vector<std::pair<int, int>> used;
    for (const auto& o : cfg_.objects) {
      if (o.kind == Kind::none || o.color == Color::none) throw ConfigError("object needs kind and color");
      if (!in_bounds(o.x, o.y) || cfg_.rows[o.y][o.x] != '.')
        throw ConfigError("object must sit on a floor cell");
      for (auto& u : used)
        if (u.first == o.x && u.second == o.y) throw ConfigError("two objects share a cell");
      used.push_back({o.x, o.y});
    }
    if (!in_bounds(cfg_.start_x, cfg_.start_y) || cfg_.rows[cfg_.start_y][cfg_.start_x] != '.')
      throw ConfigError("start must be a floor cell");
    for (auto& u : used)
      if (u.first == cfg_.start_x && u.second == cfg_.start_y)
        throw ConfigError("start cell is occupied by an object");
    if (cfg_.start_dir < 0 || cfg_.start_dir > 3) throw ConfigError("bad start direction");

    auto require_target = [&](Color c, Kind k, bool pickupable, int min_count) {
      int count = 0;
      for (const auto& o : cfg_.objects)
        if (o.color == c && o.kind == k) ++count;
      if (count < min_count)
        throw ConfigError(std::string("mission target absent from layout: ") + color_name(c) + " " + kind_name(k));
      if (pickupable && k == Kind::goal) throw ConfigError("goal objects cannot be picked up");
    };
    const auto& m = cfg_.mission;
    switch (m.kind) {
      case MissionKind::go_to: require_target(m.c1, m.k1, false, 1); break;
      case MissionKind::pick_up: require_target(m.c1, m.k1, true, 1); break;
      case MissionKind::pickup_then_goto: {
        require_target(m.c1, m.k1, true, 1);
        bool same = m.c1 == m.c2 && m.k1 == m.k2;
        require_target(m.c2, m.k2, false, same ? 2 : 1);
        break;
      }
    }
  }

  void label_rooms() {
    room_id_.assign(size_t(cfg_.width()) * cfg_.height(), -1);
    room_count_ = 0;
    for (int y = 0; y < cfg_.height(); ++y)
      for (int x = 0; x < cfg_.width(); ++x) {
        if (cfg_.rows[y][x] != '.' || room_id_[idx(x, y)] >= 0) continue;
        std::deque<std::pair<int, int>> q{{x, y}};
        room_id_[idx(x, y)] = room_count_;
        while (!q.empty()) {
          auto [cx, cy] = q.front();
          q.pop_front();
          for (int d = 0; d < 4; ++d) {
            int nx = cx + kDX[d], ny = cy + kDY[d];
            if (in_bounds(nx, ny) && cfg_.rows[ny][nx] == '.' && room_id_[idx(nx, ny)] < 0) {
              room_id_[idx(nx, ny)] = room_count_;
              q.push_back({nx, ny});
            }
          }
        }
        room_count_++;
      }
    for (auto& [cell, d] : door_index_) {
      int x = int(cell % cfg_.width()), y = int(cell / cfg_.width());
      std::vector<int> rooms;
      for (int dd = 0; dd < 4; ++dd) {
        int nx = x + kDX[dd], ny = y + kDY[dd];
        if (in_bounds(nx, ny) && cfg_.rows[ny][nx] == '.') {
          int r = room_id_[idx(nx, ny)];
          if (std::find(rooms.begin(), rooms.end(), r) == rooms.end()) rooms.push_back(r);
        }
      }
      if (rooms.size() != 2)
        throw ConfigError("door does not connect exactly two rooms");
      (void)d;
    }
  }

  RoomsConfig cfg_;
  uint64_t hash_ = 0;
  std::unordered_map<size_t, int> door_index_;
  std::vector<int32_t> room_id_;
  int room_count_ = 0;

  int x_ = 0, y_ = 0, dir_ = 0, carried_ = -1, steps_ = 0;
  uint32_t door_mask_ = 0;
  bool done_ = false, success_ = false;
  std::vector<std::pair<int, int>> obj_pos_;
};

// Breadth-first search over exact environment snapshots. Returns the shortest
// action sequence (under the stage filter) reaching mission success, or
// nullopt. The wide filter permits picking up arbitrary objects and is only
// tried when the staged search fails (e.g. a dropped object blocks a passage).
inline std::optional<std::vector<int>> plan_mission(const RoomsEnv& env, bool wide = false) {
  if (env.terminal()) return env.succeeded() ? std::optional<std::vector<int>>({}) : std::nullopt;
  const auto& m = env.config().mission;

  RoomsEnv sim(env.config());
  EnvState root = env.snapshot();
  root.words[5] = 0;  // reset step counter: plans ignore the remaining horizon
  root.words[6] = 0;
  root.words[7] = 0;

  struct Node {
    EnvState state;
    int parent;
    int action;
  };
  std::vector<Node> nodes;
  std::unordered_map<std::string, int> seen;
  nodes.push_back({root, -1, -1});
  sim.restore(root);
  seen[sim.planner_key()] = 0;
  std::deque<int> frontier{0};

  auto carried_matches = [&](const RoomsEnv& e, Color c, Kind k) {
    int ci = e.carried();
    return ci >= 0 && e.config().objects[ci].color == c && e.config().objects[ci].kind == k;
  };

  size_t expanded = 0;
  while (!frontier.empty()) {
    if (++expanded > 400000) return std::nullopt;
    int cur = frontier.front();
    frontier.pop_front();
    sim.restore(nodes[cur].state);

    bool needs_pickup = false, goto_stage = false, carrying_wrong = false;
    int ci = sim.carried();
    switch (m.kind) {
      case MissionKind::go_to:
        goto_stage = true;
        carrying_wrong = ci >= 0 && !carried_matches(sim, m.c1, m.k1);
        break;
      case MissionKind::pick_up:
        needs_pickup = ci < 0;
        carrying_wrong = ci >= 0 && !carried_matches(sim, m.c1, m.k1);
        break;
      case MissionKind::pickup_then_goto:
        if (carried_matches(sim, m.c1, m.k1)) {
          goto_stage = true;
        } else {
          needs_pickup = ci < 0;
          carrying_wrong = ci >= 0;
        }
        break;
    }

    for (int a = 0; a < kRoomsActions; ++a) {
      if (a == kActDone) continue;
      if (!wide) {
        if (a == kActPickup) {
          if (sim.carried() >= 0) continue;
          int fx = sim.agent_x() + kDX[sim.agent_dir()], fy = sim.agent_y() + kDY[sim.agent_dir()];
          int oi = sim.object_at(fx, fy);
          if (oi < 0) continue;
          bool is_target = needs_pickup && sim.config().objects[oi].color == m.c1 &&
                           sim.config().objects[oi].kind == m.k1;
          if (!is_target) continue;
        }
        if (a == kActDrop) {
          bool goto_target_in_hand =
              m.kind == MissionKind::go_to && carried_matches(sim, m.c1, m.k1);
          if (!(carrying_wrong || goto_target_in_hand)) continue;
        }
      } else {
        if (a == kActPickup && sim.carried() >= 0) continue;
        if (a == kActDrop && sim.carried() < 0) continue;
      }

      sim.restore(nodes[cur].state);
      StepOutcome out = sim.step(a);
      if (sim.succeeded()) {
        std::vector<int> plan{a};
        for (int n = cur; nodes[n].parent >= 0; n = nodes[n].parent) plan.push_back(nodes[n].action);
        std::reverse(plan.begin(), plan.end());
        return plan;
      }
      (void)out;
      std::string key = sim.planner_key();
      if (seen.count(key)) continue;
      EnvState st = sim.snapshot();
      st.words[5] = 0;
      st.words[6] = 0;
      st.words[7] = 0;
      seen[key] = int(nodes.size());
      nodes.push_back({std::move(st), cur, a});
      frontier.push_back(int(nodes.size()) - 1);
    }
  }
  return std::nullopt;
}

inline std::unique_ptr<RoomsEnv> make_rooms_env(const RoomsConfig& cfg, uint64_t seed) {
  (void)seed;  // dynamics are deterministic; all stochasticity lives in the policy
  auto env = std::make_unique<RoomsEnv>(cfg);
  if (!plan_mission(*env) && !plan_mission(*env, true))
    throw ConfigError("mission unsatisfiable from start (reachability search failed): " +
                      cfg.mission.to_string());
  return env;
}

// Expert demonstrations: replan from the true state each step, replacing the
// expert action with a uniform one with probability `noise`. Plans are cached
// per physical state across a config's demos.
inline Dataset generate_rooms_demos(const std::vector<RoomsConfig>& configs, int count_per_config,
                                    double noise, uint64_t seed) {
  if (count_per_config < 1) throw UsageError("demo count must be >= 1");
  Dataset data;
  for (size_t ci = 0; ci < configs.size(); ++ci) {
    auto env = make_rooms_env(configs[ci], seed);
    std::unordered_map<std::string, int> action_cache;
    for (int d = 0; d < count_per_config; ++d) {
      Rng rng = make_rng(seed, {streams::demo, uint64_t(ci), uint64_t(d)});
      env->reset();
      while (!env->terminal()) {
        std::string key = env->planner_key();
        auto hit = action_cache.find(key);
        int expert;
        if (hit != action_cache.end()) {
          expert = hit->second;
        } else {
          auto plan = plan_mission(*env);
          if (!plan) plan = plan_mission(*env, true);
          if (!plan || plan->empty())
            throw InternalError("planner failed on a satisfiable mission mid-demo");
          expert = (*plan)[0];
          // Cache every state along the found plan.
          auto walker = env->clone();
          auto* walk = static_cast<RoomsEnv*>(walker.get());
          for (size_t i = 0; i < plan->size(); ++i) {
            action_cache[walk->planner_key()] = (*plan)[i];
            if (i + 1 < plan->size()) {
              walk->step((*plan)[i]);
              if (walk->terminal()) break;  // time limit can cut the walk short
            }
          }
        }
        int taken = rng.uniform() < noise ? rng.uniform_int(kRoomsActions) : expert;
        data.samples.push_back({env->observation(), taken});
        env->step(taken);
      }
      data.demo_count++;
      if (env->succeeded()) data.demo_successes++;
    }
  }
  return data;
}

}  // namespace polyrl
