#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyrl/serial.hpp"

namespace polyrl {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Obs = std::vector<int32_t>;

// Restorable snapshot. `words` is the complete mutable state; the config hash
// guards restores across incompatible environments.
struct EnvState {
  uint64_t config_hash = 0;
  std::vector<int64_t> words;

  bool operator==(const EnvState&) const = default;

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    w.u64(config_hash);
    w.i64_vec(words);
    return w.take();
  }
  static EnvState deserialize(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    EnvState s;
    s.config_hash = r.u64();
    s.words = r.i64_vec();
    if (!r.done()) throw SerializeError("EnvState: trailing bytes");
    return s;
  }
};

struct StepOutcome {
  Obs observation;
  double reward = 0.0;
  bool terminal = false;
  int32_t info = -1;  // room id or node id entered; -1 when not in a room
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int action_count() const = 0;
  virtual Obs observation() const = 0;
  virtual bool terminal() const = 0;
  virtual bool succeeded() const = 0;
  virtual int32_t current_info() const = 0;
  virtual int horizon() const = 0;
  virtual StepOutcome step(int action) = 0;
  virtual EnvState snapshot() const = 0;
  virtual void restore(const EnvState& state) = 0;
  virtual void reset() = 0;
  virtual uint64_t config_hash() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

// (observation, action) pairs plus provenance counters used by the data tests.
struct Sample {
  Obs obs;
  int32_t action = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int64_t demo_count = 0;
  int64_t demo_successes = 0;
  int64_t triangle_samples = 0;
  int64_t edge_samples = 0;
  std::map<int, std::set<std::array<int, 3>>> seen_triangles;  // by graph id
};

inline double reward_on_success(int t, int horizon, double shaping = 0.5) {
  return 1.0 - shaping * double(t) / double(horizon);
}

}  // namespace polyrl
