#ifndef TWIST_ENV_HPP_
#define TWIST_ENV_HPP_

#include <cstdint>
#include <vector>

#include "twist/common.hpp"

namespace twist {

enum class Task { point_push, pole_balance };
enum class DrSplit { train, heldout };
enum class DrMode { per_step, per_episode };

// Visual randomization parameters. Purely cosmetic: dynamics never read them.
struct DrParams {
  float bg_r = 0.5f, bg_g = 0.5f, bg_b = 0.5f;  // background tint in [0,1]
  int texture_id = 0;
  float object_hue_shift = 0.0f;  // [0,1)
  float brightness = 1.0f;        // [0.5,1.5]
  DrSplit split = DrSplit::train;
  int jitter_x = 0, jitter_y = 0;  // camera-jitter offsets, 0 unless enabled

  // Fixed canonical appearance used by the no-randomization baseline arm.
  static DrParams nominal() { return DrParams{}; }
};

// PointPush state layout: [agent_x, agent_y, agent_vx, agent_vy,
//                          block_x, block_y, goal_x, goal_y]
// PoleBalance state layout: [cart_x, cart_vx, angle, angle_vel]
struct EnvState {
  Eigen::VectorXf s;
  int step_index = 0;
  float friction_mult = 1.0f;  // per-episode dynamics multiplier, 1 = off
};

struct Observation {
  int height = 0, width = 0;
  std::vector<uint8_t> pixels;  // HWC, RGB
};

struct EnvConfig {
  Task task = Task::point_push;
  int image_size = 32;
  int episode_length = 100;
  uint64_t texture_seed = 0x7e715eedULL;
  int train_textures = 48;
  int heldout_textures = 16;
  bool friction_randomization = false;  // PointPush drag multiplier per episode
  bool camera_jitter = false;           // +-2 px global translation
};

struct StepResult {
  EnvState state;
  float reward = 0.0f;
  bool done = false;
};

int state_dim(Task task);
int action_dim(Task task);

// Samples the documented initial distribution. PointPush: agent, block, goal
// uniform with pairwise separation >= 0.15; PoleBalance: angle uniform in
// +-0.05 rad, everything else zero.
EnvState env_reset(const EnvConfig& cfg, Rng& rng);

// Semi-implicit Euler step at dt=0.05; throws a protocol error when stepping
// a finished episode. Actions are clipped to [-1,1] per component.
StepResult env_step(const EnvConfig& cfg, const EnvState& state,
                    const float* action);

// Procedural value-noise textures partitioned into disjoint train/held-out
// id ranges. Fully determined by (seed, counts).
class TextureBank {
 public:
  TextureBank(uint64_t seed, int train_count, int heldout_count);

  int split_count(DrSplit split) const;
  int texture_at(DrSplit split, int index) const;  // -> global texture id
  bool in_split(int texture_id, DrSplit split) const;

  // Texture intensity in [0,1] at normalized coordinates u,v in [0,1).
  float value(int texture_id, float u, float v) const;

  DrParams sample_dr(Rng& rng, DrSplit split, DrMode mode,
                     bool camera_jitter = false) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  int train_count_;
  int heldout_count_;
};

// Deterministic rasterization of the privileged state under the given visual
// randomization. Same (state, dr) always yields bit-identical pixels.
Observation render(const EnvConfig& cfg, const TextureBank& bank,
                   const EnvState& state, const DrParams& dr);

// Task success predicates used by the evaluation protocol.
bool task_success(Task task, const EnvState& final_state, float mean_reward);

// Per-step reward bounds (used by property tests and score offsets).
float reward_lower_bound(Task task);
float reward_upper_bound(Task task);

}  // namespace twist

#endif  // TWIST_ENV_HPP_
