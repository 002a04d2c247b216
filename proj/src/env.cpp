#include "twist/env.hpp"

#include <algorithm>
#include <cmath>

namespace twist {

namespace {

constexpr float kDt = 0.05f;

// PointPush geometry and dynamics constants. The block is quasi-static: it
// moves only when pushed, resolved as a position correction along the
// agent->block line using a contact disc of radius kBlockContact.
constexpr float kAgentRadius = 0.07f;
constexpr float kBlockHalf = 0.06f;     // rendered square half-extent
constexpr float kBlockContact = 0.08f;  // contact disc radius
constexpr float kGoalRadius = 0.07f;
constexpr float kAccelGain = 2.0f;
constexpr float kDrag = 2.0f;
constexpr float kArenaMargin = 0.12f;
constexpr float kMinSeparation = 0.15f;

// PoleBalance constants (classic cart-pole, frictionless pivot).
constexpr float kGravity = 9.8f;
constexpr float kCartMass = 1.0f;
constexpr float kPoleMass = 0.1f;
constexpr float kPoleHalfLen = 0.5f;
constexpr float kForceGain = 10.0f;
constexpr float kCartLimit = 2.4f;

float clipf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

int state_dim(Task task) { return task == Task::point_push ? 8 : 4; }
int action_dim(Task task) { return task == Task::point_push ? 2 : 1; }

EnvState env_reset(const EnvConfig& cfg, Rng& rng) {
  EnvState st;
  st.step_index = 0;
  if (cfg.task == Task::point_push) {
    st.s.resize(8);
    auto draw = [&]() {
      return Eigen::Vector2f(
          static_cast<float>(rng.uniform(kArenaMargin, 1.0 - kArenaMargin)),
          static_cast<float>(rng.uniform(kArenaMargin, 1.0 - kArenaMargin)));
    };
    Eigen::Vector2f agent, block, goal;
    // rejection sample until pairwise separations clear the minimum
    for (;;) {
      agent = draw();
      block = draw();
      goal = draw();
      float d_ab = (agent - block).norm();
      float d_ag = (agent - goal).norm();
      float d_bg = (block - goal).norm();
      if (d_ab >= kMinSeparation && d_ag >= kMinSeparation &&
          d_bg >= kMinSeparation)
        break;
    }
    st.s << agent.x(), agent.y(), 0.0f, 0.0f, block.x(), block.y(), goal.x(),
        goal.y();
    if (cfg.friction_randomization)
      st.friction_mult = static_cast<float>(rng.uniform(0.8, 1.2));
  } else {
    st.s.resize(4);
    st.s.setZero();
    st.s(2) = static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  return st;
}

StepResult env_step(const EnvConfig& cfg, const EnvState& state,
                    const float* action) {
  require(state.step_index < cfg.episode_length, ErrorKind::protocol,
          "env_step: episode already done");
  StepResult out;
  out.state = state;
  EnvState& st = out.state;

  if (cfg.task == Task::point_push) {
    float ax = clipf(action[0], -1.0f, 1.0f);
    float ay = clipf(action[1], -1.0f, 1.0f);
    float drag = kDrag * st.friction_mult;
    // semi-implicit Euler on the agent
    st.s(2) += kDt * (kAccelGain * ax - drag * st.s(2));
    st.s(3) += kDt * (kAccelGain * ay - drag * st.s(3));
    st.s(0) += kDt * st.s(2);
    st.s(1) += kDt * st.s(3);
    // arena walls stop the agent dead on the clamped axis
    for (int axis = 0; axis < 2; ++axis) {
      float lo = kAgentRadius, hi = 1.0f - kAgentRadius;
      if (st.s(axis) < lo || st.s(axis) > hi) {
        st.s(axis) = clipf(st.s(axis), lo, hi);
        st.s(2 + axis) = 0.0f;
      }
    }
    // quasi-static block push along the contact normal
    float dx = st.s(4) - st.s(0), dy = st.s(5) - st.s(1);
    float d = std::sqrt(dx * dx + dy * dy);
    float contact = kAgentRadius + kBlockContact;
    if (d < contact) {
      float nx = 1.0f, ny = 0.0f;
      if (d > 1e-6f) {
        nx = dx / d;
        ny = dy / d;
      }
      st.s(4) += (contact - d) * nx;
      st.s(5) += (contact - d) * ny;
      st.s(4) = clipf(st.s(4), kBlockHalf, 1.0f - kBlockHalf);
      st.s(5) = clipf(st.s(5), kBlockHalf, 1.0f - kBlockHalf);
    }
    float bg = std::sqrt((st.s(4) - st.s(6)) * (st.s(4) - st.s(6)) +
                         (st.s(5) - st.s(7)) * (st.s(5) - st.s(7)));
    float ab = std::sqrt((st.s(0) - st.s(4)) * (st.s(0) - st.s(4)) +
                         (st.s(1) - st.s(5)) * (st.s(1) - st.s(5)));
    out.reward = -bg - 0.1f * ab;
  } else {
    float a = clipf(action[0], -1.0f, 1.0f);
    float force = kForceGain * a;
    float x = st.s(0), xdot = st.s(1), th = st.s(2), thdot = st.s(3);
    float total_mass = kCartMass + kPoleMass;
    float sin_th = std::sin(th), cos_th = std::cos(th);
    float temp =
        (force + kPoleMass * kPoleHalfLen * thdot * thdot * sin_th) /
        total_mass;
    float th_acc =
        (kGravity * sin_th - cos_th * temp) /
        (kPoleHalfLen *
         (4.0f / 3.0f - kPoleMass * cos_th * cos_th / total_mass));
    float x_acc = temp - kPoleMass * kPoleHalfLen * th_acc * cos_th / total_mass;
    thdot += kDt * th_acc;
    th += kDt * thdot;
    xdot += kDt * x_acc;
    x += kDt * xdot;
    if (x < -kCartLimit || x > kCartLimit) {
      x = clipf(x, -kCartLimit, kCartLimit);
      xdot = 0.0f;
    }
    st.s << x, xdot, th, thdot;
    out.reward = std::cos(th);
  }

  st.step_index = state.step_index + 1;
  out.done = st.step_index >= cfg.episode_length;
  return out;
}

float reward_lower_bound(Task task) {
  if (task == Task::point_push) return -1.1f * static_cast<float>(M_SQRT2);
  return -1.0f;
}

float reward_upper_bound(Task task) {
  if (task == Task::point_push) return 0.0f;
  return 1.0f;
}

bool task_success(Task task, const EnvState& final_state, float mean_reward) {
  if (task == Task::point_push) {
    float dx = final_state.s(4) - final_state.s(6);
    float dy = final_state.s(5) - final_state.s(7);
    return std::sqrt(dx * dx + dy * dy) < 0.05f;
  }
  return mean_reward > 0.9f;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

float hash01(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t h = Rng::mix(seed, Rng::mix(a, b));
  return static_cast<float>(h >> 11) * static_cast<float>(0x1.0p-53);
}

float smooth(float t) { return t * t * (3.0f - 2.0f * t); }

// One octave of periodic value noise on an n x n lattice.
float value_noise(uint64_t seed, int n, float u, float v) {
  float x = u * static_cast<float>(n), y = v * static_cast<float>(n);
  int ix = static_cast<int>(std::floor(x)), iy = static_cast<int>(std::floor(y));
  float fx = smooth(x - static_cast<float>(ix));
  float fy = smooth(y - static_cast<float>(iy));
  auto at = [&](int gx, int gy) {
    return hash01(seed, static_cast<uint64_t>((gx % n + n) % n),
                  static_cast<uint64_t>((gy % n + n) % n));
  };
  float v00 = at(ix, iy), v10 = at(ix + 1, iy);
  float v01 = at(ix, iy + 1), v11 = at(ix + 1, iy + 1);
  float a = v00 + (v10 - v00) * fx;
  float b = v01 + (v11 - v01) * fx;
  return a + (b - a) * fy;
}

struct Rgb {
  float r, g, b;
};

Rgb hue_shift(const Rgb& c, float shift) {
  if (shift == 0.0f) return c;
  float mx = std::max({c.r, c.g, c.b});
  float mn = std::min({c.r, c.g, c.b});
  float d = mx - mn;
  float h = 0.0f;
  if (d > 0.0f) {
    if (mx == c.r)
      h = std::fmod((c.g - c.b) / d, 6.0f);
    else if (mx == c.g)
      h = (c.b - c.r) / d + 2.0f;
    else
      h = (c.r - c.g) / d + 4.0f;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
  }
  float s = mx > 0.0f ? d / mx : 0.0f;
  h = std::fmod(h + shift, 1.0f);
  float hh = h * 6.0f;
  int i = static_cast<int>(hh) % 6;
  float f = hh - std::floor(hh);
  float p = mx * (1.0f - s);
  float q = mx * (1.0f - s * f);
  float t = mx * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: return {mx, t, p};
    case 1: return {q, mx, p};
    case 2: return {p, mx, t};
    case 3: return {p, q, mx};
    case 4: return {t, p, mx};
    default: return {mx, p, q};
  }
}

struct Painter {
  std::vector<Rgb> buf;
  int w, h;
  float px;  // pixel size in normalized units

  void blend(int x, int y, const Rgb& c, float alpha) {
    if (alpha <= 0.0f || x < 0 || x >= w || y < 0 || y >= h) return;
    Rgb& dst = buf[static_cast<size_t>(y) * w + x];
    dst.r += (c.r - dst.r) * alpha;
    dst.g += (c.g - dst.g) * alpha;
    dst.b += (c.b - dst.b) * alpha;
  }

  // coverage-style edge: full inside, linear falloff one pixel wide
  float edge(float signed_dist) const {
    return clipf(0.5f - signed_dist / px, 0.0f, 1.0f);
  }

  void circle(float cx, float cy, float r, const Rgb& c) {
    int x0 = static_cast<int>((cx - r) * w) - 1, x1 = static_cast<int>((cx + r) * w) + 1;
    int y0 = static_cast<int>((cy - r) * h) - 1, y1 = static_cast<int>((cy + r) * h) + 1;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        float u = (static_cast<float>(x) + 0.5f) / w;
        float v = (static_cast<float>(y) + 0.5f) / h;
        float d = std::sqrt((u - cx) * (u - cx) + (v - cy) * (v - cy)) - r;
        blend(x, y, c, edge(d));
      }
  }

  void box(float cx, float cy, float half_x, float half_y, const Rgb& c) {
    int x0 = static_cast<int>((cx - half_x) * w) - 1,
        x1 = static_cast<int>((cx + half_x) * w) + 1;
    int y0 = static_cast<int>((cy - half_y) * h) - 1,
        y1 = static_cast<int>((cy + half_y) * h) + 1;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        float u = (static_cast<float>(x) + 0.5f) / w;
        float v = (static_cast<float>(y) + 0.5f) / h;
        float d = std::max(std::abs(u - cx) - half_x,
                           std::abs(v - cy) - half_y);
        blend(x, y, c, edge(d));
      }
  }

  void diamond(float cx, float cy, float r, const Rgb& c) {
    int x0 = static_cast<int>((cx - r) * w) - 1, x1 = static_cast<int>((cx + r) * w) + 1;
    int y0 = static_cast<int>((cy - r) * h) - 1, y1 = static_cast<int>((cy + r) * h) + 1;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        float u = (static_cast<float>(x) + 0.5f) / w;
        float v = (static_cast<float>(y) + 0.5f) / h;
        float d = std::abs(u - cx) + std::abs(v - cy) - r;
        blend(x, y, c, edge(d));
      }
  }

  // capsule between two points, used for the pole
  void segment(float x0f, float y0f, float x1f, float y1f, float half_w,
               const Rgb& c) {
    float lo_x = std::min(x0f, x1f) - half_w, hi_x = std::max(x0f, x1f) + half_w;
    float lo_y = std::min(y0f, y1f) - half_w, hi_y = std::max(y0f, y1f) + half_w;
    int px0 = static_cast<int>(lo_x * w) - 1, px1 = static_cast<int>(hi_x * w) + 1;
    int py0 = static_cast<int>(lo_y * h) - 1, py1 = static_cast<int>(hi_y * h) + 1;
    float dx = x1f - x0f, dy = y1f - y0f;
    float len2 = dx * dx + dy * dy;
    for (int y = py0; y <= py1; ++y)
      for (int x = px0; x <= px1; ++x) {
        float u = (static_cast<float>(x) + 0.5f) / w;
        float v = (static_cast<float>(y) + 0.5f) / h;
        float t = len2 > 0.0f
                      ? clipf(((u - x0f) * dx + (v - y0f) * dy) / len2, 0.0f, 1.0f)
                      : 0.0f;
        float qx = x0f + t * dx - u, qy = y0f + t * dy - v;
        float d = std::sqrt(qx * qx + qy * qy) - half_w;
        blend(x, y, c, edge(d));
      }
  }
};

constexpr Rgb kAgentColor{0.20f, 0.45f, 0.95f};
constexpr Rgb kBlockColor{0.95f, 0.80f, 0.15f};
constexpr Rgb kGoalColor{0.90f, 0.15f, 0.15f};
constexpr Rgb kCartColor{0.95f, 0.80f, 0.15f};
constexpr Rgb kPoleColor{0.20f, 0.45f, 0.95f};
constexpr Rgb kTrackColor{0.15f, 0.15f, 0.18f};

}  // namespace

TextureBank::TextureBank(uint64_t seed, int train_count, int heldout_count)
    : seed_(seed), train_count_(train_count), heldout_count_(heldout_count) {
  require(train_count > 0 && heldout_count > 0, ErrorKind::config,
          "TextureBank: both splits must be non-empty");
}

int TextureBank::split_count(DrSplit split) const {
  return split == DrSplit::train ? train_count_ : heldout_count_;
}

int TextureBank::texture_at(DrSplit split, int index) const {
  require(index >= 0 && index < split_count(split), ErrorKind::config,
          "TextureBank: texture index out of range");
  return split == DrSplit::train ? index : train_count_ + index;
}

bool TextureBank::in_split(int texture_id, DrSplit split) const {
  if (split == DrSplit::train) return texture_id >= 0 && texture_id < train_count_;
  return texture_id >= train_count_ &&
         texture_id < train_count_ + heldout_count_;
}

float TextureBank::value(int texture_id, float u, float v) const {
  uint64_t ts = Rng::mix(seed_, static_cast<uint64_t>(texture_id));
  float coarse = value_noise(Rng::mix(ts, 1), 3, u, v);
  float fine = value_noise(Rng::mix(ts, 2), 6, u, v);
  return 0.55f * coarse + 0.45f * fine;
}

DrParams TextureBank::sample_dr(Rng& rng, DrSplit split, DrMode mode,
                                bool camera_jitter) const {
  (void)mode;  // per_step vs per_episode is the caller's re-draw policy
  require(split_count(split) > 0, ErrorKind::config,
          "sample_dr: empty split partition");
  DrParams dr;
  dr.split = split;
  dr.texture_id =
      texture_at(split, static_cast<int>(rng.uniform_int(
                            static_cast<uint64_t>(split_count(split)))));
  dr.bg_r = static_cast<float>(rng.uniform());
  dr.bg_g = static_cast<float>(rng.uniform());
  dr.bg_b = static_cast<float>(rng.uniform());
  dr.object_hue_shift = static_cast<float>(rng.uniform());
  dr.brightness = static_cast<float>(rng.uniform(0.5, 1.5));
  if (camera_jitter) {
    dr.jitter_x = static_cast<int>(rng.uniform_int(5)) - 2;
    dr.jitter_y = static_cast<int>(rng.uniform_int(5)) - 2;
  }
  return dr;
}

Observation render(const EnvConfig& cfg, const TextureBank& bank,
                   const EnvState& state, const DrParams& dr) {
  const int w = cfg.image_size, h = cfg.image_size;
  Painter p;
  p.w = w;
  p.h = h;
  p.px = 1.0f / static_cast<float>(w);
  p.buf.resize(static_cast<size_t>(w) * h);

  // background: texture modulated by tint and brightness
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float u = (static_cast<float>(x - dr.jitter_x) + 0.5f) / w;
      float v = (static_cast<float>(y - dr.jitter_y) + 0.5f) / h;
      u -= std::floor(u);
      v -= std::floor(v);
      float tex = bank.value(dr.texture_id, u, v) * dr.brightness;
      p.buf[static_cast<size_t>(y) * w + x] =
          Rgb{clipf(tex * dr.bg_r, 0.0f, 1.0f), clipf(tex * dr.bg_g, 0.0f, 1.0f),
              clipf(tex * dr.bg_b, 0.0f, 1.0f)};
    }

  float jx = static_cast<float>(dr.jitter_x) / w;
  float jy = static_cast<float>(dr.jitter_y) / h;
  if (cfg.task == Task::point_push) {
    Rgb goal_c = hue_shift(kGoalColor, dr.object_hue_shift);
    Rgb block_c = hue_shift(kBlockColor, dr.object_hue_shift);
    Rgb agent_c = hue_shift(kAgentColor, dr.object_hue_shift);
    p.diamond(state.s(6) + jx, state.s(7) + jy, kGoalRadius, goal_c);
    p.box(state.s(4) + jx, state.s(5) + jy, kBlockHalf, kBlockHalf, block_c);
    p.circle(state.s(0) + jx, state.s(1) + jy, kAgentRadius, agent_c);
  } else {
    float cx = 0.5f + state.s(0) / (2.0f * kCartLimit) * 0.8f + jx;
    float cy = 0.72f + jy;
    Rgb track_c = hue_shift(kTrackColor, dr.object_hue_shift);
    Rgb cart_c = hue_shift(kCartColor, dr.object_hue_shift);
    Rgb pole_c = hue_shift(kPoleColor, dr.object_hue_shift);
    p.box(0.5f + jx, cy + 0.06f, 0.48f, 0.012f, track_c);
    p.box(cx, cy, 0.09f, 0.045f, cart_c);
    float tip_x = cx + 0.34f * std::sin(state.s(2));
    float tip_y = cy - 0.04f - 0.34f * std::cos(state.s(2));
    p.segment(cx, cy - 0.04f, tip_x, tip_y, 0.022f, pole_c);
    p.circle(tip_x, tip_y, 0.05f, hue_shift(kGoalColor, dr.object_hue_shift));
  }

  Observation obs;
  obs.height = h;
  obs.width = w;
  obs.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < p.buf.size(); ++i) {
    obs.pixels[3 * i + 0] =
        static_cast<uint8_t>(std::lround(clipf(p.buf[i].r, 0.0f, 1.0f) * 255.0f));
    obs.pixels[3 * i + 1] =
        static_cast<uint8_t>(std::lround(clipf(p.buf[i].g, 0.0f, 1.0f) * 255.0f));
    obs.pixels[3 * i + 2] =
        static_cast<uint8_t>(std::lround(clipf(p.buf[i].b, 0.0f, 1.0f) * 255.0f));
  }
  return obs;
}

}  // namespace twist
