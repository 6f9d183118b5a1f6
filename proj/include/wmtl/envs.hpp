#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmtl/errors.hpp"

namespace wmtl {

inline constexpr std::size_t kFrameSide = 16;
inline constexpr std::size_t kFramePixels = kFrameSide * kFrameSide;
inline constexpr std::size_t kEpisodeLength = 200;
inline constexpr double kDt = 0.05;

struct EnvSpec {
  std::string domain_id;
  std::size_t action_dim;
  std::size_t episode_length = kEpisodeLength;
  double dt = kDt;
};

namespace detail {

/// Tiny rasterizer for 16x16 grayscale frames. Pixels take the max of
/// overlapping strokes so layouts stay readable.
class Frame {
 public:
  Frame() : px_(kFramePixels, 0.0) {}

  void put(int x, int y, double v) {
    if (x < 0 || y < 0 || x >= static_cast<int>(kFrameSide) || y >= static_cast<int>(kFrameSide)) return;
    double& p = px_[static_cast<std::size_t>(y) * kFrameSide + static_cast<std::size_t>(x)];
    p = std::max(p, std::clamp(v, 0.0, 1.0));
  }

  void disc(double cx, double cy, double r, double v) {
    const int lo = static_cast<int>(std::floor(-r - 1));
    const int hi = static_cast<int>(std::ceil(r + 1));
    for (int dy = lo; dy <= hi; ++dy) {
      for (int dx = lo; dx <= hi; ++dx) {
        const int x = static_cast<int>(std::round(cx)) + dx;
        const int y = static_cast<int>(std::round(cy)) + dy;
        const double d = std::hypot(x - cx, y - cy);
        if (d <= r) put(x, y, v);
      }
    }
  }

  void line(double x0, double y0, double x1, double y1, double v, double thickness = 0.0) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(2, static_cast<int>(std::ceil(len * 3)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double x = x0 + t * (x1 - x0);
      const double y = y0 + t * (y1 - y0);
      if (thickness > 0.0) {
        disc(x, y, thickness, v);
      } else {
        put(static_cast<int>(std::round(x)), static_cast<int>(std::round(y)), v);
      }
    }
  }

  std::vector<double> take() { return std::move(px_); }

 private:
  std::vector<double> px_;
};

inline void check_action(std::span<const double> action, std::size_t dim, std::string_view domain) {
  if (action.size() != dim) {
    throw InputError(std::string(domain) + ": expected " + std::to_string(dim) + " action values, got " +
                     std::to_string(action.size()));
  }
  for (double a : action) {
    if (!(a >= -1.0 && a <= 1.0)) {
      throw InputError(std::string(domain) + ": action value " + std::to_string(a) +
                       " outside [-1, 1]");
    }
  }
}

}  // namespace detail

/// Common surface of the desk environments. Dynamics are deterministic
/// (semi-implicit Euler at dt=0.05) and episodes run a fixed 200 steps with
/// no early termination; the driver counts steps. Rewards are pure functions
/// of the state, exposed via state_reward so the value at the reset state is
/// well defined too.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual void reset() = 0;
  virtual double step(std::span<const double> action) = 0;
  virtual double state_reward() const = 0;
  virtual std::vector<double> render() const = 0;
  virtual std::vector<double> state() const = 0;
  virtual void set_state(std::span<const double> s) = 0;
};

/// Single pendulum swingup. The angle is measured from the hanging position,
/// so upright means phi = pi and the reward (cosine of the angle from
/// upright) is -cos(phi). Torque-limited, so the agent must pump energy.
class PendulumSwingup final : public Env {
 public:
  PendulumSwingup() : spec_{"pendulum", 1} { reset(); }

  const EnvSpec& spec() const override { return spec_; }

  void reset() override {
    phi_ = 0.0;
    vel_ = 0.0;
  }

  double step(std::span<const double> action) override {
    detail::check_action(action, 1, spec_.domain_id);
    const double acc = -(kGravity / kLength) * std::sin(phi_) + 3.0 * action[0] - damping * vel_;
    vel_ = std::clamp(vel_ + spec_.dt * acc, -kMaxSpeed, kMaxSpeed);
    phi_ += spec_.dt * vel_;
    return state_reward();
  }

  double state_reward() const override { return -std::cos(phi_); }

  std::vector<double> render() const override {
    detail::Frame f;
    const double cx = 8.0, cy = 8.0, r = 6.5;
    f.line(cx, cy, cx + r * std::sin(phi_), cy + r * std::cos(phi_), 1.0);
    f.disc(cx, cy, 0.8, 0.5);
    return f.take();
  }

  std::vector<double> state() const override { return {phi_, vel_}; }
  void set_state(std::span<const double> s) override {
    phi_ = s[0];
    vel_ = s[1];
  }

  double total_energy() const {
    return 0.5 * kLength * kLength * vel_ * vel_ + kGravity * kLength * (1.0 - std::cos(phi_));
  }

  double damping = 0.1;

 private:
  static constexpr double kGravity = 9.8;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxSpeed = 8.0;
  EnvSpec spec_;
  double phi_ = 0.0;
  double vel_ = 0.0;
};

/// Two-link pendulum swingup, torque on the first joint only. Angles are
/// absolute from the hanging direction; reward is the sum of the two links'
/// cosines from upright, so fully inverted scores 2.
class DoublePendulumSwingup final : public Env {
 public:
  DoublePendulumSwingup() : spec_{"doublependulum", 1} { reset(); }

  const EnvSpec& spec() const override { return spec_; }

  void reset() override { t1_ = t2_ = v1_ = v2_ = 0.0; }

  double step(std::span<const double> action) override {
    detail::check_action(action, 1, spec_.domain_id);
    // Unit masses and lengths: M = [[2, c12],[c12, 1]] with c12 = cos(t1-t2).
    const double c12 = std::cos(t1_ - t2_);
    const double s12 = std::sin(t1_ - t2_);
    const double b1 = 3.0 * action[0] - s12 * v2_ * v2_ - 2.0 * kGravity * std::sin(t1_) - damping * v1_;
    const double b2 = s12 * v1_ * v1_ - kGravity * std::sin(t2_) - damping * v2_;
    const double det = 2.0 - c12 * c12;
    const double a1 = (b1 - c12 * b2) / det;
    const double a2 = (2.0 * b2 - c12 * b1) / det;
    v1_ = std::clamp(v1_ + spec_.dt * a1, -kMaxSpeed, kMaxSpeed);
    v2_ = std::clamp(v2_ + spec_.dt * a2, -kMaxSpeed, kMaxSpeed);
    t1_ += spec_.dt * v1_;
    t2_ += spec_.dt * v2_;
    return state_reward();
  }

  double state_reward() const override { return -std::cos(t1_) - std::cos(t2_); }

  std::vector<double> render() const override {
    detail::Frame f;
    const double cx = 8.0, cy = 8.0, r = 3.4;
    const double jx = cx + r * std::sin(t1_), jy = cy + r * std::cos(t1_);
    f.line(cx, cy, jx, jy, 1.0, 1.0);
    f.line(jx, jy, jx + r * std::sin(t2_), jy + r * std::cos(t2_), 1.0, 1.0);
    return f.take();
  }

  std::vector<double> state() const override { return {t1_, t2_, v1_, v2_}; }
  void set_state(std::span<const double> s) override {
    t1_ = s[0];
    t2_ = s[1];
    v1_ = s[2];
    v2_ = s[3];
  }

  double damping = 0.1;

 private:
  static constexpr double kGravity = 9.8;
  static constexpr double kMaxSpeed = 8.0;
  EnvSpec spec_;
  double t1_ = 0.0, t2_ = 0.0, v1_ = 0.0, v2_ = 0.0;
};

/// Point mass on a bounded 1-D track; reward is negative distance to the
/// goal position x = 0.8. Hitting a wall stops the mass.
class PointMass1D final : public Env {
 public:
  PointMass1D() : spec_{"pointmass1d", 1} { reset(); }

  const EnvSpec& spec() const override { return spec_; }

  void reset() override {
    x_ = 0.0;
    v_ = 0.0;
  }

  double step(std::span<const double> action) override {
    detail::check_action(action, 1, spec_.domain_id);
    v_ += spec_.dt * (3.0 * action[0] - 0.5 * v_);
    x_ += spec_.dt * v_;
    if (x_ < -kBound || x_ > kBound) {
      x_ = std::clamp(x_, -kBound, kBound);
      v_ = 0.0;
    }
    return state_reward();
  }

  double state_reward() const override { return -std::abs(x_ - kGoal); }

  std::vector<double> render() const override {
    detail::Frame f;
    for (int px = 0; px < static_cast<int>(kFrameSide); ++px) f.put(px, 12, 0.25);
    f.disc(to_px(x_), 12.0, 1.4, 1.0);
    return f.take();
  }

  std::vector<double> state() const override { return {x_, v_}; }
  void set_state(std::span<const double> s) override {
    x_ = s[0];
    v_ = s[1];
  }

 private:
  static double to_px(double x) { return (x + 1.5) / 3.0 * 15.0; }
  static constexpr double kBound = 1.5;
  static constexpr double kGoal = 0.8;
  EnvSpec spec_;
  double x_ = 0.0, v_ = 0.0;
};

/// Planar point mass with a fixed goal marker; reward is negative Euclidean
/// distance to the goal.
class PointMass2D final : public Env {
 public:
  PointMass2D() : spec_{"pointmass2d", 2} { reset(); }

  const EnvSpec& spec() const override { return spec_; }

  void reset() override { x_ = y_ = vx_ = vy_ = 0.0; }

  double step(std::span<const double> action) override {
    detail::check_action(action, 2, spec_.domain_id);
    vx_ += spec_.dt * (3.0 * action[0] - 0.5 * vx_);
    vy_ += spec_.dt * (3.0 * action[1] - 0.5 * vy_);
    x_ += spec_.dt * vx_;
    y_ += spec_.dt * vy_;
    if (x_ < -kBound || x_ > kBound) {
      x_ = std::clamp(x_, -kBound, kBound);
      vx_ = 0.0;
    }
    if (y_ < -kBound || y_ > kBound) {
      y_ = std::clamp(y_, -kBound, kBound);
      vy_ = 0.0;
    }
    return state_reward();
  }

  double state_reward() const override { return -std::hypot(x_ - kGoalX, y_ - kGoalY); }

  std::vector<double> render() const override {
    detail::Frame f;
    f.disc(to_px(kGoalX), to_px(kGoalY), 0.6, 0.45);
    f.disc(to_px(x_), to_px(y_), 1.4, 1.0);
    return f.take();
  }

  std::vector<double> state() const override { return {x_, y_, vx_, vy_}; }
  void set_state(std::span<const double> s) override {
    x_ = s[0];
    y_ = s[1];
    vx_ = s[2];
    vy_ = s[3];
  }

 private:
  static double to_px(double x) { return (x + 1.5) / 3.0 * 15.0; }
  static constexpr double kBound = 1.5;
  static constexpr double kGoalX = 0.5;
  static constexpr double kGoalY = 0.5;
  EnvSpec spec_;
  double x_ = 0.0, y_ = 0.0, vx_ = 0.0, vy_ = 0.0;
};

/// Two-joint torque-controlled arm (no gravity, viscous joints); reward is
/// negative distance from the fingertip to a fixed target.
class Reacher2 final : public Env {
 public:
  Reacher2() : spec_{"reacher2", 2} { reset(); }

  const EnvSpec& spec() const override { return spec_; }

  void reset() override { t1_ = t2_ = v1_ = v2_ = 0.0; }

  double step(std::span<const double> action) override {
    detail::check_action(action, 2, spec_.domain_id);
    v1_ = std::clamp(v1_ + spec_.dt * (3.0 * action[0] - 0.5 * v1_), -kMaxSpeed, kMaxSpeed);
    v2_ = std::clamp(v2_ + spec_.dt * (3.0 * action[1] - 0.5 * v2_), -kMaxSpeed, kMaxSpeed);
    t1_ += spec_.dt * v1_;
    t2_ += spec_.dt * v2_;
    return state_reward();
  }

  double state_reward() const override {
    const auto [tx, ty] = tip();
    return -std::hypot(tx - kTargetX, ty - kTargetY);
  }

  std::vector<double> render() const override {
    detail::Frame f;
    const double cx = 8.0, cy = 8.0, r = 3.4;
    const double jx = cx + r * std::sin(t1_), jy = cy + r * std::cos(t1_);
    const double a2 = t1_ + t2_;
    f.disc(to_px(kTargetX), to_px(kTargetY), 0.9, 0.7);
    f.line(cx, cy, jx, jy, 0.55);
    f.line(jx, jy, jx + r * std::sin(a2), jy + r * std::cos(a2), 0.55);
    return f.take();
  }

  std::vector<double> state() const override { return {t1_, t2_, v1_, v2_}; }
  void set_state(std::span<const double> s) override {
    t1_ = s[0];
    t2_ = s[1];
    v1_ = s[2];
    v2_ = s[3];
  }

  std::pair<double, double> tip() const {
    const double a2 = t1_ + t2_;
    return {kLink * std::sin(t1_) + kLink * std::sin(a2), kLink * std::cos(t1_) + kLink * std::cos(a2)};
  }

 private:
  static double to_px(double x) { return (x + 1.1) / 2.2 * 15.0; }
  static constexpr double kLink = 0.5;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kTargetX = 0.5;
  static constexpr double kTargetY = 0.5;
  EnvSpec spec_;
  double t1_ = 0.0, t2_ = 0.0, v1_ = 0.0, v2_ = 0.0;
};

inline const std::vector<std::string>& all_domain_ids() {
  static const std::vector<std::string> ids = {"doublependulum", "pendulum", "pointmass1d",
                                               "pointmass2d", "reacher2"};
  return ids;
}

inline std::unique_ptr<Env> make_env(std::string_view domain_id) {
  if (domain_id == "pendulum") return std::make_unique<PendulumSwingup>();
  if (domain_id == "doublependulum") return std::make_unique<DoublePendulumSwingup>();
  if (domain_id == "pointmass1d") return std::make_unique<PointMass1D>();
  if (domain_id == "pointmass2d") return std::make_unique<PointMass2D>();
  if (domain_id == "reacher2") return std::make_unique<Reacher2>();
  throw ConfigError("unknown domain '" + std::string(domain_id) + "'");
}

/// Common action width for a set of domains: the maximum native dimension.
/// Coordinates beyond a domain's own width are carried but never read.
struct PaddedActionSpace {
  std::size_t a_max = 0;
  std::map<std::string, std::size_t> used;  // domain id -> native action dim

  std::size_t native_dim(const std::string& domain) const {
    auto it = used.find(domain);
    if (it == used.end()) throw KeyError("domain '" + domain + "' not in padded action space");
    return it->second;
  }
};

inline PaddedActionSpace pad_action_space(const std::vector<std::string>& domains) {
  if (domains.empty()) throw ConfigError("pad_action_space: empty domain set");
  PaddedActionSpace space;
  for (const std::string& d : domains) {
    const std::size_t dim = make_env(d)->spec().action_dim;
    space.used[d] = dim;
    space.a_max = std::max(space.a_max, dim);
  }
  return space;
}

/// Env wrapper accepting A_max-wide actions; only the native coordinates
/// reach the wrapped environment, so padding junk is inert by construction.
class PaddedEnv {
 public:
  PaddedEnv(std::unique_ptr<Env> env, std::size_t a_max)
      : env_(std::move(env)), a_max_(a_max) {
    if (a_max_ < env_->spec().action_dim) {
      throw ConfigError("padded width " + std::to_string(a_max_) + " below native dim of " +
                        env_->spec().domain_id);
    }
  }

  Env& env() { return *env_; }
  const Env& env() const { return *env_; }
  std::size_t a_max() const { return a_max_; }
  const std::string& domain_id() const { return env_->spec().domain_id; }

  void reset() { env_->reset(); }

  double step(std::span<const double> padded_action) {
    if (padded_action.size() != a_max_) {
      throw InputError("expected padded action of width " + std::to_string(a_max_) + ", got " +
                       std::to_string(padded_action.size()));
    }
    return env_->step(padded_action.subspan(0, env_->spec().action_dim));
  }

  std::vector<double> render() const { return env_->render(); }

 private:
  std::unique_ptr<Env> env_;
  std::size_t a_max_;
};

/// Debug export: binary PGM (P5), 16x16, maxval 255.
inline void write_pgm(const std::string& path, const std::vector<double>& frame) {
  if (frame.size() != kFramePixels) {
    throw DimensionError("write_pgm: expected " + std::to_string(kFramePixels) + " pixels");
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::fprintf(f, "P5\n%zu %zu\n255\n", kFrameSide, kFrameSide);
  for (double v : frame) {
    const unsigned char byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    std::fputc(byte, f);
  }
  std::fclose(f);
}

}  // namespace wmtl
