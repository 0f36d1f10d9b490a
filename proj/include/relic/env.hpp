#pragma once

#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/rng.hpp"

namespace relic {

// Actions: 0 up (+y), 1 down (-y), 2 left (-x), 3 right (+x), 4 stay.
namespace darkroom_action {
inline constexpr int kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4;
}

struct StepResult {
  std::vector<float> obs;  // observation after the step (next episode's first obs when done)
  float reward = 0.0f;
  bool done = false;
  int episode = 0;  // indices of the step just executed
  int step = 0;
};

// One trial: a fixed hidden goal, episodes back to back, each from a fresh
// seed-derived start. Fully deterministic in (spec, trial_seed, actions).
class TrialEnv {
 public:
  TrialEnv() = default;
  TrialEnv(const DarkroomSpec& spec, uint64_t trial_seed) : spec_(spec), seed_(trial_seed) {
    const uint64_t g = derive_seed(trial_seed, rng_domain::kTrial);
    goal_x_ = static_cast<int>(splitmix64(g) % spec_.grid_size);
    goal_y_ = static_cast<int>(splitmix64(g + 1) % spec_.grid_size);
    reset();
  }

  void reset() {
    episode_ = 0;
    step_ = 0;
    place_agent();
  }

  std::vector<float> obs() const {
    if (spec_.pixel) return render_pixel();
    const float s = static_cast<float>(spec_.grid_size - 1);
    return {static_cast<float>(x_) / s, static_cast<float>(y_) / s};
  }

  StepResult step(int action) {
    check(action >= 0 && action < DarkroomSpec::kActionCount, "env/bad_action",
          "action " + std::to_string(action));
    switch (action) {
      case darkroom_action::kUp: y_ = std::min(y_ + 1, spec_.grid_size - 1); break;
      case darkroom_action::kDown: y_ = std::max(y_ - 1, 0); break;
      case darkroom_action::kLeft: x_ = std::max(x_ - 1, 0); break;
      case darkroom_action::kRight: x_ = std::min(x_ + 1, spec_.grid_size - 1); break;
      default: break;
    }
    StepResult r;
    r.reward = (x_ == goal_x_ && y_ == goal_y_) ? 1.0f : 0.0f;
    r.episode = episode_;
    r.step = step_;
    ++step_;
    r.done = step_ == spec_.horizon;
    if (r.done) {
      ++episode_;
      step_ = 0;
      place_agent();
    }
    r.obs = obs();
    return r;
  }

  // Manhattan shortest path: close the x gap, then the y gap, stay on goal.
  int oracle_action() const {
    if (x_ < goal_x_) return darkroom_action::kRight;
    if (x_ > goal_x_) return darkroom_action::kLeft;
    if (y_ < goal_y_) return darkroom_action::kUp;
    if (y_ > goal_y_) return darkroom_action::kDown;
    return darkroom_action::kStay;
  }

  int episode() const { return episode_; }
  int pos() const { return step_; }
  int x() const { return x_; }
  int y() const { return y_; }
  int goal_x() const { return goal_x_; }
  int goal_y() const { return goal_y_; }
  uint64_t seed() const { return seed_; }
  const DarkroomSpec& spec() const { return spec_; }

  std::vector<float> render_pixel() const {
    const int W = spec_.image_w, H = spec_.image_h;
    std::vector<float> img(static_cast<size_t>(W) * H * 3);
    for (int py = 0; py < H; ++py) {
      for (int px = 0; px < W; ++px) {
        const size_t at = (static_cast<size_t>(py) * W + px) * 3;
        const uint64_t cell = static_cast<uint64_t>(py) * W + px;
        img[at + 0] = static_cast<float>(splitmix64(cell * 3 + 0) & 0xff) / 255.0f * 0.3f;
        img[at + 1] = static_cast<float>(splitmix64(cell * 3 + 1) & 0xff) / 255.0f * 0.3f;
        img[at + 2] = static_cast<float>(splitmix64(cell * 3 + 2) & 0xff) / 255.0f * 0.3f;
      }
    }
    const int ax = ((2 * x_ + 1) * W) / (2 * spec_.grid_size);
    const int ay = ((2 * y_ + 1) * H) / (2 * spec_.grid_size);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int px = ax + dx, py = ay + dy;
        if (px < 0 || px >= W || py < 0 || py >= H) continue;
        const size_t at = (static_cast<size_t>(py) * W + px) * 3;
        img[at + 0] = 1.0f;
        img[at + 1] = 1.0f;
        img[at + 2] = 0.2f;
      }
    }
    return img;
  }

 private:
  void place_agent() {
    const uint64_t s = derive_seed(seed_, rng_domain::kEpisodeStart, static_cast<uint64_t>(episode_));
    x_ = static_cast<int>(splitmix64(s) % spec_.grid_size);
    y_ = static_cast<int>(splitmix64(s + 1) % spec_.grid_size);
  }

  DarkroomSpec spec_;
  uint64_t seed_ = 0;
  int goal_x_ = 0, goal_y_ = 0;
  int x_ = 0, y_ = 0;
  int episode_ = 0, step_ = 0;
};

// Fixed set of workers, each owning one trial. Per-worker trial seeds depend
// only on (base seed, worker index, rollout index), so trajectories do not
// change with worker count or scheduling.
class VectorEnv {
 public:
  VectorEnv(const DarkroomSpec& spec, int workers) : spec_(spec), envs_(workers) {}

  void reset_trials(uint64_t base_seed, int64_t rollout_index) {
    for (int w = 0; w < static_cast<int>(envs_.size()); ++w)
      envs_[w] = TrialEnv(
          spec_, derive_seed(base_seed, rng_domain::kTrial, static_cast<uint64_t>(w),
                             static_cast<uint64_t>(rollout_index)));
  }

  int size() const { return static_cast<int>(envs_.size()); }
  TrialEnv& worker(int i) { return envs_[i]; }
  const TrialEnv& worker(int i) const { return envs_[i]; }

  std::vector<StepResult> step_all(const std::vector<int>& actions) {
    check(actions.size() == envs_.size(), "env/worker_count", "one action per worker");
    std::vector<StepResult> out(envs_.size());
    for (size_t w = 0; w < envs_.size(); ++w) out[w] = envs_[w].step(actions[w]);
    return out;
  }

 private:
  DarkroomSpec spec_;
  std::vector<TrialEnv> envs_;
};

// Line-delimited trajectory record, shared by the demo tooling and debugging.
inline void dump_trajectory_record(std::ostream& os, int episode, int step,
                                   const std::vector<float>& obs, int action, float reward,
                                   bool done) {
  nlohmann::ordered_json j{{"episode", episode}, {"step", step},      {"obs", obs},
                           {"action", action},   {"reward", reward},  {"done", done}};
  os << j.dump() << "\n";
}

}  // namespace relic
