#ifndef TWIST_DATASET_HPP_
#define TWIST_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "twist/common.hpp"
#include "twist/env.hpp"

namespace twist {

// One episode of the matched dataset: per-step tuples of privileged state,
// rendered observation, action, reward, and the visual-randomization trace.
struct EpisodeRecord {
  MatF states;                        // T x state_dim
  std::vector<uint8_t> observations;  // T * obs_h * obs_w * 3, HWC
  int obs_h = 0, obs_w = 0;
  MatF actions;                       // T x action_dim
  Eigen::VectorXf rewards;            // T
  std::vector<DrParams> dr_trace;     // T
  uint64_t episode_seed = 0;

  int length() const { return static_cast<int>(states.rows()); }
  void validate() const;
};

// Contiguous slice of one episode; never crosses episode boundaries.
struct SubTrajectory {
  int episode = 0;
  int start = 0;
  int length = 0;
};

// Append-only episode container with uniform subtrajectory sampling and
// bit-exact persistence (TWDS format). Single writer during collection; safe
// for concurrent read-only sampling afterwards with caller-owned generators.
class EpisodeStore {
 public:
  void append_episode(EpisodeRecord ep);

  size_t size() const { return episodes_.size(); }
  int64_t total_steps() const;
  const EpisodeRecord& episode(size_t i) const { return episodes_[i]; }

  // Uniform over all valid (episode, start) pairs; deterministic given the
  // generator state.
  std::vector<SubTrajectory> sample_subtrajectories(int length, int batch,
                                                    Rng& rng) const;

  void save(const std::string& path) const;
  static EpisodeStore load(const std::string& path);

 private:
  std::vector<EpisodeRecord> episodes_;
};

}  // namespace twist

#endif  // TWIST_DATASET_HPP_
