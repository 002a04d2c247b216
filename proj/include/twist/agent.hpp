#ifndef TWIST_AGENT_HPP_
#define TWIST_AGENT_HPP_

#include <string>
#include <vector>

#include "twist/distributions.hpp"
#include "twist/nets.hpp"
#include "twist/worldmodel.hpp"

namespace twist {

enum class ActMode { sample, mean };

// Actor-critic over RSSM features concat(h, flatten(z)). The actor emits a
// tanh-squashed diagonal Gaussian; log_std is clamped to [-5, 2].
struct AgentSpec {
  int feat = 0;
  int action_dim = 0;
  std::vector<int> hidden = {128, 128};
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  MlpSpec actor_stack() const {
    MlpSpec s;
    s.widths.push_back(feat);
    for (int w : hidden) s.widths.push_back(w);
    s.widths.push_back(2 * action_dim);
    return s;
  }
  MlpSpec critic_stack() const {
    MlpSpec s;
    s.widths.push_back(feat);
    for (int w : hidden) s.widths.push_back(w);
    s.widths.push_back(1);
    return s;
  }
};

// Actor and critic live in separate parameter sets so each optimizer can
// only ever touch its own weights.
template <typename S>
void actor_init(ParameterSet<S>& ps, const AgentSpec& spec, Rng& rng) {
  mlp_init(ps, "actor", spec.actor_stack(), rng);
}

template <typename S>
void critic_init(ParameterSet<S>& ps, const AgentSpec& spec, Rng& rng) {
  mlp_init(ps, "critic", spec.critic_stack(), rng);
}

template <typename S>
struct PolicyDist {
  Var<S> mean;
  Var<S> log_std;
};

template <typename S>
PolicyDist<S> policy_dist(Tape<S>& t, ParameterSet<S>& ps,
                          const AgentSpec& spec, Var<S> feat,
                          bool trainable = true) {
  Var<S> out = mlp_apply(spec.actor_stack(), ps, "actor", feat, trainable);
  PolicyDist<S> d;
  d.mean = slice_cols(out, 0, spec.action_dim);
  d.log_std = clamp(slice_cols(out, spec.action_dim, spec.action_dim),
                    static_cast<S>(spec.log_std_min),
                    static_cast<S>(spec.log_std_max));
  (void)t;
  return d;
}

// Reparameterized squashed sample: tanh(mean + std * eps), eps drawn once.
template <typename S>
PolicyStep<S> policy_sample(Tape<S>& t, ParameterSet<S>& ps,
                            const AgentSpec& spec, Var<S> feat, Rng& rng,
                            bool trainable = true) {
  PolicyDist<S> d = policy_dist(t, ps, spec, feat, trainable);
  Mat<S> eps(d.mean.rows(), d.mean.cols());
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j)
      eps(i, j) = static_cast<S>(rng.normal());
  Var<S> u = add(d.mean, mul(exp(d.log_std), t.constant(eps)));
  return PolicyStep<S>{tanh(u), gaussian_entropy(d.log_std)};
}

template <typename S>
PolicyStep<S> policy_mean(Tape<S>& t, ParameterSet<S>& ps,
                          const AgentSpec& spec, Var<S> feat,
                          bool trainable = true) {
  PolicyDist<S> d = policy_dist(t, ps, spec, feat, trainable);
  return PolicyStep<S>{tanh(d.mean), gaussian_entropy(d.log_std)};
}

template <typename S>
Var<S> critic_value(Tape<S>& t, ParameterSet<S>& ps, const AgentSpec& spec,
                    Var<S> feat, bool trainable = true) {
  (void)t;
  return mlp_apply(spec.critic_stack(), ps, "critic", feat, trainable);
}

// Concrete action for environment interaction.
template <typename S>
Mat<S> act(ParameterSet<S>& ps, const AgentSpec& spec, const RssmState<S>& st,
           ActMode mode, Rng& rng) {
  Tape<S> t;
  Mat<S> feat(st.h.rows(), st.h.cols() + st.z.cols());
  feat << st.h, st.z;
  Var<S> fv = t.constant(feat);
  PolicyStep<S> step = mode == ActMode::sample
                           ? policy_sample(t, ps, spec, fv, rng, false)
                           : policy_mean(t, ps, spec, fv, false);
  return step.action.value();
}

// lambda-returns over plain sequences:
//   V[t] = r[t] + gamma * ((1-lambda) * v[t+1] + lambda * V[t+1])
// bootstrapped with v[H-1] at the horizon.
inline std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                          const std::vector<double>& values,
                                          double gamma, double lam) {
  require(rewards.size() == values.size(), ErrorKind::dimension,
          "lambda_returns: length mismatch");
  require(!rewards.empty(), ErrorKind::dimension, "lambda_returns: empty");
  const int h = static_cast<int>(rewards.size());
  std::vector<double> out(h);
  out[h - 1] = rewards[h - 1] + gamma * values[h - 1];
  for (int i = h - 2; i >= 0; --i)
    out[i] = rewards[i] + gamma * ((1.0 - lam) * values[i + 1] + lam * out[i + 1]);
  return out;
}

// Same recursion as on-tape column vectors [B,1] per step.
template <typename S>
std::vector<Var<S>> lambda_returns(Tape<S>& t, const std::vector<Var<S>>& rewards,
                                   const std::vector<Var<S>>& values, S gamma,
                                   S lam) {
  require(rewards.size() == values.size() && !rewards.empty(),
          ErrorKind::dimension, "lambda_returns: length mismatch");
  const int h = static_cast<int>(rewards.size());
  std::vector<Var<S>> out(h);
  out[h - 1] = add(rewards[h - 1], affine(values[h - 1], gamma, S(0)));
  for (int i = h - 2; i >= 0; --i) {
    Var<S> mix = add(affine(values[i + 1], gamma * (S(1) - lam), S(0)),
                     affine(out[i + 1], gamma * lam, S(0)));
    out[i] = add(rewards[i], mix);
  }
  (void)t;
  return out;
}

struct AcConfig {
  double gamma = 0.99;
  double lam = 0.95;
  double entropy_coef = 3e-4;
};

template <typename S>
struct AcLosses {
  Var<S> actor_loss;
  Var<S> critic_loss;
  double mean_return = 0.0;
};

// Actor: maximize lambda-returns along the rollout (pathwise, gradients flow
// through rewards, values and dynamics) plus an entropy bonus. Critic:
// regress stop-gradiented lambda-returns on stop-gradiented features so its
// update touches nothing else.
template <typename S>
AcLosses<S> actor_critic_losses(Tape<S>& t, ParameterSet<S>& critic_ps,
                                const AgentSpec& spec,
                                const ImaginedRollout<S>& roll,
                                const AcConfig& cfg) {
  const int h = roll.H, b = roll.B;
  std::vector<Var<S>> rewards(h), values(h);
  for (int i = 0; i < h; ++i) {
    rewards[i] = slice_rows(roll.reward_all, i * b, b);
    values[i] = critic_value(t, critic_ps, spec,
                             slice_rows(roll.feat_all, i * b, b), false);
  }
  std::vector<Var<S>> returns = lambda_returns(
      t, rewards, values, static_cast<S>(cfg.gamma), static_cast<S>(cfg.lam));
  Var<S> returns_all = concat_rows(returns);
  Var<S> entropy_all = concat_rows(roll.entropy);
  AcLosses<S> out;
  out.actor_loss = sub(neg(mean(returns_all)),
                       mul(mean(entropy_all),
                           t.scalar(static_cast<S>(cfg.entropy_coef))));
  Var<S> v_train = critic_value(t, critic_ps, spec, stop_grad(roll.feat_all));
  out.critic_loss = mean(square(sub(v_train, stop_grad(returns_all))));
  require(std::isfinite(static_cast<double>(out.actor_loss.scalar())) &&
              std::isfinite(static_cast<double>(out.critic_loss.scalar())),
          ErrorKind::divergence, "actor-critic: non-finite loss");
  out.mean_return = static_cast<double>(mean(returns_all).scalar());
  return out;
}

}  // namespace twist

#endif  // TWIST_AGENT_HPP_
