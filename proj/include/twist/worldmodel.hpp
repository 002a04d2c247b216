#ifndef TWIST_WORLDMODEL_HPP_
#define TWIST_WORLDMODEL_HPP_

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

#include "twist/checkpoint.hpp"
#include "twist/distributions.hpp"
#include "twist/nets.hpp"

namespace twist {

enum class Role { teacher, student };
enum class Modality { state, image };

// Latent sampling mode: training uses one-hot straight-through samples;
// probability vectors give a fully smooth path for finite-difference checks.
enum class LatentMode { sample, probs };

// What the decoder reconstructs: its own input stream, or the privileged
// state vector (the state-reconstruction baseline arm).
enum class DecoderTarget { input, state };

struct WorldModelSpec {
  Role role = Role::teacher;
  Modality modality = Modality::state;
  int state_dim = 8;
  int action_dim = 2;
  int groups = 8;
  int classes = 8;
  int deter = 128;
  int embed = 128;
  int hidden = 128;
  std::vector<int> state_layers = {256, 256, 256};
  int img_size = 32;
  std::vector<int> conv_channels = {16, 32, 64, 128};
  DecoderTarget decoder_target = DecoderTarget::input;

  int z_flat() const { return groups * classes; }
  int feat() const { return deter + z_flat(); }
  int x_dim() const {
    return modality == Modality::state ? state_dim : img_size * img_size * 3;
  }
  int decoder_dim() const {
    return decoder_target == DecoderTarget::state ? state_dim : x_dim();
  }
  int conv_final_size() const {
    return img_size >> static_cast<int>(conv_channels.size());
  }

  void validate() const {
    require(groups >= 1 && classes >= 2, ErrorKind::config,
            "WorldModelSpec: need G >= 1 and K >= 2");
    require(deter > 0 && embed > 0 && hidden > 0, ErrorKind::config,
            "WorldModelSpec: widths must be positive");
    if (modality == Modality::image) {
      int f = img_size;
      for (size_t i = 0; i < conv_channels.size(); ++i) {
        require(f % 2 == 0, ErrorKind::config,
                "WorldModelSpec: image size not divisible by conv stack");
        f /= 2;
      }
      require(f >= 1, ErrorKind::config,
              "WorldModelSpec: conv stack deeper than image");
    }
  }

  nlohmann::json to_json() const;
  static WorldModelSpec from_json(const nlohmann::json& j);
};

// Concrete latent state values (off-tape), used for environment interaction.
template <typename S>
struct RssmState {
  Mat<S> h;         // [B, deter]
  Mat<S> z;         // [B, G*K], one-hot blocks (zero at sequence starts)
  Mat<S> z_logits;  // [B, G*K]
};

// On-tape observation pass: everything Eq. 2 and the distillation losses
// need. Row layout of the *_all matrices is t-major: rows [t*B, (t+1)*B).
template <typename S>
struct ObserveOut {
  int L = 0, B = 0;
  std::vector<Var<S>> h;            // per step [B, deter]
  std::vector<Var<S>> z;            // per step [B, G*K]
  std::vector<Var<S>> post_logits;  // per step [B, G*K]
  Var<S> h_all;                     // [L*B, deter]
  Var<S> z_all;                     // [L*B, G*K]
  Var<S> post_all;                  // [L*B, G*K]
  Var<S> prior_all;                 // [L*B, G*K]
};

// On-tape imagined rollout of horizon H from given start latents.
template <typename S>
struct ImaginedRollout {
  int H = 0, B = 0;
  std::vector<Var<S>> h;             // per step [B, deter]
  std::vector<Var<S>> z;             // prior samples
  std::vector<Var<S>> prior_logits;  // per step
  std::vector<Var<S>> actions;       // per step [B, A], clipped
  std::vector<Var<S>> entropy;       // per step [B, 1] (policy rollouts only)
  std::vector<Mat<S>> actions_pre_clip;  // values, for noise diagnostics
  Var<S> h_all, prior_all, feat_all;     // [H*B, ...]
  Var<S> reward_all;                     // [H*B, 1]
};

// Policy hook used by imagine(): returns a squashed action and its entropy
// for the given feature rows. Sampling strategy is baked into the closure.
template <typename S>
struct PolicyStep {
  Var<S> action;
  Var<S> entropy;
};
template <typename S>
using PolicyFn = std::function<PolicyStep<S>(Tape<S>&, Var<S> feat)>;

struct WmLossConfig {
  double beta = 1.0;
  double kl_balance = 0.8;  // weight on the prior-training direction
  bool balanced = true;     // false: plain beta-KL
};

template <typename S>
struct WmLossOut {
  Var<S> total;
  double recon_nll = 0.0;
  double reward_nll = 0.0;
  double kl = 0.0;  // unbalanced KL value in nats (per step per sample)
};

// The RSSM with its five heads, instantiable as a state-input teacher or an
// image-input student. All graph builders live on a caller-provided tape.
template <typename S>
class WorldModel {
 public:
  WorldModel(WorldModelSpec spec, uint64_t init_seed) : spec_(spec) {
    spec_.validate();
    Rng rng(init_seed);
    if (spec_.modality == Modality::state) {
      MlpSpec enc = state_stack(spec_.state_dim, spec_.embed);
      enc.final_elu = true;
      mlp_init(params_, "wm/enc", enc, rng);
    } else {
      int c_in = 3, f = spec_.img_size;
      for (size_t i = 0; i < spec_.conv_channels.size(); ++i) {
        ConvGeom g{f, f, c_in, spec_.conv_channels[i]};
        params_.add("wm/enc/conv" + std::to_string(i) + "/W",
                    glorot_uniform<S>(g.patch(), g.out_c, rng));
        params_.add("wm/enc/conv" + std::to_string(i) + "/b",
                    Mat<S>::Zero(1, g.out_c));
        c_in = spec_.conv_channels[i];
        f /= 2;
      }
      int flat = f * f * c_in;
      params_.add("wm/enc/dense/W", glorot_uniform<S>(flat, spec_.embed, rng));
      params_.add("wm/enc/dense/b", Mat<S>::Zero(1, spec_.embed));
    }
    mlp_init(params_, "wm/za",
             MlpSpec{{spec_.z_flat() + spec_.action_dim, spec_.deter}, true},
             rng);
    gru_init(params_, "wm/gru", spec_.deter, spec_.deter, rng);
    mlp_init(params_, "wm/post",
             MlpSpec{{spec_.deter + spec_.embed, spec_.hidden, spec_.z_flat()},
                     false},
             rng);
    mlp_init(params_, "wm/prior",
             MlpSpec{{spec_.deter, spec_.hidden, spec_.z_flat()}, false}, rng);
    mlp_init(params_, "wm/reward",
             MlpSpec{{spec_.feat(), spec_.hidden, 1}, false}, rng);
    if (spec_.modality == Modality::state ||
        spec_.decoder_target == DecoderTarget::state) {
      mlp_init(params_, "wm/dec",
               state_stack(spec_.feat(), spec_.decoder_dim()), rng);
    } else {
      int f = spec_.conv_final_size();
      int cn = spec_.conv_channels.back();
      params_.add("wm/dec/dense/W",
                  glorot_uniform<S>(spec_.feat(), f * f * cn, rng));
      params_.add("wm/dec/dense/b", Mat<S>::Zero(1, f * f * cn));
      int c_in = cn;
      for (int i = static_cast<int>(spec_.conv_channels.size()) - 1; i >= 0;
           --i) {
        int c_out = i > 0 ? spec_.conv_channels[i - 1] : 3;
        params_.add("wm/dec/tconv" + std::to_string(i) + "/W",
                    glorot_uniform<S>(c_in, 16 * c_out, rng));
        params_.add("wm/dec/tconv" + std::to_string(i) + "/b",
                    Mat<S>::Zero(1, c_out));
        c_in = c_out;
      }
    }
  }

  const WorldModelSpec& spec() const { return spec_; }
  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }

  void freeze() { params_.freeze_all(); }

  // Encoder over stacked inputs [N, x_dim] -> [N, embed]. Image inputs are
  // expected already scaled to [-0.5, 0.5].
  Var<S> encode(Tape<S>& t, Var<S> x, bool trainable = true) {
    if (spec_.modality == Modality::state) {
      require(x.cols() == spec_.state_dim, ErrorKind::modality,
              "encode: state model fed input of width " +
                  std::to_string(x.cols()));
      MlpSpec enc = state_stack(spec_.state_dim, spec_.embed);
      enc.final_elu = true;
      return mlp_apply(enc, params_, "wm/enc", x, trainable);
    }
    require(x.cols() == spec_.x_dim(), ErrorKind::modality,
            "encode: image model fed input of width " +
                std::to_string(x.cols()));
    int c_in = 3, f = spec_.img_size;
    Var<S> hcur = x;
    for (size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      ConvGeom g{f, f, c_in, spec_.conv_channels[i]};
      hcur = elu(conv2d(hcur,
                        t.param(params_.at("wm/enc/conv" + std::to_string(i) +
                                           "/W"),
                                trainable),
                        t.param(params_.at("wm/enc/conv" + std::to_string(i) +
                                           "/b"),
                                trainable),
                        g));
      c_in = spec_.conv_channels[i];
      f /= 2;
    }
    return elu(add(matmul(hcur, t.param(params_.at("wm/enc/dense/W"), trainable)),
                   t.param(params_.at("wm/enc/dense/b"), trainable)));
  }

  // Decoder from features [N, feat] to the reconstruction target mean.
  Var<S> decode(Tape<S>& t, Var<S> feat, bool trainable = true) {
    if (spec_.modality == Modality::state ||
        spec_.decoder_target == DecoderTarget::state)
      return mlp_apply(state_stack(spec_.feat(), spec_.decoder_dim()), params_,
                       "wm/dec", feat, trainable);
    int f = spec_.conv_final_size();
    int c_in = spec_.conv_channels.back();
    Var<S> hcur = elu(
        add(matmul(feat, t.param(params_.at("wm/dec/dense/W"), trainable)),
            t.param(params_.at("wm/dec/dense/b"), trainable)));
    for (int i = static_cast<int>(spec_.conv_channels.size()) - 1; i >= 0;
         --i) {
      int c_out = i > 0 ? spec_.conv_channels[i - 1] : 3;
      TConvGeom g{f, f, c_in, c_out};
      hcur = conv2d_transpose(
          hcur,
          t.param(params_.at("wm/dec/tconv" + std::to_string(i) + "/W"),
                  trainable),
          t.param(params_.at("wm/dec/tconv" + std::to_string(i) + "/b"),
                  trainable),
          g);
      if (i > 0) hcur = elu(hcur);
      c_in = c_out;
      f *= 2;
    }
    return hcur;
  }

  RssmState<S> initial_state(int batch) const {
    RssmState<S> st;
    st.h = Mat<S>::Zero(batch, spec_.deter);
    st.z = Mat<S>::Zero(batch, spec_.z_flat());
    st.z_logits = Mat<S>::Zero(batch, spec_.z_flat());
    return st;
  }

  // One sequence-model transition: h_t = f(h_{t-1}, z_{t-1}, a_{t-1}).
  Var<S> sequence_step(Tape<S>& /*tape*/, Var<S> h_prev, Var<S> z_prev, Var<S> a_prev,
                       bool trainable) {
    Var<S> za = mlp_apply(
        MlpSpec{{spec_.z_flat() + spec_.action_dim, spec_.deter}, true},
        params_, "wm/za", concat_cols(z_prev, a_prev), trainable);
    return gru_step(params_, "wm/gru", h_prev, za, trainable);
  }

  Var<S> prior_head(Tape<S>& t, Var<S> h, bool trainable) {
    (void)t;
    return mlp_apply(MlpSpec{{spec_.deter, spec_.hidden, spec_.z_flat()}, false},
                     params_, "wm/prior", h, trainable);
  }

  Var<S> posterior_head(Tape<S>& t, Var<S> h, Var<S> embed, bool trainable) {
    (void)t;
    return mlp_apply(
        MlpSpec{{spec_.deter + spec_.embed, spec_.hidden, spec_.z_flat()},
                false},
        params_, "wm/post", concat_cols(h, embed), trainable);
  }

  Var<S> reward_head(Tape<S>& t, Var<S> feat, bool trainable) {
    (void)t;
    return mlp_apply(MlpSpec{{spec_.feat(), spec_.hidden, 1}, false}, params_,
                     "wm/reward", feat, trainable);
  }

  Var<S> latent_draw(Var<S> logits, LatentMode mode, Rng& rng) {
    if (mode == LatentMode::sample)
      return sample_straight_through(logits, spec_.classes, rng);
    return softmax_groups(logits, spec_.classes);
  }

  // Filtering pass over a subtrajectory. xs and prev_actions are stacked
  // t-major: rows [t*B, (t+1)*B). prev_actions row t holds a_{t-1} (zero at
  // true sequence starts). Prior logits at step t are a function of h_t only
  // and never see x_t.
  ObserveOut<S> observe(Tape<S>& t, const Mat<S>& xs,
                        const Mat<S>& prev_actions, int L,
                        const RssmState<S>& init, Rng& rng, LatentMode mode,
                        bool trainable) {
    require(L >= 1, ErrorKind::dimension, "observe: need L >= 1");
    require(xs.rows() % L == 0, ErrorKind::dimension,
            "observe: stacked rows not divisible by L");
    const int B = static_cast<int>(xs.rows()) / L;
    require(prev_actions.rows() == xs.rows() &&
                prev_actions.cols() == spec_.action_dim,
            ErrorKind::dimension, "observe: action stack shape mismatch");

    ObserveOut<S> out;
    out.L = L;
    out.B = B;
    Var<S> embeds = encode(t, t.constant(xs), trainable);
    Var<S> acts = t.constant(prev_actions);
    Var<S> h = t.constant(init.h);
    Var<S> z = t.constant(init.z);
    for (int step = 0; step < L; ++step) {
      Var<S> a_prev = slice_rows(acts, step * B, B);
      h = sequence_step(t, h, z, a_prev, trainable);
      Var<S> embed_t = slice_rows(embeds, step * B, B);
      Var<S> post = posterior_head(t, h, embed_t, trainable);
      z = latent_draw(post, mode, rng);
      out.h.push_back(h);
      out.z.push_back(z);
      out.post_logits.push_back(post);
    }
    out.h_all = concat_rows(out.h);
    out.z_all = concat_rows(out.z);
    out.post_all = concat_rows(out.post_logits);
    out.prior_all = prior_head(t, out.h_all, trainable);
    return out;
  }

  // Eq. 2: reconstruction NLL + reward NLL + beta * KL(posterior || prior),
  // averaged per step per sample. KL balancing mixes the two stop-gradient
  // directions at kl_balance toward training the prior.
  WmLossOut<S> loss(Tape<S>& t, const ObserveOut<S>& obs,
                    const Mat<S>& target_x, const Mat<S>& target_r,
                    const WmLossConfig& cfg, bool trainable = true) {
    require(target_x.rows() == obs.h_all.rows() &&
                target_x.cols() == spec_.decoder_dim(),
            ErrorKind::dimension, "wm loss: target stack shape mismatch");
    require(target_r.rows() == obs.h_all.rows() && target_r.cols() == 1,
            ErrorKind::dimension, "wm loss: reward stack shape mismatch");
    Var<S> feat = concat_cols(obs.h_all, obs.z_all);
    Var<S> recon =
        neg(mean(gaussian_log_prob_unit(decode(t, feat, trainable),
                                        t.constant(target_x))));
    Var<S> reward = neg(mean(gaussian_log_prob_unit(
        reward_head(t, feat, trainable), t.constant(target_r))));
    const Eigen::Index k = spec_.classes;
    Var<S> kl_plain = mean(kl_grouped(obs.post_all, obs.prior_all, k));
    Var<S> kl_term = kl_plain;
    if (cfg.balanced) {
      Var<S> kl_prior =
          mean(kl_grouped(stop_grad(obs.post_all), obs.prior_all, k));
      Var<S> kl_post =
          mean(kl_grouped(obs.post_all, stop_grad(obs.prior_all), k));
      kl_term = add(mul(kl_prior, t.scalar(static_cast<S>(cfg.kl_balance))),
                    mul(kl_post, t.scalar(static_cast<S>(1.0 - cfg.kl_balance))));
    }
    WmLossOut<S> out;
    out.total = add(add(recon, reward),
                    mul(kl_term, t.scalar(static_cast<S>(cfg.beta))));
    require(std::isfinite(static_cast<double>(out.total.scalar())),
            ErrorKind::divergence, "wm loss: non-finite loss");
    out.recon_nll = static_cast<double>(recon.scalar());
    out.reward_nll = static_cast<double>(reward.scalar());
    out.kl = static_cast<double>(kl_plain.scalar());
    return out;
  }

  // Imagined rollout of horizon H starting from the given latents (which may
  // be attached to the surrounding graph). Actions come from the policy; an
  // optional exploration noise is added before clipping to the action box.
  // No observation enters anywhere past the starts. latent_rng drives prior
  // sampling only, so aligned seeds align prior draws across models.
  ImaginedRollout<S> imagine(Tape<S>& t, Var<S> h0, Var<S> z0,
                             const PolicyFn<S>& policy, int horizon,
                             S noise_std, Rng& latent_rng, Rng& noise_rng,
                             LatentMode mode, bool trainable) {
    require(horizon >= 1, ErrorKind::dimension, "imagine: need H >= 1");
    ImaginedRollout<S> out;
    out.H = horizon;
    out.B = static_cast<int>(h0.rows());
    Var<S> h = h0, z = z0;
    for (int i = 0; i < horizon; ++i) {
      PolicyStep<S> ps = policy(t, concat_cols(h, z));
      Var<S> a = ps.action;
      if (noise_std > S(0)) {
        Mat<S> eps(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < eps.rows(); ++r)
          for (Eigen::Index c = 0; c < eps.cols(); ++c)
            eps(r, c) = noise_std * static_cast<S>(noise_rng.normal());
        out.actions_pre_clip.push_back(a.value() + eps);
        a = clamp(add(a, t.constant(eps)), S(-1), S(1));
      } else {
        out.actions_pre_clip.push_back(a.value());
      }
      h = sequence_step(t, h, z, a, trainable);
      Var<S> prior = prior_head(t, h, trainable);
      z = latent_draw(prior, mode, latent_rng);
      out.h.push_back(h);
      out.z.push_back(z);
      out.prior_logits.push_back(prior);
      out.actions.push_back(a);
      out.entropy.push_back(ps.entropy);
    }
    finish_rollout(t, out, trainable);
    return out;
  }

  // Same transition loop with a given action sequence: the student branch of
  // the imagined distillation (Alg. 1's replay of A^teacher).
  ImaginedRollout<S> imagine_replay(Tape<S>& t, Var<S> h0, Var<S> z0,
                                    const std::vector<Mat<S>>& actions,
                                    Rng& latent_rng, LatentMode mode,
                                    bool trainable) {
    require(!actions.empty(), ErrorKind::dimension,
            "imagine_replay: empty action sequence");
    ImaginedRollout<S> out;
    out.H = static_cast<int>(actions.size());
    out.B = static_cast<int>(h0.rows());
    Var<S> h = h0, z = z0;
    for (const Mat<S>& a_val : actions) {
      require(a_val.rows() == h0.rows() && a_val.cols() == spec_.action_dim,
              ErrorKind::dimension, "imagine_replay: action shape mismatch");
      Var<S> a = t.constant(a_val);
      h = sequence_step(t, h, z, a, trainable);
      Var<S> prior = prior_head(t, h, trainable);
      z = latent_draw(prior, mode, latent_rng);
      out.h.push_back(h);
      out.z.push_back(z);
      out.prior_logits.push_back(prior);
      out.actions.push_back(a);
      out.actions_pre_clip.push_back(a_val);
    }
    finish_rollout(t, out, trainable);
    return out;
  }

  // Forward-only filtering step for environment interaction.
  RssmState<S> observe_step(const RssmState<S>& prev, const Mat<S>& x,
                            const Mat<S>& prev_action, Rng& rng) {
    Tape<S> t;
    Var<S> h = sequence_step(t, t.constant(prev.h), t.constant(prev.z),
                             t.constant(prev_action), false);
    Var<S> embed = encode(t, t.constant(x), false);
    Var<S> post = posterior_head(t, h, embed, false);
    Var<S> z = latent_draw(post, LatentMode::sample, rng);
    RssmState<S> out;
    out.h = h.value();
    out.z = z.value();
    out.z_logits = post.value();
    return out;
  }

  void save(const std::string& path,
            const std::vector<const ParameterSet<S>*>& extra_sets = {}) const
    requires std::is_same_v<S, float>
  {
    std::vector<const ParameterSet<float>*> sets = {&params_};
    for (const auto* s : extra_sets) sets.push_back(s);
    save_checkpoint(path, sets, spec_.to_json());
  }

  // Validates the stored spec block against the constructed model.
  nlohmann::json load(const std::string& path)
    requires std::is_same_v<S, float>
  {
    nlohmann::json j = load_checkpoint_into(params_, path);
    WorldModelSpec file_spec = WorldModelSpec::from_json(j);
    require(file_spec.groups == spec_.groups &&
                file_spec.classes == spec_.classes &&
                file_spec.deter == spec_.deter &&
                file_spec.modality == spec_.modality &&
                file_spec.img_size == spec_.img_size,
            ErrorKind::config,
            path + ": checkpoint spec does not match the constructed model");
    return j;
  }

 private:
  MlpSpec state_stack(int in, int out) const {
    MlpSpec spec;
    spec.widths.push_back(in);
    for (int w : spec_.state_layers) spec.widths.push_back(w);
    spec.widths.push_back(out);
    return spec;
  }

  void finish_rollout(Tape<S>& t, ImaginedRollout<S>& out, bool trainable) {
    out.h_all = concat_rows(out.h);
    out.prior_all = concat_rows(out.prior_logits);
    out.feat_all = concat_cols(out.h_all, concat_rows(out.z));
    out.reward_all = reward_head(t, out.feat_all, trainable);
  }

  WorldModelSpec spec_;
  ParameterSet<S> params_;
};

// Teacher and student must agree on the latent geometry for every
// distillation term to be well-typed.
inline void check_latent_compatibility(const WorldModelSpec& teacher,
                                       const WorldModelSpec& student) {
  require(teacher.groups == student.groups &&
              teacher.classes == student.classes &&
              teacher.deter == student.deter,
          ErrorKind::config,
          "teacher and student must share (G, K, deterministic width)");
}

inline nlohmann::json WorldModelSpec::to_json() const {
  return {{"role", role == Role::teacher ? "teacher" : "student"},
          {"modality", modality == Modality::state ? "state" : "image"},
          {"state_dim", state_dim},
          {"action_dim", action_dim},
          {"groups", groups},
          {"classes", classes},
          {"deter", deter},
          {"embed", embed},
          {"hidden", hidden},
          {"state_layers", state_layers},
          {"img_size", img_size},
          {"conv_channels", conv_channels},
          {"decoder_target",
           decoder_target == DecoderTarget::input ? "input" : "state"}};
}

inline WorldModelSpec WorldModelSpec::from_json(const nlohmann::json& j) {
  WorldModelSpec s;
  s.role = j.at("role") == "teacher" ? Role::teacher : Role::student;
  s.modality = j.at("modality") == "state" ? Modality::state : Modality::image;
  s.state_dim = j.at("state_dim");
  s.action_dim = j.at("action_dim");
  s.groups = j.at("groups");
  s.classes = j.at("classes");
  s.deter = j.at("deter");
  s.embed = j.at("embed");
  s.hidden = j.at("hidden");
  s.state_layers = j.at("state_layers").get<std::vector<int>>();
  s.img_size = j.at("img_size");
  s.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  s.decoder_target =
      j.at("decoder_target") == "input" ? DecoderTarget::input
                                        : DecoderTarget::state;
  return s;
}

}  // namespace twist

#endif  // TWIST_WORLDMODEL_HPP_
