#ifndef TWIST_DISTILL_HPP_
#define TWIST_DISTILL_HPP_

#include <string>
#include <vector>

#include "twist/agent.hpp"
#include "twist/dataset.hpp"
#include "twist/worldmodel.hpp"

namespace twist {

struct DistillConfig {
  int L = 50;
  int H = 15;
  float action_noise_std = 0.3f;
  float w_h = 1.0f;
  float w_prior = 1.0f;
  float w_post = 1.0f;
  float w_imag = 1.0f;
  int steps = 20000;
  int batch = 16;
  int imag_start_stride = 1;  // every stride-th posterior state seeds a rollout
  bool kl_reverse = false;    // ablation-only: KL[teacher || student]
  bool imag_policy_sample = true;
  bool no_imagined = false;   // ablation arm: drop Eq. 4 entirely
  bool no_noise = false;      // ablation arm: no action noise in imagination
  bool train_reward_head = false;
  bool aux_recon = false;
  float aux_recon_weight = 0.1f;
  double lr = 3e-4;
  double clip = 100.0;

  void validate() const {
    require(L >= 1 && H >= 1, ErrorKind::config, "distill: L and H must be >= 1");
    require(w_h >= 0 && w_prior >= 0 && w_post >= 0 && w_imag >= 0,
            ErrorKind::config, "distill: loss weights must be >= 0");
    require(batch >= 1 && steps >= 0, ErrorKind::config,
            "distill: bad budget");
    require(imag_start_stride >= 1, ErrorKind::config,
            "distill: imag_start_stride must be >= 1");
  }
};

// Aligned teacher/student views of one sampled batch, stacked t-major.
template <typename S>
struct DistillBatch {
  Mat<S> teacher_x;     // [L*B, state_dim]
  Mat<S> student_x;     // [L*B, student x_dim]
  Mat<S> prev_actions;  // [L*B, A]; a_{t-1}, zero at episode starts
  Mat<S> rewards;       // [L*B, 1]
  int L = 0, B = 0;
};

inline MatF scale_image_rows(const uint8_t* pixels, Eigen::Index n) {
  MatF row(1, n);
  for (Eigen::Index i = 0; i < n; ++i)
    row(0, i) = static_cast<float>(pixels[i]) / 255.0f - 0.5f;
  return row;
}

// Materializes sampled subtrajectories into stacked matrices. The student
// side carries scaled image rows for image models and raw states for the
// synthetic state-input student used in tests.
inline DistillBatch<float> assemble_distill_batch(
    const EpisodeStore& store, const std::vector<SubTrajectory>& slices,
    const WorldModelSpec& teacher_spec, const WorldModelSpec& student_spec) {
  require(!slices.empty(), ErrorKind::data, "assemble_distill_batch: empty");
  const int L = slices[0].length;
  const int B = static_cast<int>(slices.size());
  DistillBatch<float> out;
  out.L = L;
  out.B = B;
  out.teacher_x.resize(L * B, teacher_spec.state_dim);
  out.student_x.resize(L * B, student_spec.x_dim());
  out.prev_actions.resize(L * B, teacher_spec.action_dim);
  out.rewards.resize(L * B, 1);
  for (int b = 0; b < B; ++b) {
    const SubTrajectory& sl = slices[b];
    const EpisodeRecord& ep = store.episode(sl.episode);
    require(sl.length == L, ErrorKind::dimension,
            "assemble_distill_batch: ragged slice lengths");
    const int img_px = ep.obs_h * ep.obs_w * 3;
    for (int t = 0; t < L; ++t) {
      const int src = sl.start + t;
      const int row = t * B + b;
      out.teacher_x.row(row) = ep.states.row(src);
      if (student_spec.modality == Modality::image) {
        require(img_px == student_spec.x_dim(), ErrorKind::dimension,
                "assemble_distill_batch: stored image size does not match "
                "the student spec");
        out.student_x.row(row) = scale_image_rows(
            ep.observations.data() + static_cast<size_t>(src) * img_px,
            img_px);
      } else {
        out.student_x.row(row) = ep.states.row(src);
      }
      if (src > 0)
        out.prev_actions.row(row) = ep.actions.row(src - 1);
      else
        out.prev_actions.row(row).setZero();
      out.rewards(row, 0) = ep.rewards(src);
    }
  }
  return out;
}

// Per-term values of one distillation loss evaluation (already weighted
// means/sums as logged to the metrics CSV).
struct DistillTerms {
  double h_data = 0.0;
  double prior_data = 0.0;
  double post_data = 0.0;
  double h_imag = 0.0;
  double prior_imag = 0.0;
  double l_distill = 0.0;
  double l_imagined = 0.0;
  double total = 0.0;
};

// Eq. 3 core: per-step squared h distance plus the two KL terms, summed over
// the window (mean over batch). Exposed separately so the arithmetic can be
// pinned by hand-built cases.
template <typename S>
Var<S> eq3_distill_terms(Tape<S>& t, int L, Var<S> h_teacher, Var<S> h_student,
                         Var<S> prior_teacher, Var<S> prior_student,
                         Var<S> post_teacher, Var<S> post_student,
                         Eigen::Index classes, float w_h, float w_prior,
                         float w_post, bool kl_reverse,
                         double* h_out = nullptr, double* prior_out = nullptr,
                         double* post_out = nullptr) {
  const S scale = static_cast<S>(L);  // sum over t == L * mean over rows
  Var<S> h_term =
      mul(mean(rowsum(square(sub(h_teacher, h_student)))), t.scalar(scale));
  Var<S> q_prior = kl_reverse ? prior_teacher : prior_student;
  Var<S> p_prior = kl_reverse ? prior_student : prior_teacher;
  Var<S> q_post = kl_reverse ? post_teacher : post_student;
  Var<S> p_post = kl_reverse ? post_student : post_teacher;
  Var<S> prior_term =
      mul(mean(kl_grouped(q_prior, p_prior, classes)), t.scalar(scale));
  Var<S> post_term =
      mul(mean(kl_grouped(q_post, p_post, classes)), t.scalar(scale));
  if (h_out) *h_out = static_cast<double>(h_term.scalar());
  if (prior_out) *prior_out = static_cast<double>(prior_term.scalar());
  if (post_out) *post_out = static_cast<double>(post_term.scalar());
  return add(add(mul(h_term, t.scalar(static_cast<S>(w_h))),
                 mul(prior_term, t.scalar(static_cast<S>(w_prior)))),
             mul(post_term, t.scalar(static_cast<S>(w_post))));
}

template <typename S>
struct DistillLossOut {
  Var<S> total;
  DistillTerms terms;
};

// Builds L_distill (+ L_imagined unless disabled) on one tape. The teacher
// runs frozen; gradients flow only into the student. Posterior sampling uses
// a shared latent seed on both sides (common random numbers), so an exact
// parameter copy of the teacher yields exactly zero loss.
template <typename S>
DistillLossOut<S> build_distill_loss(Tape<S>& t, WorldModel<S>& teacher,
                                     WorldModel<S>& student,
                                     ParameterSet<S>& actor_ps,
                                     const AgentSpec& aspec,
                                     const DistillBatch<S>& batch,
                                     const DistillConfig& cfg,
                                     uint64_t step_seed,
                                     LatentMode mode = LatentMode::sample) {
  cfg.validate();
  check_latent_compatibility(teacher.spec(), student.spec());
  for (const auto& p : teacher.params())
    require(p->frozen, ErrorKind::contract,
            "distill: teacher parameter " + p->name +
                " is not frozen (contract violation)");

  const int L = batch.L, B = batch.B;
  Rng obs_rng_t(Rng::mix(step_seed, 101));
  Rng obs_rng_s(Rng::mix(step_seed, 101));  // aligned draws across models
  auto obs_t = teacher.observe(t, batch.teacher_x, batch.prev_actions, L,
                               teacher.initial_state(B), obs_rng_t, mode,
                               false);
  auto obs_s = student.observe(t, batch.student_x, batch.prev_actions, L,
                               student.initial_state(B), obs_rng_s, mode,
                               true);

  DistillLossOut<S> out;
  Var<S> l_distill = eq3_distill_terms(
      t, L, obs_t.h_all, obs_s.h_all, obs_t.prior_all, obs_s.prior_all,
      obs_t.post_all, obs_s.post_all, teacher.spec().classes, cfg.w_h,
      cfg.w_prior, cfg.w_post, cfg.kl_reverse, &out.terms.h_data,
      &out.terms.prior_data, &out.terms.post_data);
  out.terms.l_distill = static_cast<double>(l_distill.scalar());
  Var<S> total = l_distill;

  const bool imagined = !cfg.no_imagined && cfg.w_imag > 0.0f;
  if (imagined) {
    // every stride-th posterior state seeds one imagined rollout
    std::vector<Var<S>> ht0, zt0, hs0, zs0;
    for (int step = 0; step < L; step += cfg.imag_start_stride) {
      ht0.push_back(obs_t.h[step]);
      zt0.push_back(obs_t.z[step]);
      hs0.push_back(obs_s.h[step]);
      zs0.push_back(obs_s.z[step]);
    }
    Rng lat_t(Rng::mix(step_seed, 201));
    Rng lat_s(Rng::mix(step_seed, 201));  // aligned prior draws
    Rng noise_rng(Rng::mix(step_seed, 202));
    Rng policy_rng(Rng::mix(step_seed, 203));
    PolicyFn<S> policy = [&](Tape<S>& tp, Var<S> feat) {
      return cfg.imag_policy_sample
                 ? policy_sample(tp, actor_ps, aspec, feat, policy_rng, false)
                 : policy_mean(tp, actor_ps, aspec, feat, false);
    };
    S noise = cfg.no_noise ? S(0) : static_cast<S>(cfg.action_noise_std);
    auto roll_t = teacher.imagine(t, concat_rows(ht0), concat_rows(zt0),
                                  policy, cfg.H, noise, lat_t, noise_rng, mode,
                                  false);
    // the student replays exactly the teacher's action sequence
    std::vector<Mat<S>> actions;
    actions.reserve(roll_t.actions.size());
    for (const auto& a : roll_t.actions) actions.push_back(a.value());
    auto roll_s = student.imagine_replay(t, concat_rows(hs0), concat_rows(zs0),
                                         actions, lat_s, mode, true);

    const S scale = static_cast<S>(cfg.H);
    Var<S> h_term = mul(mean(rowsum(square(sub(roll_t.h_all, roll_s.h_all)))),
                        t.scalar(scale));
    Var<S> q = cfg.kl_reverse ? roll_t.prior_all : roll_s.prior_all;
    Var<S> p = cfg.kl_reverse ? roll_s.prior_all : roll_t.prior_all;
    Var<S> prior_term =
        mul(mean(kl_grouped(q, p, teacher.spec().classes)), t.scalar(scale));
    out.terms.h_imag = static_cast<double>(h_term.scalar());
    out.terms.prior_imag = static_cast<double>(prior_term.scalar());
    Var<S> l_imag = mul(add(h_term, prior_term),
                        t.scalar(static_cast<S>(cfg.w_imag)));
    out.terms.l_imagined = static_cast<double>(l_imag.scalar());
    total = add(total, l_imag);
  }

  if (cfg.train_reward_head) {
    Var<S> feat = concat_cols(obs_s.h_all, obs_s.z_all);
    Var<S> nll = neg(mean(gaussian_log_prob_unit(
        student.reward_head(t, feat, true), t.constant(batch.rewards))));
    total = add(total, nll);
  }
  if (cfg.aux_recon) {
    Var<S> feat = concat_cols(obs_s.h_all, obs_s.z_all);
    Var<S> nll = neg(mean(gaussian_log_prob_unit(
        student.decode(t, feat, true), t.constant(batch.student_x))));
    total = add(total, mul(nll, t.scalar(static_cast<S>(cfg.aux_recon_weight))));
  }

  out.total = total;
  out.terms.total = static_cast<double>(total.scalar());
  require(std::isfinite(out.terms.total), ErrorKind::divergence,
          "distill: non-finite loss");
  return out;
}

// One Alg.-1 iteration: sample a batch, evaluate both losses, apply one Adam
// step to the student only. No environment interaction anywhere.
inline DistillTerms distill_step(WorldModel<float>& teacher,
                                 WorldModel<float>& student,
                                 ParameterSet<float>& actor_ps,
                                 const AgentSpec& aspec,
                                 const EpisodeStore& store,
                                 const DistillConfig& cfg, Adam<float>& opt,
                                 uint64_t run_seed, int step_index) {
  uint64_t step_seed = Rng::mix(run_seed, static_cast<uint64_t>(step_index));
  Rng sample_rng(Rng::mix(step_seed, 7));
  auto slices = store.sample_subtrajectories(cfg.L, cfg.batch, sample_rng);
  DistillBatch<float> batch =
      assemble_distill_batch(store, slices, teacher.spec(), student.spec());
  Tape<float> t;
  auto out = build_distill_loss(t, teacher, student, actor_ps, aspec, batch,
                                cfg, step_seed);
  t.backward(out.total);
  opt.step(student.params());
  student.params().zero_grads();
  return out.terms;
}

}  // namespace twist

#endif  // TWIST_DISTILL_HPP_
