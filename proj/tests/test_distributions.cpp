#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "twist/distributions.hpp"
#include "twist/gradcheck.hpp"

using namespace twist;

namespace {

MatD random_logits(Eigen::Index r, Eigen::Index c, Rng& rng,
                   double scale = 2.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = rng.uniform(-scale, scale);
  return m;
}

// Direct-summation KL oracle for one row of grouped logits.
double kl_oracle(const MatD& q_logits, const MatD& p_logits, int k) {
  double total = 0.0;
  for (Eigen::Index g0 = 0; g0 < q_logits.cols(); g0 += k) {
    double qz = 0.0, pz = 0.0;
    for (int j = 0; j < k; ++j) {
      qz += std::exp(q_logits(0, g0 + j));
      pz += std::exp(p_logits(0, g0 + j));
    }
    for (int j = 0; j < k; ++j) {
      double q = std::exp(q_logits(0, g0 + j)) / qz;
      double p = std::exp(p_logits(0, g0 + j)) / pz;
      if (q > 0.0) total += q * (std::log(q) - std::log(p));
    }
  }
  return total;
}

}  // namespace

TEST_CASE("straight-through sample is certain for saturated logits") {
  Tape<float> t;
  MatF logits(1, 2);
  logits << 30.0f, -30.0f;
  Rng rng(0);
  for (int i = 0; i < 100; ++i) {
    Var<float> s = sample_straight_through(t.constant(logits), 2, rng);
    CHECK(s.value()(0, 0) == 1.0f);
    CHECK(s.value()(0, 1) == 0.0f);
  }
}

TEST_CASE("straight-through samples are exactly one-hot per group") {
  Rng rng(7);
  Tape<float> t;
  MatF logits = random_logits(16, 4 * 8, rng).cast<float>();
  Var<float> s = sample_straight_through(t.constant(logits), 8, rng);
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    for (Eigen::Index g0 = 0; g0 < s.cols(); g0 += 8) {
      int ones = 0;
      for (int j = 0; j < 8; ++j) {
        float v = s.value()(r, g0 + j);
        CHECK((v == 0.0f || v == 1.0f));
        if (v == 1.0f) ++ones;
      }
      CHECK(ones == 1);
    }
  }
}

TEST_CASE("seeded sampling frequencies match probabilities") {
  SUBCASE("uniform logits, G=1 K=4, 10000 draws near 0.25") {
    Rng rng(123);
    Tape<float> t;
    MatF logits = MatF::Zero(1, 4);
    Var<float> lv = t.constant(logits);
    std::vector<int> counts(4, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      Var<float> s = sample_straight_through(lv, 4, rng);
      for (int j = 0; j < 4; ++j)
        if (s.value()(0, j) == 1.0f) ++counts[j];
    }
    for (int j = 0; j < 4; ++j) {
      double freq = static_cast<double>(counts[j]) / n;
      CHECK(std::abs(freq - 0.25) < 0.02);
    }
  }

  SUBCASE("non-uniform probabilities within 3 standard errors") {
    Rng rng(9);
    MatD logits = random_logits(1, 6, rng);
    MatD probs = detail::softmax_groups_value(logits, 6);
    Tape<float> t;
    Var<float> lv = t.constant(logits.cast<float>());
    const int n = 10000;
    std::vector<int> counts(6, 0);
    Rng draw_rng(31);
    for (int i = 0; i < n; ++i) {
      Var<float> s = sample_straight_through(lv, 6, draw_rng);
      for (int j = 0; j < 6; ++j)
        if (s.value()(0, j) == 1.0f) ++counts[j];
    }
    for (int j = 0; j < 6; ++j) {
      double p = probs(0, j);
      double se = std::sqrt(p * (1 - p) / n);
      CHECK(std::abs(static_cast<double>(counts[j]) / n - p) <= 3.0 * se);
    }
  }
}

TEST_CASE("straight-through gradient equals the softmax gradient") {
  Rng rng(17);
  MatD logits = random_logits(2, 6, rng);
  MatD w = random_logits(2, 6, rng);

  Tape<double> t1;
  Var<double> l1 = t1.leaf(logits, true);
  Rng draw(5);
  Var<double> s = sample_straight_through(l1, 3, draw);
  t1.backward(sum(mul(s, t1.constant(w))));
  MatD g_st = t1.grad(l1);

  Tape<double> t2;
  Var<double> l2 = t2.leaf(logits, true);
  Var<double> p = softmax_groups(l2, 3);
  t2.backward(sum(mul(p, t2.constant(w))));
  MatD g_sm = t2.grad(l2);

  CHECK((g_st - g_sm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sampling rejects non-finite logits") {
  Tape<float> t;
  MatF logits(1, 2);
  logits << std::numeric_limits<float>::quiet_NaN(), 0.0f;
  Rng rng(1);
  try {
    sample_straight_through(t.constant(logits), 2, rng);
    FAIL("expected distribution error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::distribution);
  }
}

TEST_CASE("kl of identical distributions is zero") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    MatD logits = random_logits(1, 8 * 4, rng, 3.0);
    Tape<double> t;
    Var<double> q = t.constant(logits);
    Var<double> p = t.constant(logits);
    double kl = kl_grouped(q, p, 4).scalar();
    CHECK(std::abs(kl) < 1e-7);
  }
}

TEST_CASE("kl matches the direct-summation oracle") {
  // q uniform over 2 classes, p = (0.75, 0.25):
  // 0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25) = 0.143841...
  Tape<double> t;
  MatD ql = MatD::Zero(1, 2);
  MatD pl(1, 2);
  pl << std::log(0.75), std::log(0.25);
  double kl = kl_grouped(t.constant(ql), t.constant(pl), 2).scalar();
  CHECK(kl == doctest::Approx(0.143841).epsilon(1e-4));
  CHECK(kl == doctest::Approx(kl_oracle(ql, pl, 2)).epsilon(1e-10));
}

TEST_CASE("kl is additive over groups") {
  Rng rng(19);
  MatD ql = random_logits(1, 3 * 5, rng);
  MatD pl = random_logits(1, 3 * 5, rng);
  Tape<double> t;
  double total = kl_grouped(t.constant(ql), t.constant(pl), 5).scalar();
  double parts = 0.0;
  for (int g = 0; g < 3; ++g) {
    Tape<double> tg;
    parts += kl_grouped(tg.constant(ql.middleCols(5 * g, 5).eval()),
                        tg.constant(pl.middleCols(5 * g, 5).eval()), 5)
                 .scalar();
  }
  CHECK(std::abs(total - parts) < 1e-6);
}

TEST_CASE("kl is non-negative and shift-invariant on random inputs") {
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    MatD ql = random_logits(1, 2 * 6, rng, 4.0);
    MatD pl = random_logits(1, 2 * 6, rng, 4.0);
    Tape<double> t;
    double kl = kl_grouped(t.constant(ql), t.constant(pl), 6).scalar();
    CHECK(kl >= 0.0);
    // adding a per-group constant to either side's logits changes nothing
    MatD qs = ql, ps = pl;
    qs.leftCols(6).array() += rng.uniform(-5.0, 5.0);
    qs.rightCols(6).array() += rng.uniform(-5.0, 5.0);
    ps.leftCols(6).array() += rng.uniform(-5.0, 5.0);
    Tape<double> t2;
    double kl2 = kl_grouped(t2.constant(qs), t2.constant(ps), 6).scalar();
    CHECK(std::abs(kl - kl2) < 1e-6);
  }
}

TEST_CASE("kl rejects shape mismatch") {
  Tape<double> t;
  try {
    kl_grouped(t.constant(MatD::Zero(1, 4)), t.constant(MatD::Zero(1, 6)), 2);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
  }
}

TEST_CASE("kl gradients pass 64-bit finite differences") {
  Rng rng(37);
  MatD ql = random_logits(1, 2 * 4, rng);
  MatD pl = random_logits(1, 2 * 4, rng);

  auto rep_q = grad_check(
      [&](Tape<double>& t, Var<double> v) {
        return kl_grouped(v, t.constant(pl), 4);
      },
      ql);
  CHECK(rep_q.max_rel_err < 1e-4);

  auto rep_p = grad_check(
      [&](Tape<double>& t, Var<double> v) {
        return kl_grouped(t.constant(ql), v, 4);
      },
      pl);
  CHECK(rep_p.max_rel_err < 1e-4);
}

TEST_CASE("gaussian log prob closed-form values") {
  Tape<double> t;
  MatD mean = MatD::Zero(1, 1);
  MatD x = MatD::Zero(1, 1);

  SUBCASE("unit gaussian at the mean") {
    double lp = gaussian_log_prob_unit(t.constant(mean), t.constant(x)).scalar();
    CHECK(lp == doctest::Approx(-0.918939).epsilon(1e-5));
  }

  SUBCASE("one std away costs exactly one half") {
    MatD x1 = MatD::Constant(1, 1, 1.0);
    double lp0 =
        gaussian_log_prob_unit(t.constant(mean), t.constant(x)).scalar();
    double lp1 =
        gaussian_log_prob_unit(t.constant(mean), t.constant(x1)).scalar();
    CHECK(lp0 - lp1 == doctest::Approx(0.5).epsilon(1e-9));
  }

  SUBCASE("factorizes over dimensions") {
    Rng rng(41);
    MatD m5 = random_logits(1, 5, rng);
    MatD x5 = random_logits(1, 5, rng);
    MatD ls5 = random_logits(1, 5, rng, 0.5);
    double joint = gaussian_log_prob(t.constant(m5), t.constant(ls5),
                                     t.constant(x5))
                       .scalar();
    double parts = 0.0;
    for (int j = 0; j < 5; ++j) {
      Tape<double> tj;
      parts += gaussian_log_prob(tj.constant(m5.col(j).eval()),
                                 tj.constant(ls5.col(j).eval()),
                                 tj.constant(x5.col(j).eval()))
                   .scalar();
    }
    CHECK(joint == doctest::Approx(parts).epsilon(1e-9));
  }
}

TEST_CASE("gaussian log prob gradient w.r.t. mean vanishes at x=mean") {
  Rng rng(43);
  MatD mean = random_logits(1, 4, rng);
  Tape<double> t;
  Var<double> mv = t.leaf(mean, true);
  Var<double> lp = gaussian_log_prob_unit(mv, t.constant(mean));
  t.backward(lp);
  CHECK(t.grad(mv).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gaussian log prob gradients pass finite differences") {
  Rng rng(47);
  MatD mean = random_logits(2, 3, rng);
  MatD ls = random_logits(2, 3, rng, 0.5);
  MatD x = random_logits(2, 3, rng);
  auto rep = grad_check(
      [&](Tape<double>& t, Var<double> v) {
        return sum(gaussian_log_prob(v, t.constant(ls), t.constant(x)));
      },
      mean);
  CHECK(rep.max_rel_err < 1e-3);
  auto rep_ls = grad_check(
      [&](Tape<double>& t, Var<double> v) {
        return sum(gaussian_log_prob(t.constant(mean), v, t.constant(x)));
      },
      ls);
  CHECK(rep_ls.max_rel_err < 1e-3);
}

TEST_CASE("entropy closed-form values") {
  Tape<double> t;

  SUBCASE("saturated logits give near-zero entropy") {
    MatD logits(1, 2);
    logits << 40.0, -40.0;
    CHECK(entropy_grouped(t.constant(logits), 2).scalar() ==
          doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("uniform over 4 classes gives ln 4") {
    CHECK(entropy_grouped(t.constant(MatD::Zero(1, 4)), 4).scalar() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }

  SUBCASE("two uniform binary groups give 2 ln 2") {
    CHECK(entropy_grouped(t.constant(MatD::Zero(1, 4)), 2).scalar() ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  }

  SUBCASE("bounded by G ln K on random logits") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
      MatD logits = random_logits(1, 3 * 4, rng, 5.0);
      double h = entropy_grouped(t.constant(logits), 4).scalar();
      CHECK(h >= 0.0);
      CHECK(h <= 3.0 * std::log(4.0) + 1e-9);
    }
  }
}
