#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "twist/distributions.hpp"
#include "twist/gradcheck.hpp"
#include "twist/nets.hpp"

using namespace twist;

namespace {

MatD random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = rng.uniform(-scale, scale);
  return m;
}

// Wraps an op chain into a scalar for grad_check.
template <typename F>
void check_op(F f, const MatD& x0, double tol = 1e-3) {
  auto rep = grad_check(
      [&](Tape<double>& t, Var<double> x) { return sum(f(t, x)); }, x0);
  CHECK(rep.max_rel_err < tol);
}

}  // namespace

TEST_CASE("finite differences match analytic gradients for every primitive") {
  Rng rng(42);
  MatD x = random_mat(3, 4, rng);
  // co-inputs fixed up front: f must be deterministic across evaluations
  MatD c34 = random_mat(3, 4, rng);
  MatD c14 = random_mat(1, 4, rng);
  MatD c31 = random_mat(3, 1, rng);
  MatD c42 = random_mat(4, 2, rng);
  MatD c23 = random_mat(2, 3, rng);
  MatD c32 = random_mat(3, 2, rng);
  MatD w34 = random_mat(3, 4, rng);

  check_op([&](Tape<double>& t, Var<double> v) {
    return add(v, t.constant(c34));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    // bias broadcast
    return add(v, t.constant(c14));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return sub(t.constant(c34), v);
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return mul(v, t.constant(c34));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    // per-row scale broadcast
    return mul(v, t.constant(c31));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return mul(v, t.scalar(0.7));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return matmul(v, t.constant(c42));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return matmul(t.constant(c23), v);
  }, x);
  check_op([&](Tape<double>&, Var<double> v) {
    return affine(v, 2.5, -0.3);
  }, x);
  check_op([&](Tape<double>&, Var<double> v) { return elu(v); }, x);
  check_op([&](Tape<double>&, Var<double> v) { return sigmoid(v); }, x);
  check_op([&](Tape<double>&, Var<double> v) { return tanh(v); }, x);
  check_op([&](Tape<double>&, Var<double> v) { return exp(v); }, x);
  check_op([&](Tape<double>&, Var<double> v) { return square(v); }, x);
  check_op([&](Tape<double>&, Var<double> v) { return rowsum(square(v)); }, x);
  check_op([&](Tape<double>&, Var<double> v) {
    return mean(square(v));
  }, x);
  check_op([&](Tape<double>&, Var<double> v) {
    return clamp(v, -0.5, 0.5);  // entries at +-0.5 exactly have measure zero
  }, (x.array() * 0.9).matrix());
  check_op([&](Tape<double>&, Var<double> v) {
    return log_floor(square(v), 1e-8);
  }, (x.array() + 2.0).matrix());
  check_op([&](Tape<double>&, Var<double> v) {
    return slice_cols(square(v), 1, 2);
  }, x);
  check_op([&](Tape<double>&, Var<double> v) {
    return slice_rows(square(v), 1, 2);
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return concat_cols(square(v), t.constant(c32));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return concat_rows(
        std::vector<Var<double>>{square(v), t.constant(c14)});
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return mul(softmax_groups(v, 2), t.constant(w34));
  }, x);
  check_op([&](Tape<double>& t, Var<double> v) {
    return mul(log_softmax_groups(v, 4), t.constant(w34));
  }, x);
}

TEST_CASE("stop_grad blocks gradient flow") {
  Tape<double> t;
  Var<double> x = t.leaf(MatD::Constant(1, 3, 2.0), true);
  Var<double> loss = sum(mul(stop_grad(square(x)), x));
  t.backward(loss);
  MatD g = t.grad(x);
  // d/dx of c*x with c = 4 held constant
  CHECK(g(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("grad_check on f(x)=sum(x^2) reports tiny error") {
  MatD x(1, 2);
  x << 1.0, -2.0;
  Tape<double> t;
  Var<double> xv = t.leaf(x, true);
  Var<double> loss = sum(square(xv));
  t.backward(loss);
  MatD g = t.grad(xv);
  CHECK(g(0, 0) == doctest::Approx(2.0));
  CHECK(g(0, 1) == doctest::Approx(-4.0));

  auto rep = grad_check(
      [](Tape<double>&, Var<double> v) { return sum(square(v)); }, x);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check rejects non-finite evaluation") {
  MatD x(1, 1);
  x << -1.0;
  CHECK_THROWS_AS(
      grad_check([](Tape<double>&, Var<double> v) {
        return log_floor(v, 0.0);  // log of negative -> nan at floor 0
      }, x),
      Error);
}

TEST_CASE("mlp_apply identity and zero cases") {
  MlpSpec spec{{2, 2}, false};
  ParameterSet<double> ps;
  Rng rng(1);
  mlp_init(ps, "net", spec, rng);

  SUBCASE("identity weights pass input through") {
    ps.at("net/l0/W").value = MatD::Identity(2, 2);
    ps.at("net/l0/b").value = MatD::Zero(1, 2);
    Tape<double> t;
    MatD x(1, 2);
    x << 1.0, 2.0;
    Var<double> y = mlp_apply(spec, ps, "net", t.constant(x));
    CHECK(y.value()(0, 0) == doctest::Approx(1.0));
    CHECK(y.value()(0, 1) == doctest::Approx(2.0));
  }

  SUBCASE("zero weights produce zero output") {
    ps.at("net/l0/W").value = MatD::Zero(2, 2);
    ps.at("net/l0/b").value = MatD::Zero(1, 2);
    Tape<double> t;
    MatD x(1, 2);
    x << 3.0, -1.5;
    Var<double> y = mlp_apply(spec, ps, "net", t.constant(x));
    CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("mlp_apply two-layer net matches hand-computed forward pass") {
  // x=[1,0], W0=[[1,2],[3,4]], b0=[0.5,-0.5], ELU, W1=[[1],[−1]], b1=[0.25]
  // pre0 = [1*1+0*3, 1*2+0*4] + b0 = [1.5, 1.5]; elu keeps positives
  // y = 1.5*1 + 1.5*(-1) + 0.25 = 0.25
  MlpSpec spec{{2, 2, 1}, false};
  ParameterSet<double> ps;
  Rng rng(1);
  mlp_init(ps, "net", spec, rng);
  MatD w0(2, 2);
  w0 << 1, 2, 3, 4;
  MatD b0(1, 2);
  b0 << 0.5, -0.5;
  MatD w1(2, 1);
  w1 << 1, -1;
  MatD b1(1, 1);
  b1 << 0.25;
  ps.at("net/l0/W").value = w0;
  ps.at("net/l0/b").value = b0;
  ps.at("net/l1/W").value = w1;
  ps.at("net/l1/b").value = b1;

  Tape<double> t;
  MatD x(1, 2);
  x << 1.0, 0.0;
  Var<double> y = mlp_apply(spec, ps, "net", t.constant(x));
  CHECK(y.value()(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("mlp_apply names the offending layer on width mismatch") {
  MlpSpec spec{{3, 2}, false};
  ParameterSet<double> ps;
  Rng rng(1);
  mlp_init(ps, "net", spec, rng);
  Tape<double> t;
  MatD x(1, 2);  // wrong input width
  x << 1.0, 2.0;
  try {
    mlp_apply(spec, ps, "net", t.constant(x));
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("mlp_apply gradients w.r.t. parameters pass finite differences") {
  MlpSpec spec{{3, 4, 2}, false};
  ParameterSet<double> ps;
  Rng rng(7);
  mlp_init(ps, "net", spec, rng);
  MatD x = random_mat(2, 3, rng);
  auto eval = [&](bool backward) {
    Tape<double> t;
    Var<double> y = mlp_apply(spec, ps, "net", t.constant(x));
    Var<double> loss = sum(square(y));
    if (backward) t.backward(loss);
    return loss.scalar();
  };
  auto rep = param_grad_check(eval, ps);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("gru_step gate limits") {
  const int in = 2, hidden = 3;
  ParameterSet<double> ps;
  Rng rng(3);
  gru_init(ps, "gru", in, hidden, rng);
  MatD h0 = random_mat(1, hidden, rng);
  MatD x = random_mat(1, in, rng);

  SUBCASE("update gate driven to zero keeps the previous state") {
    ps.at("gru/b_zr").value.leftCols(hidden).setConstant(-40.0);
    Tape<double> t;
    Var<double> h1 = gru_step(ps, "gru", t.constant(h0), t.constant(x));
    CHECK((h1.value() - h0).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("update gate open with zero candidate drives state to zero") {
    ps.at("gru/b_zr").value.leftCols(hidden).setConstant(40.0);
    ps.at("gru/Wx_c").value.setZero();
    ps.at("gru/Wh_c").value.setZero();
    ps.at("gru/b_c").value.setZero();
    Tape<double> t;
    Var<double> h1 = gru_step(ps, "gru", t.constant(h0), t.constant(x));
    CHECK(h1.value().cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gru_step matches a scalar re-implementation of the gate math") {
  const int in = 2, hidden = 3;
  ParameterSet<double> ps;
  Rng rng(11);
  gru_init(ps, "gru", in, hidden, rng);
  MatD h0 = random_mat(1, hidden, rng, 0.5);
  MatD x = random_mat(1, in, rng, 0.5);

  Tape<double> t;
  Var<double> h1 = gru_step(ps, "gru", t.constant(h0), t.constant(x));

  // scalar oracle
  const MatD& wx_zr = ps.at("gru/Wx_zr").value;
  const MatD& wh_zr = ps.at("gru/Wh_zr").value;
  const MatD& b_zr = ps.at("gru/b_zr").value;
  const MatD& wx_c = ps.at("gru/Wx_c").value;
  const MatD& wh_c = ps.at("gru/Wh_c").value;
  const MatD& b_c = ps.at("gru/b_c").value;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int j = 0; j < hidden; ++j) {
    double pre_z = b_zr(0, j), pre_r = b_zr(0, hidden + j);
    for (int i = 0; i < in; ++i) {
      pre_z += x(0, i) * wx_zr(i, j);
      pre_r += x(0, i) * wx_zr(i, hidden + j);
    }
    for (int i = 0; i < hidden; ++i) {
      pre_z += h0(0, i) * wh_zr(i, j);
      pre_r += h0(0, i) * wh_zr(i, hidden + j);
    }
    double z = sig(pre_z);
    double pre_c = b_c(0, j);
    for (int i = 0; i < in; ++i) pre_c += x(0, i) * wx_c(i, j);
    for (int i = 0; i < hidden; ++i) {
      double pre_ri = b_zr(0, hidden + i);
      for (int ii = 0; ii < in; ++ii) pre_ri += x(0, ii) * wx_zr(ii, hidden + i);
      for (int ii = 0; ii < hidden; ++ii)
        pre_ri += h0(0, ii) * wh_zr(ii, hidden + i);
      pre_c += sig(pre_ri) * h0(0, i) * wh_c(i, j);
    }
    double c = std::tanh(pre_c);
    double expect = (1.0 - z) * h0(0, j) + z * c;
    CHECK(h1.value()(0, j) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("gru_step gradients pass finite differences through both arguments") {
  const int in = 2, hidden = 3;
  ParameterSet<double> ps;
  Rng rng(13);
  gru_init(ps, "gru", in, hidden, rng);
  MatD x = random_mat(2, in, rng, 0.5);
  MatD h0 = random_mat(2, hidden, rng, 0.5);

  check_op([&](Tape<double>& t, Var<double> v) {
    return gru_step(ps, "gru", v, t.constant(x));
  }, h0);
  check_op([&](Tape<double>& t, Var<double> v) {
    return gru_step(ps, "gru", t.constant(h0), v);
  }, x);

  auto eval = [&](bool backward) {
    Tape<double> t;
    Var<double> h1 = gru_step(ps, "gru", t.constant(h0), t.constant(x));
    Var<double> loss = sum(square(h1));
    if (backward) t.backward(loss);
    return loss.scalar();
  };
  auto rep = param_grad_check(eval, ps);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("adam zero gradient leaves parameter and moments unchanged") {
  ParameterSet<float> ps;
  ps.add("w", MatF::Constant(1, 1, 0.5f));
  ps.at("w").grad = MatF::Zero(1, 1);
  Adam<float> opt(1e-3);
  opt.step(ps);
  CHECK(ps.at("w").value(0, 0) == 0.5f);
  CHECK(ps.at("w").adam_m(0, 0) == 0.0f);
  CHECK(ps.at("w").adam_v(0, 0) == 0.0f);
}

TEST_CASE("adam first step with unit gradient moves by ~lr") {
  ParameterSet<float> ps;
  ps.add("w", MatF::Constant(1, 1, 0.0f));
  ps.at("w").grad = MatF::Constant(1, 1, 1.0f);
  const double lr = 1e-3;
  Adam<float> opt(lr);
  opt.step(ps);
  // bias-corrected first step: lr * 1 / (1 + eps)
  CHECK(std::abs(-static_cast<double>(ps.at("w").value(0, 0)) - lr) < 1e-6);
}

TEST_CASE("adam never mutates frozen parameters") {
  ParameterSet<float> ps;
  Rng rng(5);
  ps.add("a", glorot_uniform<float>(4, 4, rng));
  ps.add("b", glorot_uniform<float>(4, 4, rng));
  ps.at("b").frozen = true;
  MatF b_before = ps.at("b").value;
  MatF a_before = ps.at("a").value;
  Adam<float> opt(1e-2);
  for (int i = 0; i < 5; ++i) {
    ps.at("a").grad = glorot_uniform<float>(4, 4, rng);
    ps.at("b").grad = glorot_uniform<float>(4, 4, rng);
    opt.step(ps);
    ps.zero_grads();
  }
  CHECK(std::memcmp(b_before.data(), ps.at("b").value.data(),
                    sizeof(float) * 16) == 0);
  CHECK(std::memcmp(a_before.data(), ps.at("a").value.data(),
                    sizeof(float) * 16) != 0);
  CHECK(ps.at("b").adam_m.size() == 0);
}

TEST_CASE("adam raises a divergence error naming the parameter on nan grads") {
  ParameterSet<float> ps;
  ps.add("layer/W", MatF::Constant(1, 1, 0.0f));
  ps.at("layer/W").grad = MatF::Constant(1, 1,
                                         std::numeric_limits<float>::quiet_NaN());
  Adam<float> opt(1e-3);
  try {
    opt.step(ps);
    FAIL("expected divergence error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(std::string(e.what()).find("layer/W") != std::string::npos);
  }
}

TEST_CASE("forward passes are deterministic given identical parameter bits") {
  MlpSpec spec{{4, 8, 3}, false};
  ParameterSet<float> ps;
  Rng rng(21);
  mlp_init(ps, "net", spec, rng);
  MatF x = glorot_uniform<float>(5, 4, rng);
  auto run = [&]() {
    Tape<float> t;
    return mlp_apply(spec, ps, "net", t.constant(x)).value();
  };
  MatF y1 = run(), y2 = run();
  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.size()) == 0);
}

TEST_CASE("gradient norm clipping rescales to the configured norm") {
  ParameterSet<double> ps;
  ps.add("w", MatD::Zero(1, 2));
  ps.at("w").grad = (MatD(1, 2) << 30.0, 40.0).finished();  // norm 50
  Adam<double> opt(1.0, 0.9, 0.999, 1e-8, /*clip=*/5.0);
  opt.step(ps);
  // effective grad = (3, 4); first-step update = lr * sign-ish magnitude;
  // verify by reconstructing the bias-corrected step
  double m0 = 0.1 * 3.0 / (1 - 0.9);
  double v0 = 0.001 * 9.0 / (1 - 0.999);
  double expect = m0 / (std::sqrt(v0) + 1e-8);
  CHECK(ps.at("w").value(0, 0) == doctest::Approx(-expect).epsilon(1e-9));
}
