#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "csvt/ops.hpp"
#include "csvt/random.hpp"
#include "testutil.hpp"

using namespace csvt;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// Six-nested-loop reference for the depthwise convolution.
template <class T>
std::vector<T> naive_dwconv3x3(const std::vector<T>& x, const std::vector<T>& k, int h, int w, int c) {
  std::vector<T> out(x.size(), T(0));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int q = 0; q < c; ++q)
        for (int di = 0; di < 3; ++di)
          for (int dj = 0; dj < 3; ++dj) {
            const int ii = i + di - 1, jj = j + dj - 1;
            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
            out[(size_t(i) * w + j) * c + q] += x[(size_t(ii) * w + jj) * c + q] * k[(size_t(di) * 3 + dj) * c + q];
          }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and 1x1 arithmetic") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  auto c = matmul(eye, a);
  for (size_t i = 0; i < 4; ++i) CHECK(c[i] == doctest::Approx(a[i]));

  Tensor<double> r({1, 2}, {1, 2});
  Tensor<double> v({2, 1}, {3, 4});
  CHECK(matmul(r, v).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch raises") {
  Tensor<double> a({2, 3});
  Tensor<double> b({2, 3});
  CHECK_THROWS_AS((void)matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient vs central finite differences") {
  Rng rng(7);
  auto a64 = random_tensor<double>({3, 4}, rng);
  auto b64 = random_tensor<double>({4, 2}, rng);
  auto proj = testutil::make_projection<double>({3, 2}, rng);
  double err = gradcheck<double>([&] { return proj(matmul(a64, b64)); }, {&a64, &b64}, testutil::default_h(), 1e-6,
                                 1e-9);
  CHECK(err < 1e-6);

  Rng rng32(7);
  auto a32 = random_tensor<float>({3, 4}, rng32);
  auto b32 = random_tensor<float>({4, 2}, rng32);
  auto proj32 = testutil::make_projection<float>({3, 2}, rng32);
  double err32 = gradcheck<float>([&] { return proj32(matmul(a32, b32)); }, {&a32, &b32}, testutil::default_h32(),
                                  1e-3, 1e-4);
  CHECK(err32 < 1e-3);
}

TEST_CASE("softmax_rows uniform, stabilized, and high-precision oracle") {
  Tensor<double> z({1, 3}, {0, 0, 0});
  auto u = softmax_rows(z);
  for (int j = 0; j < 3; ++j) CHECK(u[size_t(j)] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor<double> big({1, 2}, {1000, 1000});
  auto s = softmax_rows(big);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  assert_all_finite(s, "softmax of large inputs");

  // exp/sum evaluated by an independent high-precision script
  Tensor<double> x({1, 3}, {1, 2, 3});
  auto p = softmax_rows(x);
  CHECK(p[0] == doctest::Approx(0.090030573170380458).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.24472847105479765).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.66524095577482189).epsilon(1e-14));
}

TEST_CASE("softmax_rows invariants: row sums and shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + int(rng.uniform_int(5)), c = 2 + int(rng.uniform_int(7));
    auto x = random_tensor<double>({r, c}, rng, -5, 5);
    auto p = softmax_rows(x);
    for (int i = 0; i < r; ++i) {
      double s = 0;
      for (int j = 0; j < c; ++j) s += p[size_t(i) * c + j];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
    const double shift = rng.uniform(-100, 100);
    Tensor<double> xs(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) xs.values_mut()[i] = x[i] + shift;
    auto p2 = softmax_rows(xs);
    for (size_t i = 0; i < p.numel(); ++i) CHECK(p2[i] == doctest::Approx(p[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(13);
  auto x = random_tensor<double>({3, 5}, rng, -2, 2);
  auto proj = testutil::make_projection<double>({3, 5}, rng);
  CHECK(gradcheck<double>([&] { return proj(softmax_rows(x)); }, {&x}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("layer_norm zero-variance row, two-point symmetry, gradients") {
  Tensor<double> gamma = Tensor<double>::full({4}, 1.0);
  Tensor<double> beta({4});
  Tensor<double> c({1, 4}, {5, 5, 5, 5});
  auto out = layer_norm(c, gamma, beta, 1e-5);
  for (size_t i = 0; i < 4; ++i) CHECK(std::fabs(out[i]) < 1e-9);

  Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
  Tensor<double> b2({2});
  Tensor<double> two({1, 2}, {1, 3});
  auto o2 = layer_norm(two, g2, b2, 1e-5);
  CHECK(o2[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(o2[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(17);
  auto x = random_tensor<double>({4, 8}, rng);
  auto g = random_tensor<double>({8}, rng, 0.5, 1.5);
  auto b = random_tensor<double>({8}, rng);
  auto proj = testutil::make_projection<double>({4, 8}, rng);
  CHECK(gradcheck<double>([&] { return proj(layer_norm(x, g, b, 1e-5)); }, {&x, &g, &b}, testutil::default_h(), 1e-6,
                          1e-9) < 1e-6);
}

TEST_CASE("layer_norm affine input invariance") {
  Rng rng(19);
  Tensor<double> gamma = random_tensor<double>({6}, rng, 0.5, 2.0);
  Tensor<double> beta = random_tensor<double>({6}, rng);
  auto x = random_tensor<double>({3, 6}, rng);
  const double a = 2.75, b = -1.25;
  Tensor<double> ax(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) ax.values_mut()[i] = a * x[i] + b;
  auto y1 = layer_norm(x, gamma, beta, 1e-10);
  auto y2 = layer_norm(ax, gamma, beta, 1e-10);
  for (size_t i = 0; i < y1.numel(); ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-6));
}

TEST_CASE("depthwise_conv3x3 identity kernel, overlap counts, naive oracle") {
  Rng rng(23);
  auto x = random_tensor<double>({4, 5, 3}, rng);
  Tensor<double> delta({3, 3, 3});
  for (int q = 0; q < 3; ++q) delta.values_mut()[(1 * 3 + 1) * 3 + q] = 1.0;  // center tap
  auto y = depthwise_conv3x3(x, delta);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));

  auto ones_img = Tensor<double>::full({5, 5, 1}, 1.0);
  auto ones_k = Tensor<double>::full({3, 3, 1}, 1.0);
  auto o = depthwise_conv3x3(ones_img, ones_k);
  CHECK(o[2 * 5 + 2] == doctest::Approx(9.0));  // interior
  CHECK(o[0] == doctest::Approx(4.0));          // corner
  CHECK(o[2] == doctest::Approx(6.0));          // edge

  auto xr = random_tensor<double>({4, 4, 2}, rng);
  auto kr = random_tensor<double>({3, 3, 2}, rng);
  auto got = depthwise_conv3x3(xr, kr);
  auto ref = naive_dwconv3x3(xr.values(), kr.values(), 4, 4, 2);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("depthwise_conv3x3 channel mismatch raises and linearity holds") {
  Tensor<double> x({4, 4, 2});
  Tensor<double> k({3, 3, 3});
  CHECK_THROWS_AS((void)depthwise_conv3x3(x, k), std::invalid_argument);

  Rng rng(29);
  auto a = random_tensor<float>({5, 6, 2}, rng);
  auto b = random_tensor<float>({5, 6, 2}, rng);
  auto kk = random_tensor<float>({3, 3, 2}, rng);
  const float alpha = 1.7f, beta = -0.6f;
  Tensor<float> mix(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) mix.values_mut()[i] = alpha * a[i] + beta * b[i];
  auto lhs = depthwise_conv3x3(mix, kk);
  auto ca = depthwise_conv3x3(a, kk);
  auto cb = depthwise_conv3x3(b, kk);
  for (size_t i = 0; i < lhs.numel(); ++i) CHECK(std::fabs(lhs[i] - (alpha * ca[i] + beta * cb[i])) < 1e-5);
}

TEST_CASE("depthwise_conv3x3 gradients") {
  Rng rng(31);
  auto x = random_tensor<double>({4, 4, 2}, rng);
  auto k = random_tensor<double>({3, 3, 2}, rng);
  auto proj = testutil::make_projection<double>({4, 4, 2}, rng);
  CHECK(gradcheck<double>([&] { return proj(depthwise_conv3x3(x, k)); }, {&x, &k}, testutil::default_h(), 1e-6,
                          1e-9) < 1e-6);
}

TEST_CASE("l2_normalize_cols 3-4-5 column, zero column, unit norms") {
  Tensor<double> x({2, 1}, {3, 4});
  auto y = l2_normalize_cols(x, 1e-12);
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-12));

  Tensor<double> z({3, 2}, {0, 1, 0, 2, 0, 3});
  auto zn = l2_normalize_cols(z, 1e-12);
  CHECK(zn[0] == 0.0);
  CHECK(zn[2] == 0.0);
  CHECK(zn[4] == 0.0);

  Rng rng(37);
  auto r = random_tensor<double>({5, 3}, rng);
  auto rn = l2_normalize_cols(r, 1e-12);
  for (int j = 0; j < 3; ++j) {
    double ss = 0;
    for (int i = 0; i < 5; ++i) ss += rn[size_t(i) * 3 + j] * rn[size_t(i) * 3 + j];
    CHECK(std::fabs(std::sqrt(ss) - 1.0) < 1e-6);
  }
  auto proj = testutil::make_projection<double>({5, 3}, rng);
  CHECK(gradcheck<double>([&] { return proj(l2_normalize_cols(r, 1e-12)); }, {&r}, testutil::default_h(), 1e-6,
                          1e-9) < 1e-6);
}

TEST_CASE("backward populates leaf grads; sum and quadratic forms") {
  Tensor<double> x({2, 3}, {1, -2, 3, 0.5, -1.5, 2.5});
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum(x);
    tape.backward(loss);
  }
  for (size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));

  x.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = scale(sum(mul(x, x)), 0.5);
    tape.backward(loss);
  }
  for (size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(x[i]));
}

TEST_CASE("backward error cases: non-scalar, detached, double call") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // non-scalar
    Tensor<double> detached_loss = Tensor<double>::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(detached_loss), std::invalid_argument);
    auto loss = sum(y);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);  // consumed
  }
  {
    // loss built under NoGrad is detached
    Tape<double> t2;
    TapeScope<double> scope(t2);
    Tensor<double> loss;
    {
      NoGradScope<double> ng;
      loss = sum(x);
    }
    CHECK_THROWS_AS(t2.backward(loss), std::invalid_argument);
  }
}

TEST_CASE("transpose round-trip and gradient") {
  Rng rng(41);
  auto x = random_tensor<double>({3, 4}, rng);
  auto tt = transpose(transpose(x));
  for (size_t i = 0; i < x.numel(); ++i) CHECK(tt[i] == x[i]);
  auto proj = testutil::make_projection<double>({4, 3}, rng);
  CHECK(gradcheck<double>([&] { return proj(transpose(x)); }, {&x}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("elementwise add/mul/scale arithmetic and gradients") {
  Tensor<double> a({2}, {1, 2});
  Tensor<double> b({2}, {10, 20});
  auto s = add(a, b);
  CHECK(s[0] == 11.0);
  CHECK(s[1] == 22.0);
  auto m = mul(a, b);
  CHECK(m[0] == 10.0);
  CHECK(m[1] == 40.0);
  auto sc = scale(a, 3.0);
  CHECK(sc[1] == 6.0);
  auto d = sub(b, a);
  CHECK(d[0] == 9.0);

  Rng rng(43);
  auto x = random_tensor<double>({3, 3}, rng);
  auto y = random_tensor<double>({3, 3}, rng);
  auto proj = testutil::make_projection<double>({3, 3}, rng);
  CHECK(gradcheck<double>([&] { return proj(add(mul(x, y), scale(sub(x, y), 0.5))); }, {&x, &y},
                          testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("relu and gelu values and gradients") {
  Tensor<double> x({5}, {-2, -0.5, 0, 0.5, 2});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[3] == 0.5);
  CHECK(r[4] == 2.0);

  // values from an independent high-precision evaluation of the tanh form
  auto g = gelu(x);
  CHECK(g[0] == doctest::Approx(-0.045402305912224981).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(-0.15428599017485608).epsilon(1e-12));
  CHECK(g[2] == 0.0);
  CHECK(g[3] == doctest::Approx(0.34571400982514392).epsilon(1e-12));
  CHECK(g[4] == doctest::Approx(1.9545976940877750).epsilon(1e-12));

  Rng rng(47);
  auto v = random_tensor<double>({4, 4}, rng, 0.1, 2.0);  // keep clear of the relu kink
  auto proj = testutil::make_projection<double>({4, 4}, rng);
  CHECK(gradcheck<double>([&] { return proj(relu(v)); }, {&v}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
  auto v2 = random_tensor<double>({4, 4}, rng, -2.0, 2.0);
  CHECK(gradcheck<double>([&] { return proj(gelu(v2)); }, {&v2}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("log, reductions, reshape") {
  Tensor<double> x({3}, {1.0, std::exp(1.0), 4.0});
  auto l = log_elem(x);
  CHECK(l[0] == doctest::Approx(0.0));
  CHECK(l[1] == doctest::Approx(1.0));
  Tensor<double> bad({1}, {-1.0});
  CHECK_THROWS_AS((void)log_elem(bad), std::invalid_argument);

  Rng rng(53);
  auto v = random_tensor<double>({3, 4}, rng, 0.5, 3.0);
  auto proj = testutil::make_projection<double>({3, 4}, rng);
  CHECK(gradcheck<double>([&] { return proj(log_elem(v)); }, {&v}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);

  CHECK(sum(v).item() == doctest::Approx(mean(v).item() * 12));
  CHECK(gradcheck<double>([&] { return mean(mul(v, v)); }, {&v}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);

  auto rs = reshape(v, {4, 3});
  CHECK(rs.dim(0) == 4);
  for (size_t i = 0; i < v.numel(); ++i) CHECK(rs[i] == v[i]);
  CHECK_THROWS_AS((void)reshape(v, {5, 3}), std::invalid_argument);
  auto proj2 = testutil::make_projection<double>({12}, rng);
  CHECK(gradcheck<double>([&] { return proj2(reshape(v, {12})); }, {&v}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("slice and concat round trips with gradients") {
  Rng rng(59);
  auto x = random_tensor<double>({4, 6}, rng);
  auto left = slice_cols(x, 0, 3);
  auto right = slice_cols(x, 3, 6);
  auto back = concat_cols(std::vector<Tensor<double>>{left, right});
  for (size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);

  auto top = slice_rows(x, 0, 1);
  auto rest = slice_rows(x, 1, 4);
  auto stacked = concat_rows(top, rest);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(stacked[i] == x[i]);

  auto proj = testutil::make_projection<double>({4, 6}, rng);
  CHECK(gradcheck<double>(
            [&] {
              auto l = slice_cols(x, 0, 3);
              auto r = slice_cols(x, 3, 6);
              return proj(concat_cols(std::vector<Tensor<double>>{r, l}));
            },
            {&x}, testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("batch_norm train/eval modes, running-stat contract, gradients") {
  Rng rng(61);
  auto x = random_tensor<double>({6, 3}, rng, -2, 2);
  auto gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
  auto beta = random_tensor<double>({3}, rng);

  std::vector<double> bmean, bvar;
  auto y = batch_norm_train(x, gamma, beta, 1e-5, &bmean, &bvar);
  // per-channel standardization before affine
  for (int j = 0; j < 3; ++j) {
    double m = 0;
    for (int i = 0; i < 6; ++i) m += (y[size_t(i) * 3 + j] - beta[size_t(j)]) / gamma[size_t(j)];
    CHECK(std::fabs(m / 6) < 1e-9);
  }
  CHECK(bmean.size() == 3);

  // eval mode with unit stats is the pure affine map
  Tensor<double> rm({3});
  Tensor<double> rv = Tensor<double>::full({3}, 1.0);
  auto ye = batch_norm_eval(x, gamma, beta, rm, rv, 0.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(ye[size_t(i) * 3 + j] == doctest::Approx(gamma[size_t(j)] * x[size_t(i) * 3 + j] + beta[size_t(j)]));

  auto proj = testutil::make_projection<double>({6, 3}, rng);
  CHECK(gradcheck<double>([&] { return proj(batch_norm_train(x, gamma, beta, 1e-5)); }, {&x, &gamma, &beta},
                          testutil::default_h(), 1e-6, 1e-9) < 1e-6);
  CHECK(gradcheck<double>([&] { return proj(batch_norm_eval(x, gamma, beta, rm, rv, 1e-5)); }, {&x, &gamma, &beta},
                          testutil::default_h(), 1e-6, 1e-9) < 1e-6);
}

TEST_CASE("scale_by_exp_neg matches manual computation and gradcheck") {
  Rng rng(67);
  auto x = random_tensor<double>({3, 3}, rng);
  Tensor<double> t({2}, {0.3, -0.7});
  auto y = scale_by_exp_neg(x, t, 1);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i] * std::exp(0.7)));
  auto proj = testutil::make_projection<double>({3, 3}, rng);
  CHECK(gradcheck<double>([&] { return proj(scale_by_exp_neg(x, t, 1)); }, {&x, &t}, testutil::default_h(), 1e-6,
                          1e-9) < 1e-6);
}

TEST_CASE("gaussian_blur preserves constants and mass; forward-only guard") {
  auto flat = Tensor<double>::full({7, 7, 2}, 0.25);
  auto b = gaussian_blur(flat, 1.3);
  for (size_t i = 0; i < b.numel(); ++i) CHECK(b[i] == doctest::Approx(0.25).epsilon(1e-12));

  // an impulse spreads but keeps total mass under clamp padding far from edges
  Tensor<double> imp({11, 11, 1});
  imp.values_mut()[(5 * 11 + 5)] = 1.0;
  auto ib = gaussian_blur(imp, 0.8);
  double total = 0;
  for (size_t i = 0; i < ib.numel(); ++i) total += ib[i];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ib[(5 * 11 + 5)] < 1.0);

  Tensor<double> g({4, 4, 1});
  g.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  CHECK_THROWS_AS((void)gaussian_blur(g, 1.0), std::logic_error);
}

TEST_CASE("bilinear_resize identity, constants, known midpoint") {
  Rng rng(71);
  auto x = random_tensor<double>({5, 4, 3}, rng);
  auto same = bilinear_resize(x, 5, 4);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == doctest::Approx(x[i]));

  auto flat = Tensor<double>::full({3, 3, 1}, 0.7);
  auto up = bilinear_resize(flat, 9, 9);
  for (size_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.7));

  // 2x upsample of a 2x1 gradient: interior samples interpolate at quarter points
  Tensor<double> ramp({1, 2, 1}, {0.0, 1.0});
  auto r2 = bilinear_resize(ramp, 1, 4);
  CHECK(r2[0] == doctest::Approx(0.0));
  CHECK(r2[1] == doctest::Approx(0.25));
  CHECK(r2[2] == doctest::Approx(0.75));
  CHECK(r2[3] == doctest::Approx(1.0));
}

TEST_CASE("gradient sweep across every differentiable op on random shapes") {
  Rng rng(101);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + int(rng.uniform_int(4));
    const int d = 2 + int(rng.uniform_int(5));
    auto x = random_tensor<double>({n, d}, rng);
    auto y = random_tensor<double>({n, d}, rng);
    auto w = random_tensor<double>({d, n}, rng);
    auto g = random_tensor<double>({d}, rng, 0.5, 1.5);
    auto b = random_tensor<double>({d}, rng);
    auto proj_nd = testutil::make_projection<double>({n, d}, rng);
    auto proj_nn = testutil::make_projection<double>({n, n}, rng);
    const double h = testutil::default_h();
    CHECK(gradcheck<double>([&] { return proj_nn(matmul(x, w)); }, {&x, &w}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(softmax_rows(x)); }, {&x}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(log_softmax_rows(x)); }, {&x}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(layer_norm(x, g, b, 1e-5)); }, {&x, &g, &b}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(l2_normalize_cols(x, 1e-12)); }, {&x}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(add_row_bias(x, b)); }, {&x, &b}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(mul(x, y)); }, {&x, &y}, h, 1e-6, 1e-9) < 1e-6);
    CHECK(gradcheck<double>([&] { return proj_nd(gelu(x)); }, {&x}, h, 1e-6, 1e-9) < 1e-6);
    checked += 8;
  }
  CHECK(checked >= 20);
}

TEST_CASE("forward results are bit-identical across reruns with one seed") {
  auto run = [] {
    Rng rng(12345);
    auto x = random_tensor<float>({8, 8}, rng);
    auto g = random_tensor<float>({8}, rng, 0.5, 1.5);
    auto b = random_tensor<float>({8}, rng);
    auto y = layer_norm(softmax_rows(matmul(x, transpose(x))), g, b, 1e-5f);
    return y.values();
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("finite outputs on finite inputs across ops") {
  Rng rng(103);
  auto x = random_tensor<double>({6, 6}, rng, -50, 50);
  auto g = Tensor<double>::full({6}, 1.0);
  auto b = Tensor<double>({6});
  assert_all_finite(softmax_rows(x), "softmax");
  assert_all_finite(layer_norm(x, g, b, 1e-5), "layer_norm");
  assert_all_finite(l2_normalize_cols(x, 1e-12), "l2n");
  assert_all_finite(gelu(x), "gelu");
  Tensor<double> zeros({4, 4});
  assert_all_finite(layer_norm(zeros, Tensor<double>::full({4}, 1.0), Tensor<double>({4}), 1e-5),
                    "layer_norm of zeros");
}
