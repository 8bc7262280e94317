#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "gradcheck.hpp"
#include "seis/autodiff.hpp"
#include "seis/tensor.hpp"

using namespace seis;
using seisicl_test::compare_grad_fd;
using seisicl_test::random_tensor;

namespace {

/// Independent six-nested-loop convolution used as the oracle for conv2d.
Tensor reference_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), k = w.dim(2);
  Tensor y({B, Cout, H, W});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oh = 0; oh < H; ++oh)
        for (std::size_t ow = 0; ow < W; ++ow) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t kh = 0; kh < k; ++kh)
              for (std::size_t kw = 0; kw < k; ++kw) {
                const long long ih = static_cast<long long>(oh) + kh - pad;
                const long long iw = static_cast<long long>(ow) + kw - pad;
                if (ih < 0 || iw < 0 || ih >= static_cast<long long>(H) ||
                    iw >= static_cast<long long>(W))
                  continue;
                acc += w.at4(co, ci, kh, kw) *
                       x.at4(bi, ci, static_cast<std::size_t>(ih),
                             static_cast<std::size_t>(iw));
              }
          y.at4(bi, co, oh, ow) = acc;
        }
  return y;
}

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  Tape t;
  return t.value(conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), pad));
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("conv2d scaling and identity kernels") {
  const Tensor ones = Tensor::ones({1, 1, 3, 3});
  const Tensor w = Tensor::from({1, 1, 1, 1}, {2.0});
  const Tensor out = run_conv(ones, w, Tensor::zeros({1}), 0);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 2.0);

  Rng rng(3);
  const Tensor x = random_tensor({2, 1, 6, 5}, rng);
  Tensor id = Tensor::zeros({1, 1, 3, 3});
  id.at4(0, 0, 1, 1) = 1.0;
  const Tensor y = run_conv(x, id, Tensor::zeros({1}), 1);
  CHECK(bitwise_equal(x, y));
}

TEST_CASE("conv2d matches the six-loop oracle") {
  Rng rng(11);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor got = run_conv(x, w, b, 1);
  const Tensor want = reference_conv2d(x, w, b, 1);
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("conv2d rejects mismatched channels and bad padding") {
  Tape t;
  Var x = t.leaf(Tensor::zeros({1, 2, 4, 4}));
  Var w = t.leaf(Tensor::zeros({1, 3, 3, 3}));
  Var b = t.leaf(Tensor::zeros({1}));
  CHECK_THROWS_AS(conv2d(t, x, w, b, 1), std::invalid_argument);
  Var w2 = t.leaf(Tensor::zeros({1, 2, 3, 3}));
  CHECK_THROWS_AS(conv2d(t, x, w2, b, 0), std::invalid_argument);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(5);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor y = random_tensor({1, 2, 4, 4}, rng);
  const Tensor w = random_tensor({2, 2, 3, 3}, rng);
  const Tensor zero_b = Tensor::zeros({2});
  const double a = 0.7, c = -1.3;

  Tensor ax_cy = x;
  ax_cy *= a;
  Tensor cy = y;
  cy *= c;
  ax_cy += cy;

  Tensor lhs = run_conv(ax_cy, w, zero_b, 1);
  Tensor ra = run_conv(x, w, zero_b, 1);
  ra *= a;
  Tensor rc = run_conv(y, w, zero_b, 1);
  rc *= c;
  ra += rc;
  CHECK(max_abs_diff(lhs, ra) < 1e-10);
}

TEST_CASE("conv2d forward is deterministic") {
  Rng rng(17);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  CHECK(bitwise_equal(run_conv(x, w, b, 1), run_conv(x, w, b, 1)));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(23);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor w = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2}, rng);
  const Tensor probe = random_tensor({1, 2, 4, 4}, rng);

  Tape t;
  Var xv = t.leaf(x, true), wv = t.leaf(w, true), bv = t.leaf(b, true);
  Var loss = inner(t, conv2d(t, xv, wv, bv, 1), probe);
  t.backward(loss);

  auto loss_of = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    Tape t2;
    return t2.value(inner(t2, conv2d(t2, t2.leaf(xx), t2.leaf(ww), t2.leaf(bb), 1), probe))[0];
  };
  auto fx = [&](const Tensor& v) { return loss_of(v, w, b); };
  auto fw = [&](const Tensor& v) { return loss_of(x, v, b); };
  auto fb = [&](const Tensor& v) { return loss_of(x, w, v); };
  CHECK(compare_grad_fd(fx, x, t.grad(xv)).max_rel_err < 1e-4);
  CHECK(compare_grad_fd(fw, w, t.grad(wv)).max_rel_err < 1e-4);
  CHECK(compare_grad_fd(fb, b, t.grad(bv)).max_rel_err < 1e-4);
}

// ---------------------------------------------------------------------------

TEST_CASE("batch_norm normalizes per channel in train mode") {
  Rng rng(31);
  const Tensor x = random_tensor({3, 2, 4, 4}, rng, -2.0, 5.0);
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  Tape t;
  Var y = batch_norm(t, t.leaf(x), t.leaf(Tensor::ones({2})), t.leaf(Tensor::zeros({2})),
                     {&rm, &rv}, Mode::train);
  const Tensor& out = t.value(y);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = out[(b * 2 + c) * 16 + i];
        s += v;
        sq += v * v;
        ++n;
      }
    const double mean = s / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 1e-10);
    // normalized variance is 1/(1 + eps/var_x), i.e. 1 up to the epsilon term
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  // running stats moved toward the batch statistics with momentum 0.1
  CHECK(rm[0] != 0.0);
  CHECK(rv[0] != 1.0);
}

TEST_CASE("batch_norm eval mode with unit running stats is the epsilon-scaled identity") {
  Rng rng(37);
  const Tensor x = random_tensor({1, 2, 3, 3}, rng);
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  Tape t;
  Var y = batch_norm(t, t.leaf(x), t.leaf(Tensor::ones({2})), t.leaf(Tensor::zeros({2})),
                     {&rm, &rv}, Mode::eval);
  const Tensor& out = t.value(y);
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(out[i] == doctest::Approx(x[i] * scale).epsilon(1e-14));
    CHECK(std::fabs(out[i] - x[i]) <= 6e-6 * std::fabs(x[i]) + 1e-12);
  }
  // eval mode leaves the running stats untouched
  CHECK(rm[0] == 0.0);
  CHECK(rv[0] == 1.0);
}

TEST_CASE("batch_norm rejects degenerate train batches") {
  Tape t;
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  Var x = t.leaf(Tensor::zeros({1, 2, 1, 1}));
  CHECK_THROWS_AS(batch_norm(t, x, t.leaf(Tensor::ones({2})), t.leaf(Tensor::zeros({2})),
                             {&rm, &rv}, Mode::train),
                  std::invalid_argument);
}

TEST_CASE("batch_norm gradients match finite differences") {
  Rng rng(41);
  const Tensor x = random_tensor({2, 2, 3, 3}, rng, -2.0, 3.0);
  const Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
  const Tensor beta = random_tensor({2}, rng, -0.5, 0.5);
  const Tensor probe = random_tensor({2, 2, 3, 3}, rng);

  for (Mode mode : {Mode::train, Mode::eval}) {
    CAPTURE(mode == Mode::train);
    auto loss_of = [&](const Tensor& xx, const Tensor& gg, const Tensor& bb) {
      Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
      Tape t2;
      return t2.value(inner(t2,
                            batch_norm(t2, t2.leaf(xx), t2.leaf(gg), t2.leaf(bb),
                                       {&rm, &rv}, mode),
                            probe))[0];
    };
    Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
    Tape t;
    Var xv = t.leaf(x, true), gv = t.leaf(gamma, true), bv = t.leaf(beta, true);
    t.backward(inner(t, batch_norm(t, xv, gv, bv, {&rm, &rv}, mode), probe));

    auto fx = [&](const Tensor& v) { return loss_of(v, gamma, beta); };
    auto fg = [&](const Tensor& v) { return loss_of(x, v, beta); };
    auto fb = [&](const Tensor& v) { return loss_of(x, gamma, v); };
    CHECK(compare_grad_fd(fx, x, t.grad(xv)).max_rel_err < 1e-5);
    CHECK(compare_grad_fd(fg, gamma, t.grad(gv)).max_rel_err < 1e-5);
    CHECK(compare_grad_fd(fb, beta, t.grad(bv)).max_rel_err < 1e-5);
  }
}

TEST_CASE("sum of train-mode batch_norm output has vanishing input gradient") {
  // sum(bn(x)) with gamma = 1 is constant in x, so both the analytic and the
  // numeric derivative must be ~0.
  Rng rng(43);
  const Tensor x = random_tensor({1, 1, 4, 4}, rng);
  Tensor rm = Tensor::zeros({1}), rv = Tensor::ones({1});
  Tape t;
  Var xv = t.leaf(x, true);
  t.backward(sum_all(t, batch_norm(t, xv, t.leaf(Tensor::ones({1})),
                                   t.leaf(Tensor::zeros({1})), {&rm, &rv}, Mode::train)));
  auto f = [&](const Tensor& v) {
    Tensor rm2 = Tensor::zeros({1}), rv2 = Tensor::ones({1});
    Tape t2;
    return t2.value(sum_all(t2, batch_norm(t2, t2.leaf(v), t2.leaf(Tensor::ones({1})),
                                           t2.leaf(Tensor::zeros({1})), {&rm2, &rv2},
                                           Mode::train)))[0];
  };
  const auto rep = compare_grad_fd(f, x, t.grad(xv), 1e-5, 1e-8);
  CHECK(rep.max_rel_err < 1e-5);  // all elements fall under the floor or agree
}

// ---------------------------------------------------------------------------

TEST_CASE("leaky_relu values and gradient") {
  Tape t;
  Var x = t.leaf(Tensor::from({3}, {-1.0, 0.5, 2.0}), true);
  Var y = leaky_relu(t, x, 0.01);
  CHECK(t.value(y)[0] == doctest::Approx(-0.01));
  CHECK(t.value(y)[1] == 0.5);
  CHECK(t.value(y)[2] == 2.0);
  CHECK_THROWS_AS(leaky_relu(t, x, 1.5), std::invalid_argument);

  Rng rng(47);
  Tensor xr({20});
  for (std::size_t i = 0; i < 20; ++i) {
    xr[i] = rng.uniform(0.2, 2.0) * rng.sign();  // keep away from the kink
  }
  const Tensor probe = random_tensor({20}, rng);
  Tape t2;
  Var xv = t2.leaf(xr, true);
  t2.backward(inner(t2, leaky_relu(t2, xv, 0.01), probe));
  auto f = [&](const Tensor& v) {
    Tape t3;
    return t3.value(inner(t3, leaky_relu(t3, t3.leaf(v), 0.01), probe))[0];
  };
  CHECK(compare_grad_fd(f, xr, t2.grad(xv)).max_rel_err < 1e-6);
}

TEST_CASE("max_pool2 values, ties and oracle") {
  Tape t;
  Var x = t.leaf(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(t.value(max_pool2(t, x))[0] == 4.0);

  // constant input: output constant, gradient routed to the first element
  Tape t2;
  Var c = t2.leaf(Tensor::full({1, 1, 4, 4}, 3.0), true);
  Var p = max_pool2(t2, c);
  for (std::size_t i = 0; i < 4; ++i) CHECK(t2.value(p)[i] == 3.0);
  t2.backward(sum_all(t2, p));
  const Tensor& g = t2.grad(c);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(g[i * 4 + j] == ((i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0));

  // random 8x8 equals a window-scan oracle exactly
  Rng rng(53);
  const Tensor xr = random_tensor({1, 1, 8, 8}, rng);
  Tape t3;
  const Tensor got = t3.value(max_pool2(t3, t3.leaf(xr)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double m = xr[(2 * i) * 8 + 2 * j];
      m = std::max(m, xr[(2 * i) * 8 + 2 * j + 1]);
      m = std::max(m, xr[(2 * i + 1) * 8 + 2 * j]);
      m = std::max(m, xr[(2 * i + 1) * 8 + 2 * j + 1]);
      CHECK(got[i * 4 + j] == m);
    }

  Tape t4;
  Var odd = t4.leaf(Tensor::zeros({1, 1, 3, 4}));
  CHECK_THROWS_AS(max_pool2(t4, odd), std::invalid_argument);

  const Tensor probe = random_tensor({1, 1, 4, 4}, rng);
  Tape t5;
  Var xv = t5.leaf(xr, true);
  t5.backward(inner(t5, max_pool2(t5, xv), probe));
  auto f = [&](const Tensor& v) {
    Tape t6;
    return t6.value(inner(t6, max_pool2(t6, t6.leaf(v)), probe))[0];
  };
  CHECK(compare_grad_fd(f, xr, t5.grad(xv)).max_rel_err < 1e-6);
}

TEST_CASE("upsample_nearest2 values and gradient") {
  Tape t;
  Var x = t.leaf(Tensor::from({1, 1, 1, 1}, {5.0}));
  const Tensor& up = t.value(upsample_nearest2(t, x));
  CHECK(up.shape() == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(up[i] == 5.0);

  // upsample(max_pool2(constant)) is the identity on constants
  Tape t2;
  Var c = t2.leaf(Tensor::full({1, 2, 4, 4}, 1.25));
  const Tensor& round = t2.value(upsample_nearest2(t2, max_pool2(t2, c)));
  CHECK(bitwise_equal(round, t2.value(c)));

  Rng rng(59);
  const Tensor xr = random_tensor({1, 2, 3, 3}, rng);
  const Tensor probe = random_tensor({1, 2, 6, 6}, rng);
  Tape t3;
  Var xv = t3.leaf(xr, true);
  t3.backward(inner(t3, upsample_nearest2(t3, xv), probe));
  auto f = [&](const Tensor& v) {
    Tape t4;
    return t4.value(inner(t4, upsample_nearest2(t4, t4.leaf(v)), probe))[0];
  };
  CHECK(compare_grad_fd(f, xr, t3.grad(xv)).max_rel_err < 1e-6);
}

TEST_CASE("concat_channels composition and round-trip") {
  Rng rng(61);
  const Tensor a = random_tensor({1, 1, 2, 2}, rng);
  const Tensor b = random_tensor({1, 2, 2, 2}, rng);

  Tape t;
  Var cat = concat_channels(t, t.leaf(a), t.leaf(b));
  CHECK(t.value(cat).shape() == Shape{1, 3, 2, 2});

  // concatenating an empty (zero-channel) tensor returns the input bit-exactly
  Var with_empty = concat_channels(t, t.leaf(a), t.leaf(Tensor({1, 0, 2, 2})));
  CHECK(bitwise_equal(t.value(with_empty), a));

  // split-after-concat returns the originals bit-exactly
  const Tensor& cv = t.value(cat);
  Tensor back_a({1, 1, 2, 2}), back_b({1, 2, 2, 2});
  std::copy_n(cv.data(), 4, back_a.data());
  std::copy_n(cv.data() + 4, 8, back_b.data());
  CHECK(bitwise_equal(back_a, a));
  CHECK(bitwise_equal(back_b, b));

  Var bad = t.leaf(Tensor::zeros({1, 1, 3, 2}));
  CHECK_THROWS_AS(concat_channels(t, t.leaf(a), bad), std::invalid_argument);

  // gradient splits back onto both inputs
  const Tensor probe = random_tensor({1, 3, 2, 2}, rng);
  Tape t2;
  Var av = t2.leaf(a, true), bv = t2.leaf(b, true);
  t2.backward(inner(t2, concat_channels(t2, av, bv), probe));
  auto fa = [&](const Tensor& v) {
    Tape t3;
    return t3.value(inner(t3, concat_channels(t3, t3.leaf(v), t3.leaf(b)), probe))[0];
  };
  auto fb = [&](const Tensor& v) {
    Tape t3;
    return t3.value(inner(t3, concat_channels(t3, t3.leaf(a), t3.leaf(v)), probe))[0];
  };
  CHECK(compare_grad_fd(fa, a, t2.grad(av)).max_rel_err < 1e-6);
  CHECK(compare_grad_fd(fb, b, t2.grad(bv)).max_rel_err < 1e-6);
}

TEST_CASE("mean_over_set identities, oracle and permutation invariance") {
  Rng rng(67);
  const Tensor one = random_tensor({1, 2, 3, 3}, rng);
  Tape t;
  CHECK(bitwise_equal(t.value(mean_over_set(t, t.leaf(one))),
                      one.reshaped({2, 3, 3})));

  // {T, -T} averages to zero
  Tensor pm({2, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    pm[i] = static_cast<double>(i) + 1.0;
    pm[4 + i] = -pm[i];
  }
  const Tensor& z = t.value(mean_over_set(t, t.leaf(pm)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == 0.0);

  // S = 5 against a loop-accumulated mean
  const Tensor stack = random_tensor({5, 2, 3, 4}, rng);
  const Tensor& got = t.value(mean_over_set(t, t.leaf(stack)));
  Tensor want({2, 3, 4});
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t i = 0; i < want.numel(); ++i) want[i] += stack[s * want.numel() + i];
  want *= 1.0 / 5.0;
  CHECK(max_abs_diff(got, want) < 1e-12);

  // permuting the set changes the result by at most rounding
  Tensor permuted(stack.shape());
  const std::size_t sl = want.numel();
  const std::size_t perm[5] = {3, 0, 4, 2, 1};
  for (std::size_t s = 0; s < 5; ++s)
    std::copy_n(stack.data() + perm[s] * sl, sl, permuted.data() + s * sl);
  const Tensor& got_perm = t.value(mean_over_set(t, t.leaf(permuted)));
  CHECK(max_abs_diff(got, got_perm) < 1e-12);

  CHECK_THROWS_AS(mean_over_set(t, t.leaf(Tensor({0, 2, 2, 2}))), std::invalid_argument);

  const Tensor probe = random_tensor({2, 3, 4}, rng);
  Tape t2;
  Var sv = t2.leaf(stack, true);
  t2.backward(inner(t2, mean_over_set(t2, sv), probe));
  auto f = [&](const Tensor& v) {
    Tape t3;
    return t3.value(inner(t3, mean_over_set(t3, t3.leaf(v)), probe))[0];
  };
  CHECK(compare_grad_fd(f, stack, t2.grad(sv)).max_rel_err < 1e-6);
}

TEST_CASE("repeat_set replicates and its gradient sums") {
  Rng rng(71);
  const Tensor x = random_tensor({2, 1, 2, 2}, rng);
  Tape t;
  Var xv = t.leaf(x, true);
  Var rep = repeat_set(t, xv, 3);
  CHECK(t.value(rep).shape() == Shape{3, 2, 1, 2, 2});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < x.numel(); ++i)
      CHECK(t.value(rep)[s * x.numel() + i] == x[i]);
  t.backward(sum_all(t, rep));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(t.grad(xv)[i] == 3.0);
}

TEST_CASE("l1_loss values, oracle and gradients") {
  Rng rng(73);
  const Tensor a = random_tensor({3, 4}, rng);
  Tape t;
  CHECK(t.value(l1_loss(t, t.leaf(a), t.leaf(a)))[0] == 0.0);

  Tensor plus1 = a;
  plus1 += 1.0;
  CHECK(t.value(l1_loss(t, t.leaf(plus1), t.leaf(a)))[0] == doctest::Approx(1.0));

  const Tensor b = random_tensor({3, 4}, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) want += std::fabs(a[i] - b[i]);
  want /= static_cast<double>(a.numel());
  CHECK(t.value(l1_loss(t, t.leaf(a), t.leaf(b)))[0] == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(l1_loss(t, t.leaf(a), t.leaf(Tensor::zeros({4, 3}))),
                  std::invalid_argument);

  Tape t2;
  Var av = t2.leaf(a, true), bv = t2.leaf(b, true);
  t2.backward(l1_loss(t2, av, bv));
  auto fa = [&](const Tensor& v) {
    Tape t3;
    return t3.value(l1_loss(t3, t3.leaf(v), t3.leaf(b)))[0];
  };
  auto fb = [&](const Tensor& v) {
    Tape t3;
    return t3.value(l1_loss(t3, t3.leaf(a), t3.leaf(v)))[0];
  };
  CHECK(compare_grad_fd(fa, a, t2.grad(av)).max_rel_err < 1e-6);
  CHECK(compare_grad_fd(fb, b, t2.grad(bv)).max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------

TEST_CASE("backward seeds sum gradients with ones") {
  Rng rng(79);
  const Tensor x = random_tensor({2, 3}, rng);
  Tape t;
  Var xv = t.leaf(x, true);
  t.backward(sum_all(t, xv));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(t.grad(xv)[i] == 1.0);
}

TEST_CASE("backward through conv + l1 matches finite differences on the weights") {
  Rng rng(83);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  const Tensor w = random_tensor({2, 1, 3, 3}, rng);
  const Tensor b = random_tensor({2}, rng);
  const Tensor target = random_tensor({1, 2, 5, 5}, rng);

  Tape t;
  Var wv = t.leaf(w, true);
  t.backward(l1_loss(t, conv2d(t, t.leaf(x), wv, t.leaf(b), 1), t.leaf(target)));
  auto f = [&](const Tensor& v) {
    Tape t2;
    return t2.value(
        l1_loss(t2, conv2d(t2, t2.leaf(x), t2.leaf(v), t2.leaf(b), 1), t2.leaf(target)))[0];
  };
  CHECK(compare_grad_fd(f, w, t.grad(wv), 1e-5).max_rel_err < 1e-4);
}

TEST_CASE("parameters untouched by the loss receive zero gradients") {
  ParamStore store;
  Parameter& used = store.add("used", Tensor::from({2}, {1.0, 2.0}));
  Parameter& unused = store.add("unused", Tensor::from({3}, {1.0, 2.0, 3.0}));
  Tape t;
  Var uv = t.param(used);
  t.param(unused);  // bound to the tape but not part of the loss
  t.backward(sum_all(t, uv));
  REQUIRE_FALSE(used.grad.absent());
  REQUIRE_FALSE(unused.grad.absent());
  CHECK(used.grad[0] == 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(unused.grad[i] == 0.0);
}

TEST_CASE("gradients accumulate over multiple uses of the same value") {
  Rng rng(89);
  const Tensor x = random_tensor({1, 1, 2, 2}, rng);
  const Tensor pa = random_tensor({1, 2, 2, 2}, rng);
  Tape t;
  Var xv = t.leaf(x, true);
  Var cat = concat_channels(t, xv, xv);  // both halves pull gradient into x
  t.backward(inner(t, cat, pa));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(t.grad(xv)[i] == doctest::Approx(pa[i] + pa[4 + i]));

  // the same Parameter bound twice accumulates both contributions
  ParamStore store;
  Parameter& p = store.add("p", x);
  Tape t2;
  Var p1 = t2.param(p), p2 = t2.param(p);
  t2.backward(inner(t2, concat_channels(t2, p1, p2), pa));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(p.grad[i] == doctest::Approx(pa[i] + pa[4 + i]));
}

TEST_CASE("backward rejects non-scalar losses and double sweeps") {
  Tape t;
  Var x = t.leaf(Tensor::zeros({2, 2}), true);
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
  Var s = sum_all(t, x);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), std::logic_error);
}
