#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "seis/model.hpp"
#include "seis/tensor.hpp"

using namespace seis;
using seisicl_test::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("seisicl_model_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

/// Independent loop composition of one CrossBlock used as the oracle:
/// z_s = conv(u || V_s), u' = lrelu(bn(conv3(mean_s z_s))),
/// V'_s = lrelu(bn(conv2(z_s))), with batch statistics pooled over the set.
Tensor reference_conv(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
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

Tensor reference_bn_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          double eps = 1e-5) {
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) s += x[(n * C + c) * HW + i];
    const double mu = s / static_cast<double>(N * HW);
    double sq = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = x[(n * C + c) * HW + i] - mu;
        sq += d * d;
      }
    const double invstd = 1.0 / std::sqrt(sq / static_cast<double>(N * HW) + eps);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i)
        y[(n * C + c) * HW + i] =
            gamma[c] * (x[(n * C + c) * HW + i] - mu) * invstd + beta[c];
  }
  return y;
}

Tensor reference_lrelu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] >= 0 ? x[i] : slope * x[i];
  return y;
}

struct BlockFixture {
  Tensor w1, b1, w2, b2, w3, b3, gu, bu, gv, bv;
  Tensor rm_u, rv_u, rm_v, rv_v;
  CrossBlockVars vars(Tape& t) {
    CrossBlockVars p;
    p.conv1_w = t.leaf(w1);
    p.conv1_b = t.leaf(b1);
    p.conv2_w = t.leaf(w2);
    p.conv2_b = t.leaf(b2);
    p.conv3_w = t.leaf(w3);
    p.conv3_b = t.leaf(b3);
    p.norm_u_gamma = t.leaf(gu);
    p.norm_u_beta = t.leaf(bu);
    p.norm_v_gamma = t.leaf(gv);
    p.norm_v_beta = t.leaf(bv);
    p.norm_u_buffers = {&rm_u, &rv_u};
    p.norm_v_buffers = {&rm_v, &rv_v};
    return p;
  }
};

BlockFixture make_block(Rng& rng, std::size_t cu, std::size_t cv, std::size_t c) {
  BlockFixture f;
  f.w1 = random_tensor({c, cu + cv, 3, 3}, rng, -0.3, 0.3);
  f.b1 = random_tensor({c}, rng, -0.1, 0.1);
  f.w2 = random_tensor({c, c, 3, 3}, rng, -0.3, 0.3);
  f.b2 = random_tensor({c}, rng, -0.1, 0.1);
  f.w3 = random_tensor({c, c, 3, 3}, rng, -0.3, 0.3);
  f.b3 = random_tensor({c}, rng, -0.1, 0.1);
  f.gu = random_tensor({c}, rng, 0.5, 1.5);
  f.bu = random_tensor({c}, rng, -0.3, 0.3);
  f.gv = random_tensor({c}, rng, 0.5, 1.5);
  f.bv = random_tensor({c}, rng, -0.3, 0.3);
  f.rm_u = Tensor::zeros({c});
  f.rv_u = Tensor::ones({c});
  f.rm_v = Tensor::zeros({c});
  f.rv_v = Tensor::ones({c});
  return f;
}

Tensor make_support(Rng& rng, std::size_t S, std::size_t B, std::size_t C,
                    std::size_t H, std::size_t W) {
  return random_tensor({S, B, C, H, W}, rng);
}

Model random_model(Arch arch, ModelSpec spec, std::uint64_t seed) {
  return Model(arch, std::move(spec), seed);
}

SupportSet random_support_set(Rng& rng, std::size_t S, std::size_t H, std::size_t W) {
  SupportSet s;
  s.prompts = random_tensor({S, H, W}, rng);
  s.prompt_labels = random_tensor({S, H, W}, rng);
  return s;
}

SupportSet permute_support(const SupportSet& s, const std::vector<std::size_t>& perm) {
  SupportSet out;
  out.prompts = Tensor(s.prompts.shape());
  out.prompt_labels = Tensor(s.prompt_labels.shape());
  const std::size_t hw = s.prompts.dim(1) * s.prompts.dim(2);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(s.prompts.data() + perm[i] * hw, hw, out.prompts.data() + i * hw);
    std::copy_n(s.prompt_labels.data() + perm[i] * hw, hw,
                out.prompt_labels.data() + i * hw);
  }
  return out;
}

}  // namespace

TEST_CASE("crossblock matches the direct equation composition") {
  Rng rng(101);
  const std::size_t S = 2, B = 1, Cu = 1, Cv = 2, C = 3, H = 4, W = 4;
  BlockFixture f = make_block(rng, Cu, Cv, C);
  const Tensor u = random_tensor({B, Cu, H, W}, rng);
  const Tensor V = make_support(rng, S, B, Cv, H, W);

  Tape t;
  auto [u_out, v_out] =
      crossblock_forward(t, f.vars(t), t.leaf(u), t.leaf(V), Mode::train, 0.01, 1);

  // oracle path
  std::vector<Tensor> z(S);
  for (std::size_t s = 0; s < S; ++s) {
    Tensor cat({B, Cu + Cv, H, W});
    std::copy_n(u.data(), Cu * H * W, cat.data());
    std::copy_n(V.data() + s * Cv * H * W, Cv * H * W, cat.data() + Cu * H * W);
    z[s] = reference_conv(cat, f.w1, f.b1, 1);
  }
  Tensor zm = z[0];
  for (std::size_t s = 1; s < S; ++s) zm += z[s];
  zm *= 1.0 / static_cast<double>(S);
  const Tensor u_want =
      reference_lrelu(reference_bn_train(reference_conv(zm, f.w3, f.b3, 1), f.gu, f.bu),
                      0.01);
  CHECK(max_abs_diff(t.value(u_out).reshaped(u_want.shape()), u_want) < 1e-12);

  // support stream: conv2 over each z_s with statistics pooled over the set
  Tensor zcat({S * B, C, H, W});
  for (std::size_t s = 0; s < S; ++s)
    std::copy_n(z[s].data(), C * H * W, zcat.data() + s * C * H * W);
  const Tensor v_want =
      reference_lrelu(reference_bn_train(reference_conv(zcat, f.w2, f.b2, 1), f.gv, f.bv),
                      0.01);
  CHECK(max_abs_diff(t.value(v_out).reshaped(v_want.shape()), v_want) < 1e-12);
}

TEST_CASE("crossblock is permutation invariant in u and equivariant in V") {
  Rng rng(103);
  const std::size_t S = 4, B = 2, Cu = 2, Cv = 3, C = 4, H = 4, W = 6;
  BlockFixture f = make_block(rng, Cu, Cv, C);
  const Tensor u = random_tensor({B, Cu, H, W}, rng);
  const Tensor V = make_support(rng, S, B, Cv, H, W);

  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor Vp(V.shape());
  const std::size_t sl = B * Cv * H * W;
  for (std::size_t s = 0; s < S; ++s)
    std::copy_n(V.data() + perm[s] * sl, sl, Vp.data() + s * sl);

  Tape t1, t2;
  auto [u1, v1] = crossblock_forward(t1, f.vars(t1), t1.leaf(u), t1.leaf(V),
                                     Mode::eval, 0.01, 1);
  auto [u2, v2] = crossblock_forward(t2, f.vars(t2), t2.leaf(u), t2.leaf(Vp),
                                     Mode::eval, 0.01, 1);
  CHECK(max_abs_diff(t1.value(u1), t2.value(u2)) < 1e-12);

  const std::size_t ol = B * C * H * W;
  for (std::size_t s = 0; s < S; ++s) {
    Tensor a({ol}), b({ol});
    std::copy_n(t1.value(v1).data() + perm[s] * ol, ol, a.data());
    std::copy_n(t2.value(v2).data() + s * ol, ol, b.data());
    CHECK(bitwise_equal(a, b));
  }
}

TEST_CASE("crossblock with duplicated support equals the singleton result bit-exactly") {
  Rng rng(107);
  const std::size_t B = 1, Cu = 1, Cv = 2, C = 2, H = 4, W = 4;
  BlockFixture f = make_block(rng, Cu, Cv, C);
  const Tensor u = random_tensor({B, Cu, H, W}, rng);
  const Tensor V1 = make_support(rng, 1, B, Cv, H, W);
  Tensor V2({2, B, Cv, H, W});
  std::copy_n(V1.data(), V1.numel(), V2.data());
  std::copy_n(V1.data(), V1.numel(), V2.data() + V1.numel());

  Tape t1, t2;
  auto [ua, va] = crossblock_forward(t1, f.vars(t1), t1.leaf(u), t1.leaf(V1),
                                     Mode::eval, 0.01, 1);
  auto [ub, vb] = crossblock_forward(t2, f.vars(t2), t2.leaf(u), t2.leaf(V2),
                                     Mode::eval, 0.01, 1);
  CHECK(bitwise_equal(t1.value(ua), t2.value(ub)));
  (void)va;
  (void)vb;
}

TEST_CASE("contextseisnet output has the query's shape and demands divisible dims") {
  Rng rng(109);
  Model m = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"), 7);
  const SupportSet sup = random_support_set(rng, 3, 16, 8);
  const Tensor x = random_tensor({16, 8}, rng);
  const Tensor y = m.predict(x, sup);
  CHECK(y.shape() == Shape{16, 8});

  const Tensor bad = random_tensor({10, 8}, rng);  // 10 not divisible by 4
  SupportSet bad_sup = random_support_set(rng, 2, 10, 8);
  CHECK_THROWS_AS(m.predict(bad, bad_sup), std::invalid_argument);

  SupportSet empty;
  empty.prompts = Tensor({0, 16, 8});
  empty.prompt_labels = Tensor({0, 16, 8});
  CHECK_THROWS_AS(m.predict(x, empty), std::invalid_argument);
}

TEST_CASE("eval-mode predictions are invariant to support permutation and duplication") {
  Rng rng(113);
  for (const std::size_t S : {1u, 2u, 3u, 5u}) {
    CAPTURE(S);
    Model m = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"),
                           1000 + S);
    const Tensor x = random_tensor({16, 8}, rng);
    const SupportSet sup = random_support_set(rng, S, 16, 8);
    const Tensor base = m.predict(x, sup);

    std::vector<std::size_t> perm(S);
    for (std::size_t i = 0; i < S; ++i) perm[i] = S - 1 - i;
    CHECK(max_abs_diff(base, m.predict(x, permute_support(sup, perm))) < 1e-10);

    SupportSet doubled;
    doubled.prompts = Tensor({2 * S, 16, 8});
    doubled.prompt_labels = Tensor({2 * S, 16, 8});
    for (std::size_t rep = 0; rep < 2; ++rep) {
      std::copy_n(sup.prompts.data(), sup.prompts.numel(),
                  doubled.prompts.data() + rep * sup.prompts.numel());
      std::copy_n(sup.prompt_labels.data(), sup.prompt_labels.numel(),
                  doubled.prompt_labels.data() + rep * sup.prompt_labels.numel());
    }
    CHECK(max_abs_diff(base, m.predict(x, doubled)) < 1e-10);
  }
}

TEST_CASE("the same model accepts any support size at inference") {
  Rng rng(127);
  Model m = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"), 5);
  const Tensor x = random_tensor({16, 8}, rng);
  for (const std::size_t S : {1u, 2u, 4u, 7u}) {
    const Tensor y = m.predict(x, random_support_set(rng, S, 16, 8));
    CHECK(y.shape() == Shape{16, 8});
  }
}

TEST_CASE("eval-mode prediction is deterministic") {
  Rng rng(131);
  Model m = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"), 11);
  const Tensor x = random_tensor({16, 8}, rng);
  const SupportSet sup = random_support_set(rng, 3, 16, 8);
  CHECK(bitwise_equal(m.predict(x, sup), m.predict(x, sup)));
}

TEST_CASE("unet forward shape and zero-weight degeneracy") {
  Rng rng(137);
  Model m = random_model(Arch::unet, ModelSpec::preset("tiny"), 3);
  const Tensor x = random_tensor({16, 8}, rng);
  CHECK(m.predict(x, SupportSet{}).shape() == Shape{16, 8});

  for (Parameter& p : m.params())
    if (p.trainable) p.value.fill(0.0);
  const Tensor y = m.predict(x, SupportSet{});
  CHECK(y.max_abs() == 0.0);
}

TEST_CASE("parameter counts match an independently computed closed form") {
  // tiny contextseisnet: blocks (in_u, in_v, out):
  //   enc0 (1,2,8) enc1 (8,8,16) enc2 (16,16,32) dec1 (48,48,16) dec0 (24,24,8)
  // conv1: out*(in_u+in_v)*9+out, conv2/conv3: out*out*9+out, norms: 2*out each;
  // the terminal block (dec0) carries no conv2/norm_v.
  auto cross = [](std::size_t in_u, std::size_t in_v, std::size_t out) {
    return (out * (in_u + in_v) * 9 + out) + 2 * (out * out * 9 + out) + 4 * out;
  };
  auto cross_term = [](std::size_t in_u, std::size_t in_v, std::size_t out) {
    return (out * (in_u + in_v) * 9 + out) + (out * out * 9 + out) + 2 * out;
  };
  auto dbl = [](std::size_t in, std::size_t out) {
    return (out * in * 9 + out) + (out * out * 9 + out) + 4 * out;
  };
  const std::size_t tiny_csn = cross(1, 2, 8) + cross(8, 8, 16) + cross(16, 16, 32) +
                               cross(48, 48, 16) + cross_term(24, 24, 8) + (8 + 1);
  const std::size_t tiny_unet =
      dbl(1, 8) + dbl(8, 16) + dbl(16, 32) + dbl(48, 16) + dbl(24, 8) + (8 + 1);

  CHECK(param_count(ModelSpec::preset("tiny"), Arch::contextseisnet) == tiny_csn);
  CHECK(param_count(ModelSpec::preset("tiny"), Arch::unet) == tiny_unet);

  // frozen regression values, computed from the closed form above
  CHECK(tiny_csn == 58937);
  CHECK(tiny_unet == 29937);

  // instantiated models agree with the closed form
  Model csn = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"), 1);
  Model unet = random_model(Arch::unet, ModelSpec::preset("tiny"), 1);
  CHECK(csn.param_count() == tiny_csn);
  CHECK(unet.param_count() == tiny_unet);

  // single 1x1 conv head contributes weight + bias
  ModelSpec one;
  one.levels = 1;
  one.channels = {1};
  one.size_preset = "custom";
  one.use_norm = false;
  // one terminal cross block on (1,2,1) plus the 2-parameter head
  CHECK(param_count(one, Arch::contextseisnet) ==
        (1 * 3 * 9 + 1) + (1 * 1 * 9 + 1) + 2);
}

TEST_CASE("small preset lands near the four-million-parameter anchor") {
  const std::size_t n = param_count(ModelSpec::preset("small"), Arch::contextseisnet);
  CHECK(n > 3'600'000);
  CHECK(n < 4'400'000);
}

TEST_CASE("one training step leaves no dead branches") {
  Rng rng(139);
  ModelSpec spec;
  spec.levels = 2;
  spec.channels = {4, 8};
  spec.size_preset = "custom";
  Model m(Arch::contextseisnet, spec, 17);

  Tape t;
  Var x = t.leaf(random_tensor({2, 1, 8, 8}, rng));
  Var sup = t.leaf(random_tensor({2, 2, 2, 8, 8}, rng));
  Var target = t.leaf(random_tensor({2, 1, 8, 8}, rng));
  Var loss = l1_loss(t, m.forward(t, x, sup, Mode::train), target);
  t.backward(loss);

  for (const Parameter& p : m.params()) {
    if (!p.trainable) continue;
    REQUIRE_FALSE(p.grad.absent());
    double norm = 0.0;
    for (std::size_t i = 0; i < p.grad.numel(); ++i) norm += p.grad[i] * p.grad[i];
    if (p.name.find("beta") != std::string::npos) continue;  // analytically benign zeros
    CAPTURE(p.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("checkpoints round-trip parameters, buffers and predictions") {
  Rng rng(149);
  Model m = random_model(Arch::contextseisnet, ModelSpec::preset("tiny"), 23);

  // a train-mode pass makes the running statistics non-trivial
  Tape t;
  m.forward(t, t.leaf(random_tensor({2, 1, 16, 8}, rng)),
            t.leaf(random_tensor({2, 2, 2, 16, 8}, rng)), Mode::train);

  const fs::path dir = temp_dir();
  CheckpointMeta meta;
  meta.model_id = "csn-test";
  meta.epoch = 3;
  m.save(dir, meta);

  Model back = Model::load(dir);
  CHECK(back.arch() == Arch::contextseisnet);
  CHECK(back.model_id() == "csn-test");
  CHECK(back.param_count() == m.param_count());
  for (const Parameter& p : m.params()) {
    const Parameter* q = back.params().find(p.name);
    REQUIRE(q != nullptr);
    CHECK(bitwise_equal(p.value, q->value));
    CHECK(p.trainable == q->trainable);
  }

  const Tensor x = random_tensor({16, 8}, rng);
  const SupportSet sup = random_support_set(rng, 2, 16, 8);
  CHECK(bitwise_equal(m.predict(x, sup), back.predict(x, sup)));
  fs::remove_all(dir);
}

TEST_CASE("no-norm specs build, run and checkpoint") {
  Rng rng(151);
  ModelSpec spec = ModelSpec::preset("tiny");
  spec.use_norm = false;
  Model m(Arch::contextseisnet, spec, 29);
  for (const Parameter& p : m.params())
    CHECK(p.name.find("norm") == std::string::npos);
  const Tensor x = random_tensor({16, 8}, rng);
  CHECK(m.predict(x, random_support_set(rng, 2, 16, 8)).shape() == Shape{16, 8});

  const fs::path dir = temp_dir();
  m.save(dir);
  Model back = Model::load(dir);
  CHECK_FALSE(back.spec().use_norm);
  fs::remove_all(dir);
}
