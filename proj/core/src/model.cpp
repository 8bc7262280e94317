#include "seis/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "seis/errors.hpp"
#include "seis/rng.hpp"
#include "seis/tensor_io.hpp"

namespace seis {

using nlohmann::json;

std::string arch_name(Arch arch) {
  return arch == Arch::contextseisnet ? "contextseisnet" : "unet";
}

Arch arch_from_name(std::string_view name) {
  if (name == "contextseisnet") return Arch::contextseisnet;
  if (name == "unet") return Arch::unet;
  throw std::invalid_argument("unknown architecture: " + std::string(name));
}

void SupportSet::validate() const {
  if (prompts.ndim() != 3 || prompt_labels.ndim() != 3)
    throw std::invalid_argument("support set: prompts and labels must be [S,H,W]");
  if (!prompts.same_shape(prompt_labels))
    throw std::invalid_argument("support set: prompts and labels must shape-match");
  if (prompts.dim(0) < 1)
    throw std::invalid_argument("support set: need at least one prompt");
}

ModelSpec ModelSpec::preset(std::string_view name) {
  ModelSpec s;
  s.size_preset = std::string(name);
  if (name == "tiny") {
    s.channels = {8, 16, 32};
  } else if (name == "small") {
    s.channels = {32, 64, 128, 256};
  } else if (name == "medium") {
    s.channels = {48, 96, 192, 384};
  } else if (name == "large") {
    s.channels = {64, 128, 256, 512};
  } else {
    throw std::invalid_argument("unknown size preset: " + std::string(name));
  }
  s.levels = static_cast<int>(s.channels.size());
  return s;
}

void ModelSpec::validate() const {
  if (levels < 1) throw std::invalid_argument("spec: levels must be >= 1");
  if (channels.size() != static_cast<std::size_t>(levels))
    throw std::invalid_argument("spec: need one channel width per level");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw std::invalid_argument("spec: channel widths must be positive");
    if (i > 0 && channels[i] < channels[i - 1])
      throw std::invalid_argument("spec: channel widths must be nondecreasing");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("spec: kernel size must be odd");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("spec: leaky slope must be in (0,1)");
}

// ---------------------------------------------------------------------------
// wiring plan, shared by the builder and the closed-form parameter count

namespace {

struct ConvPlan {
  std::string name;
  int cout, cin, k;
};
struct NormPlan {
  std::string name;
  int c;
};
struct WiringPlan {
  std::vector<ConvPlan> convs;
  std::vector<NormPlan> norms;
};

WiringPlan wiring_plan(const ModelSpec& spec, Arch arch) {
  spec.validate();
  WiringPlan plan;
  const auto& ch = spec.channels;
  const int L = spec.levels, k = spec.kernel_size;

  // The terminal block feeds only the head; its support stream would be
  // dead weight, so conv2/norm_v are omitted there.
  auto cross_block = [&](const std::string& prefix, int in_u, int in_v, int out,
                         bool terminal) {
    plan.convs.push_back({prefix + ".conv1", out, in_u + in_v, k});
    if (!terminal) plan.convs.push_back({prefix + ".conv2", out, out, k});
    plan.convs.push_back({prefix + ".conv3", out, out, k});
    if (spec.use_norm) {
      plan.norms.push_back({prefix + ".norm_u", out});
      if (!terminal) plan.norms.push_back({prefix + ".norm_v", out});
    }
  };
  auto double_conv = [&](const std::string& prefix, int in, int out) {
    plan.convs.push_back({prefix + ".conv_a", out, in, k});
    plan.convs.push_back({prefix + ".conv_b", out, out, k});
    if (spec.use_norm) {
      plan.norms.push_back({prefix + ".norm_a", out});
      plan.norms.push_back({prefix + ".norm_b", out});
    }
  };

  for (int i = 0; i < L; ++i) {
    const std::string prefix = "enc" + std::to_string(i);
    if (arch == Arch::contextseisnet) {
      const int in_u = i == 0 ? 1 : ch[static_cast<std::size_t>(i) - 1];
      const int in_v = i == 0 ? 2 : ch[static_cast<std::size_t>(i) - 1];
      cross_block(prefix, in_u, in_v, ch[static_cast<std::size_t>(i)], L == 1);
    } else {
      const int in = i == 0 ? 1 : ch[static_cast<std::size_t>(i) - 1];
      double_conv(prefix, in, ch[static_cast<std::size_t>(i)]);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    const std::string prefix = "dec" + std::to_string(i);
    const int in = ch[static_cast<std::size_t>(i)] + ch[static_cast<std::size_t>(i) + 1];
    if (arch == Arch::contextseisnet)
      cross_block(prefix, in, in, ch[static_cast<std::size_t>(i)], i == 0);
    else
      double_conv(prefix, in, ch[static_cast<std::size_t>(i)]);
  }
  plan.convs.push_back({"head", 1, ch[0], 1});
  return plan;
}

}  // namespace

std::size_t param_count(const ModelSpec& spec, Arch arch) {
  const WiringPlan plan = wiring_plan(spec, arch);
  std::size_t n = 0;
  for (const ConvPlan& c : plan.convs)
    n += static_cast<std::size_t>(c.cout) * c.cin * c.k * c.k + c.cout;
  for (const NormPlan& nm : plan.norms) n += 2 * static_cast<std::size_t>(nm.c);
  return n;
}

// ---------------------------------------------------------------------------
// construction

Model::Model(Arch arch, ModelSpec spec, std::uint64_t init_seed)
    : arch_(arch), spec_(std::move(spec)) {
  spec_.validate();
  model_id_ = arch_name(arch_) + "-" + spec_.size_preset;
  build(init_seed);
}

void Model::build(std::uint64_t init_seed) {
  Rng rng(mix_seed(init_seed, 0x696e6974ull /* "init" */));
  const WiringPlan plan = wiring_plan(spec_, arch_);

  auto init_conv = [&](const ConvPlan& c) {
    ConvRef ref;
    const std::size_t fan_in = static_cast<std::size_t>(c.cin) * c.k * c.k;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w({static_cast<std::size_t>(c.cout), static_cast<std::size_t>(c.cin),
              static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.k)});
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    Tensor b({static_cast<std::size_t>(c.cout)});
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-bound, bound);
    ref.w = &store_.add(c.name + ".weight", std::move(w));
    ref.b = &store_.add(c.name + ".bias", std::move(b));
    return ref;
  };
  auto init_norm = [&](const NormPlan& nm) {
    NormRef ref;
    const std::size_t c = static_cast<std::size_t>(nm.c);
    ref.gamma = &store_.add(nm.name + ".gamma", Tensor::ones({c}));
    ref.beta = &store_.add(nm.name + ".beta", Tensor::zeros({c}));
    ref.running_mean = &store_.add(nm.name + ".running_mean", Tensor::zeros({c}), false);
    ref.running_var = &store_.add(nm.name + ".running_var", Tensor::ones({c}), false);
    return ref;
  };

  // Parameters are registered in plan order (conv weights first per block,
  // then the block's norms), which fixes the checkpoint layout.
  std::size_t ci = 0, ni = 0;
  auto next_cross = [&](bool terminal) {
    CrossBlockRefs blk;
    blk.conv1 = init_conv(plan.convs[ci++]);
    if (!terminal) blk.conv2 = init_conv(plan.convs[ci++]);
    blk.conv3 = init_conv(plan.convs[ci++]);
    if (spec_.use_norm) {
      blk.norm_u = init_norm(plan.norms[ni++]);
      if (!terminal) blk.norm_v = init_norm(plan.norms[ni++]);
    }
    return blk;
  };
  auto next_double = [&]() {
    DoubleConvRefs blk;
    blk.conv_a = init_conv(plan.convs[ci++]);
    blk.conv_b = init_conv(plan.convs[ci++]);
    if (spec_.use_norm) {
      blk.norm_a = init_norm(plan.norms[ni++]);
      blk.norm_b = init_norm(plan.norms[ni++]);
    }
    return blk;
  };

  const int L = spec_.levels;
  if (arch_ == Arch::contextseisnet) {
    for (int i = 0; i < L; ++i) cs_enc_.push_back(next_cross(L == 1));
    for (int i = L - 2; i >= 0; --i) cs_dec_.push_back(next_cross(i == 0));
  } else {
    for (int i = 0; i < L; ++i) un_enc_.push_back(next_double());
    for (int i = L - 2; i >= 0; --i) un_dec_.push_back(next_double());
  }
  head_ = init_conv(plan.convs[ci++]);
}

// ---------------------------------------------------------------------------
// forward

std::pair<Var, Var> crossblock_forward(Tape& t, const CrossBlockVars& p, Var u, Var V,
                                       Mode mode, double leaky_slope, int padding) {
  // Copy, not reference: growing the tape invalidates node references.
  const Shape vs = t.value(V).shape();  // [S,B,Cv,h,w]
  if (vs.size() != 5) throw std::invalid_argument("crossblock: support must be 5-d");
  if (vs[0] < 1) throw std::invalid_argument("crossblock: empty support set");
  const std::size_t S = vs[0], B = vs[1], h = vs[3], w = vs[4];
  if (t.value(u).ndim() != 4 || t.value(u).dim(0) != B || t.value(u).dim(2) != h ||
      t.value(u).dim(3) != w)
    throw std::invalid_argument("crossblock: query/support spatial mismatch");

  Var uS = repeat_set(t, u, S);
  Var cat = concat_channels(t, uS, V);  // [S,B,Cu+Cv,h,w]
  const std::size_t cin = t.value(cat).dim(2);
  Var z = conv2d(t, reshape(t, cat, {S * B, cin, h, w}), p.conv1_w, p.conv1_b, padding);
  const std::size_t cout = t.value(z).dim(1);

  Var zm = mean_over_set(t, reshape(t, z, {S, B, cout, h, w}));
  Var pre_u = conv2d(t, zm, p.conv3_w, p.conv3_b, padding);
  if (p.use_norm)
    pre_u = batch_norm(t, pre_u, p.norm_u_gamma, p.norm_u_beta, p.norm_u_buffers, mode);
  Var u_out = leaky_relu(t, pre_u, leaky_slope);
  if (!p.update_support) return {u_out, Var{}};

  Var pre_v = conv2d(t, z, p.conv2_w, p.conv2_b, padding);
  if (p.use_norm)
    pre_v = batch_norm(t, pre_v, p.norm_v_gamma, p.norm_v_beta, p.norm_v_buffers, mode);
  Var v_out = reshape(t, leaky_relu(t, pre_v, leaky_slope), {S, B, cout, h, w});
  return {u_out, v_out};
}

std::pair<Var, Var> Model::crossblock(Tape& t, const CrossBlockRefs& blk, Var u,
                                      Var V, Mode mode) {
  CrossBlockVars p;
  p.update_support = blk.conv2.w != nullptr;
  p.conv1_w = t.param(*blk.conv1.w);
  p.conv1_b = t.param(*blk.conv1.b);
  if (p.update_support) {
    p.conv2_w = t.param(*blk.conv2.w);
    p.conv2_b = t.param(*blk.conv2.b);
  }
  p.conv3_w = t.param(*blk.conv3.w);
  p.conv3_b = t.param(*blk.conv3.b);
  p.use_norm = spec_.use_norm;
  if (spec_.use_norm) {
    p.norm_u_gamma = t.param(*blk.norm_u.gamma);
    p.norm_u_beta = t.param(*blk.norm_u.beta);
    p.norm_u_buffers = {&blk.norm_u.running_mean->value, &blk.norm_u.running_var->value};
    if (p.update_support) {
      p.norm_v_gamma = t.param(*blk.norm_v.gamma);
      p.norm_v_beta = t.param(*blk.norm_v.beta);
      p.norm_v_buffers = {&blk.norm_v.running_mean->value,
                          &blk.norm_v.running_var->value};
    }
  }
  return crossblock_forward(t, p, u, V, mode, spec_.leaky_slope,
                            (spec_.kernel_size - 1) / 2);
}

Var Model::double_conv(Tape& t, const DoubleConvRefs& blk, Var u, Mode mode) {
  const int pad = (spec_.kernel_size - 1) / 2;
  Var a = conv2d(t, u, t.param(*blk.conv_a.w), t.param(*blk.conv_a.b), pad);
  if (spec_.use_norm)
    a = batch_norm(t, a, t.param(*blk.norm_a.gamma), t.param(*blk.norm_a.beta),
                   {&blk.norm_a.running_mean->value, &blk.norm_a.running_var->value},
                   mode);
  a = leaky_relu(t, a, spec_.leaky_slope);
  Var b = conv2d(t, a, t.param(*blk.conv_b.w), t.param(*blk.conv_b.b), pad);
  if (spec_.use_norm)
    b = batch_norm(t, b, t.param(*blk.norm_b.gamma), t.param(*blk.norm_b.beta),
                   {&blk.norm_b.running_mean->value, &blk.norm_b.running_var->value},
                   mode);
  return leaky_relu(t, b, spec_.leaky_slope);
}

Var Model::forward(Tape& t, Var x, Var support, Mode mode) {
  const Tensor& xv = t.value(x);
  if (xv.ndim() != 4 || xv.dim(1) != 1)
    throw std::invalid_argument("forward: expected query [B,1,H,W]");
  const std::size_t div = static_cast<std::size_t>(1) << (spec_.levels - 1);
  if (xv.dim(2) % div != 0 || xv.dim(3) % div != 0)
    throw std::invalid_argument("forward: H and W must be divisible by 2^(levels-1)");
  return arch_ == Arch::contextseisnet ? forward_csn(t, x, support, mode)
                                       : forward_unet(t, x, mode);
}

Var Model::forward_csn(Tape& t, Var x, Var support, Mode mode) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(support);
  if (sv.ndim() != 5 || sv.dim(0) < 1)
    throw std::invalid_argument("forward: expected non-empty support [S,B,2,H,W]");
  if (sv.dim(1) != xv.dim(0) || sv.dim(2) != 2 || sv.dim(3) != xv.dim(2) ||
      sv.dim(4) != xv.dim(3))
    throw std::invalid_argument("forward: support shape " + shape_str(sv.shape()) +
                                " does not match query " + shape_str(xv.shape()));

  auto pool_set = [&](Var V) {
    const Shape s = t.value(V).shape();
    Var p = max_pool2(t, reshape(t, V, {s[0] * s[1], s[2], s[3], s[4]}));
    return reshape(t, p, {s[0], s[1], s[2], s[3] / 2, s[4] / 2});
  };
  auto upsample_set = [&](Var V) {
    const Shape s = t.value(V).shape();
    Var u2 = upsample_nearest2(t, reshape(t, V, {s[0] * s[1], s[2], s[3], s[4]}));
    return reshape(t, u2, {s[0], s[1], s[2], s[3] * 2, s[4] * 2});
  };

  Var u = x, V = support;
  std::vector<Var> skip_u, skip_v;
  const int L = spec_.levels;
  for (int i = 0; i < L; ++i) {
    auto [u2, V2] = crossblock(t, cs_enc_[static_cast<std::size_t>(i)], u, V, mode);
    u = u2;
    V = V2;
    if (i < L - 1) {
      skip_u.push_back(u);
      skip_v.push_back(V);
      u = max_pool2(t, u);
      V = pool_set(V);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    u = concat_channels(t, skip_u[static_cast<std::size_t>(i)], upsample_nearest2(t, u));
    V = concat_channels(t, skip_v[static_cast<std::size_t>(i)], upsample_set(V));
    auto [u2, V2] =
        crossblock(t, cs_dec_[static_cast<std::size_t>(L - 2 - i)], u, V, mode);
    u = u2;
    V = V2;
  }
  return conv2d(t, u, t.param(*head_.w), t.param(*head_.b), 0);
}

Var Model::forward_unet(Tape& t, Var x, Mode mode) {
  Var u = x;
  std::vector<Var> skip;
  const int L = spec_.levels;
  for (int i = 0; i < L; ++i) {
    u = double_conv(t, un_enc_[static_cast<std::size_t>(i)], u, mode);
    if (i < L - 1) {
      skip.push_back(u);
      u = max_pool2(t, u);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    u = concat_channels(t, skip[static_cast<std::size_t>(i)], upsample_nearest2(t, u));
    u = double_conv(t, un_dec_[static_cast<std::size_t>(L - 2 - i)], u, mode);
  }
  return conv2d(t, u, t.param(*head_.w), t.param(*head_.b), 0);
}

Tensor Model::predict(const Tensor& x_hw, const SupportSet& support, Mode mode) {
  if (x_hw.ndim() != 2) throw std::invalid_argument("predict: expected query [H,W]");
  const std::size_t H = x_hw.dim(0), W = x_hw.dim(1);
  Tape t;
  Var x = t.leaf(x_hw.reshaped({1, 1, H, W}));
  Var out;
  if (arch_ == Arch::unet) {
    out = forward(t, x, Var{}, mode);
  } else {
    support.validate();
    if (support.prompts.dim(1) != H || support.prompts.dim(2) != W)
      throw std::invalid_argument("predict: support panels must match the query size");
    const std::size_t S = support.size();
    Tensor sup({S, 1, 2, H, W});
    for (std::size_t s = 0; s < S; ++s) {
      std::copy_n(support.prompts.data() + s * H * W, H * W,
                  sup.data() + (s * 2 + 0) * H * W);
      std::copy_n(support.prompt_labels.data() + s * H * W, H * W,
                  sup.data() + (s * 2 + 1) * H * W);
    }
    out = forward(t, x, t.leaf(std::move(sup)), mode);
  }
  return t.value(out).reshaped({H, W});
}

// ---------------------------------------------------------------------------
// checkpoints

void Model::save(const std::filesystem::path& dir, const CheckpointMeta& meta) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + dir.string());

  json index = json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
  std::uint64_t offset = 0;
  for (const Parameter& p : store_) {
    index.push_back({{"name", p.name},
                     {"kind", p.trainable ? "param" : "buffer"},
                     {"offset", offset},
                     {"shape", p.value.shape()}});
    write_tensor(bin, p.value);
    offset = static_cast<std::uint64_t>(bin.tellp());
  }
  bin.flush();
  if (!bin) throw IoError("checkpoint parameter write failed");

  json j;
  j["version"] = 1;
  j["kind"] = "seisicl-checkpoint";
  j["architecture"] = arch_name(arch_);
  j["model_id"] = meta.model_id.empty() ? model_id_ : meta.model_id;
  j["epoch"] = meta.epoch;
  j["spec"] = {{"levels", spec_.levels},        {"channels", spec_.channels},
               {"kernel_size", spec_.kernel_size}, {"size_preset", spec_.size_preset},
               {"leaky_slope", spec_.leaky_slope}, {"use_norm", spec_.use_norm}};
  j["param_count"] = param_count();
  j["params"] = std::move(index);
  if (!meta.train_config_json.empty())
    j["train_config"] = json::parse(meta.train_config_json);

  std::ofstream out(dir / "checkpoint.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "checkpoint.json").string());
  out << j.dump(2) << "\n";
  out.flush();
  if (!out) throw IoError("checkpoint metadata write failed");
}

Model Model::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw IoError("cannot open checkpoint: " + (dir / "checkpoint.json").string());
  json j = json::parse(in);
  if (j.value("kind", "") != "seisicl-checkpoint")
    throw IoError("not a checkpoint directory: " + dir.string());

  ModelSpec spec;
  const json& js = j.at("spec");
  spec.levels = js.at("levels").get<int>();
  spec.channels = js.at("channels").get<std::vector<int>>();
  spec.kernel_size = js.at("kernel_size").get<int>();
  spec.size_preset = js.at("size_preset").get<std::string>();
  spec.leaky_slope = js.at("leaky_slope").get<double>();
  spec.use_norm = js.at("use_norm").get<bool>();

  Model m(arch_from_name(j.at("architecture").get<std::string>()), spec, 0);
  m.model_id_ = j.value("model_id", m.model_id_);

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "params.bin").string());
  for (const json& entry : j.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    Parameter* p = m.store_.find(name);
    if (!p) throw IoError("checkpoint names unknown parameter: " + name);
    bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    Tensor value = read_tensor(bin);
    if (!value.same_shape(p->value))
      throw IoError("checkpoint shape mismatch for " + name + ": file has " +
                    shape_str(value.shape()) + ", model expects " +
                    shape_str(p->value.shape()));
    p->value = std::move(value);
  }
  return m;
}

}  // namespace seis
