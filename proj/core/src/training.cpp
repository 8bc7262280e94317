#include "seis/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "seis/errors.hpp"

namespace seis {

using nlohmann::json;

void TrainConfig::validate() const {
  if (support_size < 1) throw std::invalid_argument("train config: support size must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (!(lr_max > 0.0)) throw std::invalid_argument("train config: lr_max must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: bad weight decay");
  if (!(clip_max_norm > 0.0)) throw std::invalid_argument("train config: clip norm must be positive");
  if (!(noise_lo >= 0.0 && noise_hi >= noise_lo))
    throw std::invalid_argument("train config: bad noise range");
  if (!(replace_fraction >= 0.0 && replace_fraction <= 1.0))
    throw std::invalid_argument("train config: replace fraction must be in [0,1]");
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
    throw std::invalid_argument("train config: warmup fraction must be in (0,1)");
  if (!(final_lr_frac > 0.0 && final_lr_frac <= 1.0))
    throw std::invalid_argument("train config: final lr fraction must be in (0,1]");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["support_size"] = c.support_size;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_max"] = c.lr_max;
  j["weight_decay"] = c.weight_decay;
  j["clip_max_norm"] = c.clip_max_norm;
  j["noise_lo"] = c.noise_lo;
  j["noise_hi"] = c.noise_hi;
  j["replace_fraction"] = c.replace_fraction;
  j["seed"] = c.seed;
  j["warmup_frac"] = c.warmup_frac;
  j["final_lr_frac"] = c.final_lr_frac;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.support_size = j.at("support_size").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr_max = j.at("lr_max").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.clip_max_norm = j.at("clip_max_norm").get<double>();
  c.noise_lo = j.at("noise_lo").get<double>();
  c.noise_hi = j.at("noise_hi").get<double>();
  c.replace_fraction = j.at("replace_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.warmup_frac = j.at("warmup_frac").get<double>();
  c.final_lr_frac = j.at("final_lr_frac").get<double>();
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.adam_eps = j.value("adam_eps", 1e-8);
  return c;
}

// ---------------------------------------------------------------------------
// sampling and augmentations

StepSample sample_step(const SeismicLineView& line, int support_size, Rng& rng) {
  const int M = line.cdps();
  if (support_size + 1 > M)
    throw std::invalid_argument("sample_step: need S+1 <= M, got S=" +
                                std::to_string(support_size) +
                                ", M=" + std::to_string(M));
  const auto idx =
      rng.distinct(static_cast<std::size_t>(M), static_cast<std::size_t>(support_size) + 1);
  StepSample s;
  s.x = line.dataset->gather(line.line, static_cast<int>(idx[0]));
  s.y = line.dataset->label(line.line, static_cast<int>(idx[0]));
  for (std::size_t i = 1; i < idx.size(); ++i)
    s.support.emplace_back(line.dataset->gather(line.line, static_cast<int>(idx[i])),
                           line.dataset->label(line.line, static_cast<int>(idx[i])));
  return s;
}

void random_white_noise(StepSample& s, double lo, double hi, Rng& rng) {
  if (!(lo >= 0.0 && hi >= lo))
    throw std::invalid_argument("random_white_noise: bad std range");
  if (hi == 0.0) return;
  const double frac = rng.uniform(lo, hi);
  auto corrupt = [&](Tensor& gather, Tensor& label) {
    const double sigma = frac * gather.stddev();
    if (sigma == 0.0) return;
    for (std::size_t i = 0; i < gather.numel(); ++i) gather[i] += rng.normal(0.0, sigma);
    for (std::size_t i = 0; i < label.numel(); ++i) label[i] += rng.normal(0.0, sigma);
  };
  corrupt(s.x, s.y);
  for (auto& [prompt, plabel] : s.support) corrupt(prompt, plabel);
}

std::pair<double, double> normalize_pair(Tensor& gather, Tensor& label) {
  const double mu = gather.mean();
  const double sigma = gather.stddev();
  if (sigma < 1e-12) {
    gather += -mu;
    label += -mu;
    return {mu, 1.0};
  }
  const double inv = 1.0 / sigma;
  for (std::size_t i = 0; i < gather.numel(); ++i) gather[i] = (gather[i] - mu) * inv;
  for (std::size_t i = 0; i < label.numel(); ++i) label[i] = (label[i] - mu) * inv;
  return {mu, sigma};
}

void normalize_per_image(StepSample& s) {
  normalize_pair(s.x, s.y);
  for (auto& [prompt, plabel] : s.support) normalize_pair(prompt, plabel);
}

bool randomly_replace_label(StepSample& s, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("randomly_replace_label: fraction must be in [0,1]");
  bool replace;
  if (fraction <= 0.0)
    replace = false;
  else if (fraction >= 1.0)
    replace = true;
  else
    replace = rng.uniform() < fraction;
  if (replace) {
    s.y = s.x;
    for (auto& [prompt, plabel] : s.support) plabel = prompt;
  }
  return replace;
}

// ---------------------------------------------------------------------------
// optimizer machinery

ClipResult clip_grad_norm(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0))
    throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Parameter& p : params) {
    if (!p.trainable || p.grad.absent()) continue;
    for (std::size_t i = 0; i < p.grad.numel(); ++i) sq += p.grad[i] * p.grad[i];
  }
  ClipResult r;
  r.pre_norm = std::sqrt(sq);
  if (r.pre_norm > max_norm) {
    r.scale = max_norm / r.pre_norm;
    for (Parameter& p : params) {
      if (!p.trainable || p.grad.absent()) continue;
      p.grad *= r.scale;
    }
  }
  return r;
}

AdamW::AdamW(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(ParamStore& params, double lr, double weight_decay) {
  if (m_.empty()) {
    for (const Parameter& p : params) {
      m_.push_back(p.trainable ? Tensor::zeros(p.value.shape()) : Tensor{});
      v_.push_back(p.trainable ? Tensor::zeros(p.value.shape()) : Tensor{});
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adamw: optimizer state does not match parameters");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params.at(pi);
    if (!p.trainable) continue;
    const Tensor& g = p.grad;
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double gi = g.absent() ? 0.0 : g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay * p.value[i]);
    }
  }
}

double onecycle_lr(long long step, long long total_steps, double lr_max,
                   double warmup_frac, double final_frac) {
  if (total_steps < 1 || step < 0 || step >= total_steps)
    throw std::invalid_argument("onecycle_lr: step out of range");
  const double lr_final = lr_max * final_frac;
  if (total_steps == 1) return lr_final;
  const long long last = total_steps - 1;
  long long warm_end = std::llround(warmup_frac * static_cast<double>(last));
  warm_end = std::max<long long>(1, std::min(warm_end, last - 1));
  if (step <= warm_end) {
    const double u = static_cast<double>(step) / static_cast<double>(warm_end);
    return lr_final + (lr_max - lr_final) * 0.5 * (1.0 - std::cos(std::numbers::pi * u));
  }
  const double u =
      static_cast<double>(step - warm_end) / static_cast<double>(last - warm_end);
  return lr_final + (lr_max - lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

// ---------------------------------------------------------------------------
// training loop

namespace {

/// Stacks per-sample tensors into the batched forms the forward pass takes.
struct Batch {
  Tensor x;        // [B,1,H,W]
  Tensor y;        // [B,1,H,W]
  Tensor support;  // [S,B,2,H,W] (contextseisnet only)
};

Batch assemble_batch(const std::vector<StepSample>& samples, int support_size,
                     bool with_support) {
  const std::size_t B = samples.size();
  const std::size_t H = samples[0].x.dim(0), W = samples[0].x.dim(1);
  const std::size_t S = static_cast<std::size_t>(support_size);
  Batch b;
  b.x = Tensor({B, 1, H, W});
  b.y = Tensor({B, 1, H, W});
  for (std::size_t i = 0; i < B; ++i) {
    std::copy_n(samples[i].x.data(), H * W, b.x.data() + i * H * W);
    std::copy_n(samples[i].y.data(), H * W, b.y.data() + i * H * W);
  }
  if (with_support) {
    b.support = Tensor({S, B, 2, H, W});
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < B; ++i) {
        double* dst = b.support.data() + ((s * B + i) * 2) * H * W;
        std::copy_n(samples[i].support[s].first.data(), H * W, dst);
        std::copy_n(samples[i].support[s].second.data(), H * W, dst + H * W);
      }
  }
  return b;
}

}  // namespace

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  const bool with_support = model.arch() == Arch::contextseisnet;
  const int M = dataset.info().cdps_per_line;
  if (with_support && cfg.support_size + 1 > M)
    throw std::invalid_argument("train: support size too large for M=" + std::to_string(M));
  std::vector<int> lines = dataset.train_lines();
  if (lines.empty()) throw std::invalid_argument("train: empty train split");

  const long long batches_per_epoch =
      (static_cast<long long>(lines.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps = batches_per_epoch * cfg.epochs;

  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult result;
  double epoch_loss_acc = 0.0;
  long long epoch_loss_n = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566ull /* "shuf" */,
                             static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(lines);

    epoch_loss_acc = 0.0;
    epoch_loss_n = 0;
    for (long long bi = 0; bi < batches_per_epoch; ++bi) {
      const long long step = static_cast<long long>(epoch) * batches_per_epoch + bi;
      const std::size_t lo = static_cast<std::size_t>(bi) * cfg.batch_size;
      const std::size_t hi = std::min(lines.size(), lo + cfg.batch_size);

      // One Bernoulli per optimizer step: either the whole batch demonstrates
      // the identity task or none of it does.
      Rng step_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * 0x10001ull + 7,
                            static_cast<std::uint64_t>(bi)));
      std::vector<StepSample> samples;
      samples.reserve(hi - lo);
      for (std::size_t si = lo; si < hi; ++si) {
        SeismicLineView view{&dataset, lines[si]};
        StepSample s = with_support
                           ? sample_step(view, cfg.support_size, step_rng)
                           : [&] {
                               StepSample q;
                               const int cdp = static_cast<int>(step_rng.below(
                                   static_cast<std::uint64_t>(M)));
                               q.x = dataset.gather(view.line, cdp);
                               q.y = dataset.label(view.line, cdp);
                               return q;
                             }();
        random_white_noise(s, cfg.noise_lo, cfg.noise_hi, step_rng);
        normalize_per_image(s);
        samples.push_back(std::move(s));
      }
      bool replaced;
      {
        // Shared draw covering query and all support pairs of every sample.
        if (cfg.replace_fraction <= 0.0)
          replaced = false;
        else if (cfg.replace_fraction >= 1.0)
          replaced = true;
        else
          replaced = step_rng.uniform() < cfg.replace_fraction;
        if (replaced)
          for (StepSample& s : samples) {
            s.y = s.x;
            for (auto& [prompt, plabel] : s.support) plabel = prompt;
          }
      }

      Batch batch = assemble_batch(samples, cfg.support_size, with_support);
      Tape tape;
      Var x = tape.leaf(std::move(batch.x));
      Var target = tape.leaf(std::move(batch.y));
      Var support = with_support ? tape.leaf(std::move(batch.support)) : Var{};
      Var pred = model.forward(tape, x, support, Mode::train);
      Var loss = l1_loss(tape, pred, target);
      const double loss_value = tape.value(loss)[0];
      const double lr = onecycle_lr(step, total_steps, cfg.lr_max, cfg.warmup_frac,
                                    cfg.final_lr_frac);
      if (!std::isfinite(loss_value)) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "train: non-finite loss at step %lld (epoch %d, lr %.3e)",
                      step, epoch, lr);
        throw NumericalError(buf);
      }

      model.params().zero_grads();
      tape.backward(loss);
      const ClipResult clip = clip_grad_norm(model.params(), cfg.clip_max_norm);
      opt.step(model.params(), lr, cfg.weight_decay);

      result.log.push_back(TrainStepRecord{static_cast<int>(step), epoch, loss_value,
                                           lr, clip.pre_norm, replaced});
      epoch_loss_acc += loss_value;
      ++epoch_loss_n;
      if (epoch == 0 && bi + 1 == batches_per_epoch)
        result.initial_loss = epoch_loss_acc / static_cast<double>(epoch_loss_n);
    }
  }
  result.optimizer_steps = static_cast<int>(total_steps);
  result.final_loss =
      epoch_loss_n > 0 ? epoch_loss_acc / static_cast<double>(epoch_loss_n) : 0.0;
  if (cfg.epochs == 1) result.final_loss = result.initial_loss;
  return result;
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainStepRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "step,epoch,loss,lr,grad_norm_preclip,replaced_identity\n";
  char buf[256];
  for (const TrainStepRecord& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%d\n", r.step, r.epoch,
                  r.loss, r.lr, r.grad_norm_preclip, r.replaced_identity ? 1 : 0);
    out << buf;
  }
  out.flush();
  if (!out) throw IoError("training log write failed");
}

}  // namespace seis
