#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seis/autodiff.hpp"
#include "seis/dataset.hpp"
#include "seis/model.hpp"
#include "seis/rng.hpp"
#include "seis/tensor.hpp"

namespace seis {

struct TrainConfig {
  int support_size = 3;  // S
  int batch_size = 8;
  int epochs = 10;
  double lr_max = 1e-3;
  double weight_decay = 0.01;
  double clip_max_norm = 1.0;
  double noise_lo = 0.0, noise_hi = 0.1;  // noise std as fraction of gather std
  double replace_fraction = 0.10;
  std::uint64_t seed = 1;
  double warmup_frac = 0.3;
  double final_lr_frac = 0.04;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TrainStepRecord {
  int step = 0;  // optimizer step index
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm_preclip = 0.0;
  bool replaced_identity = false;
};

/// One training sample: query pair plus its support pairs, all from the
/// same line.
struct StepSample {
  Tensor x, y;  // [H,W]
  std::vector<std::pair<Tensor, Tensor>> support;
};

/// View over one line of a dataset (no copies until panels are fetched).
struct SeismicLineView {
  const Dataset* dataset = nullptr;
  int line = 0;
  int cdps() const { return dataset->info().cdps_per_line; }
};

/// Draws S+1 distinct CDP indices uniformly; the first is the query, the
/// rest index the support pairs.
StepSample sample_step(const SeismicLineView& line, int support_size, Rng& rng);

/// Draws one noise level per step uniformly in [lo, hi] as a fraction of
/// each gather's std; gathers and labels receive independent Gaussian noise
/// of that level.
void random_white_noise(StepSample& s, double lo, double hi, Rng& rng);

/// Normalizes each (gather, label) pair by the GATHER's mean and std; the
/// label uses the gather's statistics. A degenerate gather (std below
/// 1e-12) is centered only.
void normalize_per_image(StepSample& s);
std::pair<double, double> normalize_pair(Tensor& gather, Tensor& label);

/// With probability `fraction` (one Bernoulli draw for the whole step) turns
/// the step into an identity-task demonstration: y := x and every prompt
/// label := its prompt. Returns whether the replacement happened.
bool randomly_replace_label(StepSample& s, double fraction, Rng& rng);

struct ClipResult {
  double pre_norm = 0.0;
  double scale = 1.0;
};

/// Global L2 clipping over all trainable gradients; scales them by
/// max_norm / norm when the norm exceeds max_norm.
ClipResult clip_grad_norm(ParamStore& params, double max_norm);

/// Decoupled-weight-decay adaptive moment optimizer.
class AdamW {
public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
  void step(ParamStore& params, double lr, double weight_decay);

private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;  // lazily sized to the trainable parameters
};

/// Cosine ramp from lr_max*final_frac up to lr_max over warmup_frac of the
/// run, then cosine decay back down.
double onecycle_lr(long long step, long long total_steps, double lr_max,
                   double warmup_frac, double final_frac);

struct TrainResult {
  std::vector<TrainStepRecord> log;
  int optimizer_steps = 0;
  double initial_loss = 0.0;  // mean loss over the first epoch's steps
  double final_loss = 0.0;    // mean loss over the last epoch's steps
};

/// Runs the full training loop on the dataset's train split: per epoch,
/// lines are shuffled and grouped into batches; each sample goes through
/// sample -> noise -> normalize -> replace before the forward pass; the
/// optimizer applies L1 loss, gradient clipping and AdamW under a OneCycle
/// schedule. Throws NumericalError on a non-finite loss. Deterministic
/// given (dataset bytes, config, model init).
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg);

/// Writes the per-step log as CSV: step,epoch,loss,lr,grad_norm_preclip,
/// replaced_identity.
void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainStepRecord>& log);

}  // namespace seis
