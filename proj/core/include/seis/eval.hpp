#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "seis/dataset.hpp"
#include "seis/model.hpp"
#include "seis/tensor.hpp"

namespace seis {

enum class LabelSource { ground_truth, external_file };

/// CDP positions within a line whose (gather, label) pairs serve as prompts.
struct PromptLayout {
  std::vector<int> positions;  // distinct, sorted, within [0, M)
  LabelSource label_source = LabelSource::ground_truth;

  void validate(int cdps_per_line) const;
  std::string descriptor() const;  // e.g. "0-10-20"
};

struct PositionStats {
  double psnr_mean_db = 0.0;
  double psnr_std_db = 0.0;
  double mse_mean = 0.0;
};

struct EvalReport {
  std::vector<PositionStats> per_position;  // length M
  PromptLayout layout;
  std::string model_id;
  std::string dataset_id;
  int n_lines = 0;
};

struct EnsembleStats {
  std::vector<double> mse_mean;       // per position
  std::vector<double> pred_std_mean;  // per position
  double spearman = 0.0;
  PromptLayout layout;
  std::string dataset_id;
  int n_lines = 0;
  int n_models = 0;
};

/// Peak signal-to-noise ratio 10*log10(peak^2 / MSE), capped to +-120 dB;
/// zero MSE returns the +120 dB cap. The two-argument form takes the peak
/// from max |truth|; by-position evaluation passes the peak over the whole
/// line's labels instead.
double psnr(const Tensor& pred, const Tensor& truth, double peak);
double psnr(const Tensor& pred, const Tensor& truth);

/// Inference abstraction scored by the harness: takes the normalized query
/// and normalized support pairs, returns the normalized prediction. The
/// model-backed implementation is below; tests may inject oracles.
class Predictor {
public:
  virtual ~Predictor() = default;
  virtual Tensor predict_normalized(
      const Tensor& x_norm,
      const std::vector<std::pair<Tensor, Tensor>>& support_norm) = 0;
  virtual std::string id() const = 0;
};

/// Runs a Model in eval mode; the unet baseline ignores the support pairs.
class ModelPredictor : public Predictor {
public:
  explicit ModelPredictor(Model& model) : model_(&model) {}
  Tensor predict_normalized(
      const Tensor& x_norm,
      const std::vector<std::pair<Tensor, Tensor>>& support_norm) override;
  std::string id() const override { return model_->model_id(); }

private:
  Model* model_;
};

/// Builds the raw support pairs for one line from the layout. Prompt labels
/// come from the dataset labels (ground_truth) or from `external_labels`,
/// a [N,M,H,W] tensor aligned to the dataset (external_file).
std::vector<std::pair<Tensor, Tensor>> layout_support(const Dataset& dataset,
                                                      int line,
                                                      const PromptLayout& layout,
                                                      const Tensor* external_labels);

/// For every eval line and CDP position: normalize the query by its own
/// statistics, prompt with the layout's pairs (each normalized by its own
/// gather), de-normalize the prediction and score PSNR/MSE against the
/// label. Means and sample stds aggregate over lines per position.
EvalReport eval_by_position(Predictor& predictor, const Dataset& dataset,
                            const PromptLayout& layout,
                            const Tensor* external_labels = nullptr);

/// One report per layout.
std::vector<EvalReport> prompt_spacing_study(Predictor& predictor,
                                             const Dataset& dataset,
                                             const std::vector<PromptLayout>& layouts,
                                             const Tensor* external_labels = nullptr);

/// Per position: mean over lines of (a) the mean-over-models MSE and (b) the
/// per-pixel std across model predictions averaged over pixels; plus the
/// Spearman rank correlation between the two curves.
EnsembleStats ensemble_variance(std::vector<Predictor*> predictors,
                                const Dataset& dataset, const PromptLayout& layout,
                                const Tensor* external_labels = nullptr);

/// Mean L1 between the normalized prediction and the normalized query over
/// the eval split; identity_prompts replaces every prompt label with its
/// prompt (the steering probe).
double mean_l1_to_normalized_input(Predictor& predictor, const Dataset& dataset,
                                   const PromptLayout& layout, bool identity_prompts,
                                   const Tensor* external_labels = nullptr);

/// Spearman rank correlation with average ranks on ties.
double spearman_rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b);

/// CSV: position,psnr_mean_db,psnr_std_db,mse_mean,layout,model_id,n_lines
/// with 9 significant digits.
void export_report(const EvalReport& report, const std::filesystem::path& path);

/// CSV: position,mse_mean,pred_std_mean plus a footer row
/// "spearman,<value>," carrying the rank correlation.
void export_ensemble(const EnsembleStats& stats, const std::filesystem::path& path);

}  // namespace seis
