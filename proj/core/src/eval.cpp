#include "seis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "seis/errors.hpp"
#include "seis/training.hpp"

namespace seis {

namespace {
constexpr double kPsnrCapDb = 120.0;
}

void PromptLayout::validate(int cdps_per_line) const {
  if (positions.empty())
    throw std::invalid_argument("prompt layout: needs at least one position");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= cdps_per_line)
      throw std::invalid_argument("prompt layout: position " +
                                  std::to_string(positions[i]) +
                                  " outside [0," + std::to_string(cdps_per_line) + ")");
    if (i > 0 && positions[i] <= positions[i - 1])
      throw std::invalid_argument("prompt layout: positions must be sorted and distinct");
  }
}

std::string PromptLayout::descriptor() const {
  std::string s;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i) s += "-";
    s += std::to_string(positions[i]);
  }
  return s;
}

double psnr(const Tensor& pred, const Tensor& truth, double peak) {
  if (!pred.same_shape(truth))
    throw std::invalid_argument("psnr: shape mismatch " + shape_str(pred.shape()) +
                                " vs " + shape_str(truth.shape()));
  const double err = mse(pred, truth);
  if (err == 0.0) return kPsnrCapDb;
  if (peak == 0.0) return -kPsnrCapDb;
  const double db = 10.0 * std::log10(peak * peak / err);
  return std::clamp(db, -kPsnrCapDb, kPsnrCapDb);
}

double psnr(const Tensor& pred, const Tensor& truth) {
  return psnr(pred, truth, truth.max_abs());
}

Tensor ModelPredictor::predict_normalized(
    const Tensor& x_norm, const std::vector<std::pair<Tensor, Tensor>>& support_norm) {
  if (model_->arch() == Arch::unet) return model_->predict(x_norm, SupportSet{});
  if (support_norm.empty())
    throw std::invalid_argument("predict: contextseisnet needs a non-empty support");
  const std::size_t S = support_norm.size();
  const std::size_t H = x_norm.dim(0), W = x_norm.dim(1);
  SupportSet set;
  set.prompts = Tensor({S, H, W});
  set.prompt_labels = Tensor({S, H, W});
  for (std::size_t s = 0; s < S; ++s) {
    std::copy_n(support_norm[s].first.data(), H * W, set.prompts.data() + s * H * W);
    std::copy_n(support_norm[s].second.data(), H * W,
                set.prompt_labels.data() + s * H * W);
  }
  return model_->predict(x_norm, set);
}

std::vector<std::pair<Tensor, Tensor>> layout_support(const Dataset& dataset, int line,
                                                      const PromptLayout& layout,
                                                      const Tensor* external_labels) {
  layout.validate(dataset.info().cdps_per_line);
  if (layout.label_source == LabelSource::external_file && !external_labels)
    throw std::invalid_argument("layout: external label source needs a labels tensor");
  const std::size_t M = static_cast<std::size_t>(dataset.info().cdps_per_line);
  std::vector<std::pair<Tensor, Tensor>> support;
  for (int pos : layout.positions) {
    Tensor prompt = dataset.gather(line, pos);
    Tensor label =
        layout.label_source == LabelSource::ground_truth
            ? dataset.label(line, pos)
            : slice2d(*external_labels,
                      static_cast<std::size_t>(line) * M + static_cast<std::size_t>(pos));
    support.emplace_back(std::move(prompt), std::move(label));
  }
  return support;
}

namespace {

std::vector<std::pair<Tensor, Tensor>> normalized_support(
    std::vector<std::pair<Tensor, Tensor>> raw) {
  for (auto& [prompt, label] : raw) normalize_pair(prompt, label);
  return raw;
}

}  // namespace

EvalReport eval_by_position(Predictor& predictor, const Dataset& dataset,
                            const PromptLayout& layout, const Tensor* external_labels) {
  layout.validate(dataset.info().cdps_per_line);
  const std::vector<int> lines = dataset.eval_lines();
  if (lines.empty()) throw std::invalid_argument("eval: empty eval split");
  const int M = dataset.info().cdps_per_line;

  // per position, per line scores
  std::vector<std::vector<double>> psnr_scores(static_cast<std::size_t>(M));
  std::vector<std::vector<double>> mse_scores(static_cast<std::size_t>(M));

  for (int line : lines) {
    const auto support =
        normalized_support(layout_support(dataset, line, layout, external_labels));
    // Peak over the whole line's labels, shared by all positions of the line.
    double peak = 0.0;
    for (int m = 0; m < M; ++m) peak = std::max(peak, dataset.label(line, m).max_abs());

    for (int m = 0; m < M; ++m) {
      Tensor x = dataset.gather(line, m);
      Tensor dummy = Tensor::zeros(x.shape());
      const auto [mu, sigma] = normalize_pair(x, dummy);
      Tensor pred = predictor.predict_normalized(x, support);
      // de-normalize with the query's statistics before scoring
      for (std::size_t i = 0; i < pred.numel(); ++i) pred[i] = pred[i] * sigma + mu;
      const Tensor truth = dataset.label(line, m);
      psnr_scores[static_cast<std::size_t>(m)].push_back(psnr(pred, truth, peak));
      mse_scores[static_cast<std::size_t>(m)].push_back(mse(pred, truth));
    }
  }

  EvalReport report;
  report.layout = layout;
  report.model_id = predictor.id();
  report.dataset_id = dataset.info().id;
  report.n_lines = static_cast<int>(lines.size());
  report.per_position.resize(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    const auto& ps = psnr_scores[static_cast<std::size_t>(m)];
    const auto& ms = mse_scores[static_cast<std::size_t>(m)];
    PositionStats& st = report.per_position[static_cast<std::size_t>(m)];
    const double n = static_cast<double>(ps.size());
    st.psnr_mean_db = std::accumulate(ps.begin(), ps.end(), 0.0) / n;
    st.mse_mean = std::accumulate(ms.begin(), ms.end(), 0.0) / n;
    if (ps.size() > 1) {
      double sq = 0.0;
      for (double v : ps) sq += (v - st.psnr_mean_db) * (v - st.psnr_mean_db);
      st.psnr_std_db = std::sqrt(sq / (n - 1.0));
    }
  }
  return report;
}

std::vector<EvalReport> prompt_spacing_study(Predictor& predictor, const Dataset& dataset,
                                             const std::vector<PromptLayout>& layouts,
                                             const Tensor* external_labels) {
  std::vector<EvalReport> reports;
  reports.reserve(layouts.size());
  for (const PromptLayout& layout : layouts)
    reports.push_back(eval_by_position(predictor, dataset, layout, external_labels));
  return reports;
}

EnsembleStats ensemble_variance(std::vector<Predictor*> predictors, const Dataset& dataset,
                                const PromptLayout& layout, const Tensor* external_labels) {
  if (predictors.size() < 2)
    throw std::invalid_argument("ensemble: need at least 2 models");
  layout.validate(dataset.info().cdps_per_line);
  const std::vector<int> lines = dataset.eval_lines();
  if (lines.empty()) throw std::invalid_argument("ensemble: empty eval split");
  const int M = dataset.info().cdps_per_line;
  const std::size_t K = predictors.size();

  std::vector<double> mse_acc(static_cast<std::size_t>(M), 0.0);
  std::vector<double> std_acc(static_cast<std::size_t>(M), 0.0);

  for (int line : lines) {
    const auto support =
        normalized_support(layout_support(dataset, line, layout, external_labels));
    for (int m = 0; m < M; ++m) {
      Tensor x = dataset.gather(line, m);
      Tensor dummy = Tensor::zeros(x.shape());
      const auto [mu, sigma] = normalize_pair(x, dummy);
      const Tensor truth = dataset.label(line, m);

      std::vector<Tensor> preds;
      preds.reserve(K);
      for (Predictor* p : predictors) {
        Tensor pred = p->predict_normalized(x, support);
        for (std::size_t i = 0; i < pred.numel(); ++i) pred[i] = pred[i] * sigma + mu;
        preds.push_back(std::move(pred));
      }

      double mse_sum = 0.0;
      for (const Tensor& p : preds) mse_sum += mse(p, truth);
      mse_acc[static_cast<std::size_t>(m)] += mse_sum / static_cast<double>(K);

      // per-pixel std across models (population), averaged over pixels;
      // computed on deviations from the first member so bit-identical
      // predictions yield exactly zero
      const std::size_t n = truth.numel();
      double std_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const Tensor& p : preds) s += p[i] - preds[0][i];
        const double mean = s / static_cast<double>(K);
        double sq = 0.0;
        for (const Tensor& p : preds) {
          const double d = (p[i] - preds[0][i]) - mean;
          sq += d * d;
        }
        std_sum += std::sqrt(sq / static_cast<double>(K));
      }
      std_acc[static_cast<std::size_t>(m)] += std_sum / static_cast<double>(n);
    }
  }

  EnsembleStats stats;
  stats.layout = layout;
  stats.dataset_id = dataset.info().id;
  stats.n_lines = static_cast<int>(lines.size());
  stats.n_models = static_cast<int>(K);
  stats.mse_mean.resize(static_cast<std::size_t>(M));
  stats.pred_std_mean.resize(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    stats.mse_mean[static_cast<std::size_t>(m)] =
        mse_acc[static_cast<std::size_t>(m)] / static_cast<double>(lines.size());
    stats.pred_std_mean[static_cast<std::size_t>(m)] =
        std_acc[static_cast<std::size_t>(m)] / static_cast<double>(lines.size());
  }
  stats.spearman = spearman_rank_correlation(stats.pred_std_mean, stats.mse_mean);
  return stats;
}

double mean_l1_to_normalized_input(Predictor& predictor, const Dataset& dataset,
                                   const PromptLayout& layout, bool identity_prompts,
                                   const Tensor* external_labels) {
  layout.validate(dataset.info().cdps_per_line);
  const std::vector<int> lines = dataset.eval_lines();
  if (lines.empty()) throw std::invalid_argument("eval: empty eval split");
  const int M = dataset.info().cdps_per_line;

  double acc = 0.0;
  long long count = 0;
  for (int line : lines) {
    auto raw = layout_support(dataset, line, layout, external_labels);
    if (identity_prompts)
      for (auto& [prompt, label] : raw) label = prompt;
    const auto support = normalized_support(std::move(raw));
    for (int m = 0; m < M; ++m) {
      Tensor x = dataset.gather(line, m);
      Tensor dummy = Tensor::zeros(x.shape());
      normalize_pair(x, dummy);
      const Tensor pred = predictor.predict_normalized(x, support);
      double l1 = 0.0;
      for (std::size_t i = 0; i < pred.numel(); ++i) l1 += std::fabs(pred[i] - x[i]);
      acc += l1 / static_cast<double>(pred.numel());
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double spearman_rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equally sized series");
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k2 = i; k2 <= j; ++k2) r[order[k2]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

void export_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << "position,psnr_mean_db,psnr_std_db,mse_mean,layout,model_id,n_lines\n";
  char buf[320];
  const std::string layout = report.layout.descriptor();
  for (std::size_t m = 0; m < report.per_position.size(); ++m) {
    const PositionStats& st = report.per_position[m];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%s,%s,%d\n", m,
                  st.psnr_mean_db, st.psnr_std_db, st.mse_mean, layout.c_str(),
                  report.model_id.c_str(), report.n_lines);
    out << buf;
  }
  out.flush();
  if (!out) throw IoError("report write failed");
}

void export_ensemble(const EnsembleStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write ensemble report: " + path.string());
  out << "position,mse_mean,pred_std_mean\n";
  char buf[160];
  for (std::size_t m = 0; m < stats.mse_mean.size(); ++m) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", m, stats.mse_mean[m],
                  stats.pred_std_mean[m]);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "spearman,%.9g,\n", stats.spearman);
  out << buf;
  out.flush();
  if (!out) throw IoError("ensemble report write failed");
}

}  // namespace seis
