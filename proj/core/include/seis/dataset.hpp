#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seis/synthgen.hpp"
#include "seis/tensor.hpp"

namespace seis {

struct DatasetInfo {
  int n_lines = 0;
  int cdps_per_line = 0;  // M
  int height = 0;         // H
  int width = 0;          // W
  int train_count = 0;
  std::uint64_t master_seed = 0;
  std::string id;  // short descriptor used in reports
};

/// In-memory dataset of N seismic lines: gathers and labels as [N,M,H,W]
/// tensors plus the train/eval split taken from the manifest.
class Dataset {
public:
  static Dataset load(const std::filesystem::path& dir);
  /// Generates all lines in memory (desk-scale sizes only).
  static Dataset generate(const GeneratorConfig& cfg);

  const DatasetInfo& info() const { return info_; }
  const Tensor& gathers() const { return gathers_; }
  const Tensor& labels() const { return labels_; }

  Tensor gather(int line, int cdp) const;  // [H,W] copy
  Tensor label(int line, int cdp) const;   // [H,W] copy

  std::vector<int> train_lines() const;
  std::vector<int> eval_lines() const;

private:
  Tensor gathers_;
  Tensor labels_;
  DatasetInfo info_;
};

/// Copies one [H,W] slice out of a [..,H,W] tensor; outer_index runs
/// row-major over the leading dimensions.
Tensor slice2d(const Tensor& t, std::size_t outer_index);

}  // namespace seis
