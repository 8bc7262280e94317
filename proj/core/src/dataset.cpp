#include "seis/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "seis/errors.hpp"
#include "seis/tensor_io.hpp"

namespace seis {

using nlohmann::json;

Tensor slice2d(const Tensor& t, std::size_t outer_index) {
  if (t.ndim() < 2) throw std::invalid_argument("slice2d: rank must be >= 2");
  const std::size_t h = t.dim(t.ndim() - 2), w = t.dim(t.ndim() - 1);
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 2 < t.ndim(); ++i) outer *= t.dim(i);
  if (outer_index >= outer) throw std::invalid_argument("slice2d: index out of range");
  Tensor s({h, w});
  std::memcpy(s.data(), t.data() + outer_index * h * w, h * w * sizeof(double));
  return s;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open dataset manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(in, nullptr, /*allow_exceptions=*/true);
  if (manifest.value("kind", "") != "seisicl-dataset")
    throw IoError("not a dataset directory: " + dir.string());

  Dataset ds;
  ds.info_.n_lines = manifest.at("n_lines").get<int>();
  ds.info_.cdps_per_line = manifest.at("cdps_per_line").get<int>();
  ds.info_.height = manifest.at("height").get<int>();
  ds.info_.width = manifest.at("width").get<int>();
  ds.info_.train_count = manifest.at("train_count").get<int>();
  ds.info_.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  ds.info_.id = "lines" + std::to_string(ds.info_.n_lines) + "-seed" +
                std::to_string(ds.info_.master_seed);

  ds.gathers_ = read_tensor(dir / "gathers.bin");
  ds.labels_ = read_tensor(dir / "labels.bin");

  const Shape expected = {static_cast<std::size_t>(ds.info_.n_lines),
                          static_cast<std::size_t>(ds.info_.cdps_per_line),
                          static_cast<std::size_t>(ds.info_.height),
                          static_cast<std::size_t>(ds.info_.width)};
  if (ds.gathers_.shape() != expected || ds.labels_.shape() != expected)
    throw IoError("dataset tensors do not match the manifest dimensions");
  return ds;
}

Dataset Dataset::generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset ds;
  const std::size_t N = static_cast<std::size_t>(cfg.n_lines);
  const std::size_t M = static_cast<std::size_t>(cfg.cdps_per_line);
  const std::size_t H = static_cast<std::size_t>(cfg.geometry.n_samples);
  const std::size_t W = static_cast<std::size_t>(cfg.geometry.n_traces);
  ds.gathers_ = Tensor({N, M, H, W});
  ds.labels_ = Tensor({N, M, H, W});
  const std::size_t line_n = M * H * W;
  for (int li = 0; li < cfg.n_lines; ++li) {
    SeismicLine line = generate_line(cfg, li);
    std::memcpy(ds.gathers_.data() + static_cast<std::size_t>(li) * line_n,
                line.gathers.data(), line_n * sizeof(double));
    std::memcpy(ds.labels_.data() + static_cast<std::size_t>(li) * line_n,
                line.labels.data(), line_n * sizeof(double));
  }
  ds.info_.n_lines = cfg.n_lines;
  ds.info_.cdps_per_line = cfg.cdps_per_line;
  ds.info_.height = cfg.geometry.n_samples;
  ds.info_.width = cfg.geometry.n_traces;
  ds.info_.train_count = static_cast<int>(std::llround(cfg.n_lines * cfg.train_fraction));
  ds.info_.master_seed = cfg.seed;
  ds.info_.id = "lines" + std::to_string(cfg.n_lines) + "-seed" + std::to_string(cfg.seed);
  return ds;
}

Tensor Dataset::gather(int line, int cdp) const {
  return slice2d(gathers_, static_cast<std::size_t>(line) *
                               static_cast<std::size_t>(info_.cdps_per_line) +
                           static_cast<std::size_t>(cdp));
}

Tensor Dataset::label(int line, int cdp) const {
  return slice2d(labels_, static_cast<std::size_t>(line) *
                              static_cast<std::size_t>(info_.cdps_per_line) +
                          static_cast<std::size_t>(cdp));
}

std::vector<int> Dataset::train_lines() const {
  std::vector<int> v(static_cast<std::size_t>(info_.train_count));
  for (int i = 0; i < info_.train_count; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

std::vector<int> Dataset::eval_lines() const {
  std::vector<int> v;
  for (int i = info_.train_count; i < info_.n_lines; ++i) v.push_back(i);
  return v;
}

}  // namespace seis
