#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "seis/tensor.hpp"

namespace seis {

/// SEIS tensor record layout (little-endian):
///   magic "SEIS" (4 bytes) | u32 version = 1 | u8 dtype (0 = f32, 1 = f64) |
///   u8 ndim | ndim x u64 dims | row-major payload
enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct TensorInfo {
  Dtype dtype;
  Shape shape;
  std::size_t payload_bytes() const;
  std::size_t header_bytes() const;
};

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype = Dtype::f64);
void write_tensor(const std::filesystem::path& path, const Tensor& t,
                  Dtype dtype = Dtype::f64);

Tensor read_tensor(std::istream& in);
Tensor read_tensor(const std::filesystem::path& path);

/// Header only; `in` is left positioned at the start of the payload.
TensorInfo read_tensor_info(std::istream& in);
TensorInfo read_tensor_info(const std::filesystem::path& path);

/// Streaming writer for large tensors built slice by slice (dataset files).
/// The header is written on open; append() feeds payload in row-major order.
class TensorFileWriter {
public:
  TensorFileWriter(const std::filesystem::path& path, Shape shape,
                   Dtype dtype = Dtype::f64);
  ~TensorFileWriter();
  TensorFileWriter(const TensorFileWriter&) = delete;
  TensorFileWriter& operator=(const TensorFileWriter&) = delete;

  void append(const double* values, std::size_t count);
  void append(const Tensor& slice) { append(slice.data(), slice.numel()); }
  /// Flushes and verifies that exactly numel(shape) values were written.
  void finish();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reads one [H,W] slice of a [N,M,H,W] tensor file without loading the rest.
Tensor read_tensor_slice2d(const std::filesystem::path& path,
                           std::size_t outer_index);

}  // namespace seis
