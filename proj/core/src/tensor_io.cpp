#include "seis/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>

#include "seis/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "SEIS tensor files are little-endian; big-endian hosts are not supported");

namespace seis {

namespace {

constexpr char kMagic[4] = {'S', 'E', 'I', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw IoError("tensor write failed");
}

void read_raw(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw IoError("tensor read failed: truncated file");
}

void write_header(std::ostream& out, const Shape& shape, Dtype dtype) {
  write_raw(out, kMagic, 4);
  write_raw(out, &kVersion, 4);
  const std::uint8_t dt = static_cast<std::uint8_t>(dtype);
  const std::uint8_t nd = static_cast<std::uint8_t>(shape.size());
  if (shape.size() > 255) throw IoError("tensor write: too many dimensions");
  write_raw(out, &dt, 1);
  write_raw(out, &nd, 1);
  for (std::size_t d : shape) {
    const std::uint64_t d64 = d;
    write_raw(out, &d64, 8);
  }
}

}  // namespace

std::size_t TensorInfo::payload_bytes() const {
  return shape_numel(shape) * (dtype == Dtype::f64 ? 8 : 4);
}

std::size_t TensorInfo::header_bytes() const { return 4 + 4 + 1 + 1 + 8 * shape.size(); }

void write_tensor(std::ostream& out, const Tensor& t, Dtype dtype) {
  write_header(out, t.shape(), dtype);
  if (dtype == Dtype::f64) {
    write_raw(out, t.data(), t.numel() * sizeof(double));
  } else {
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
    write_raw(out, buf.data(), buf.size() * sizeof(float));
  }
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_tensor(out, t, dtype);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

TensorInfo read_tensor_info(std::istream& in) {
  char magic[4];
  read_raw(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a SEIS tensor file (bad magic)");
  std::uint32_t version = 0;
  read_raw(in, &version, 4);
  if (version != kVersion)
    throw IoError("unsupported SEIS tensor version " + std::to_string(version));
  std::uint8_t dt = 0, nd = 0;
  read_raw(in, &dt, 1);
  read_raw(in, &nd, 1);
  if (dt > 1) throw IoError("unsupported SEIS dtype " + std::to_string(dt));
  TensorInfo info;
  info.dtype = static_cast<Dtype>(dt);
  info.shape.resize(nd);
  for (std::uint8_t i = 0; i < nd; ++i) {
    std::uint64_t d = 0;
    read_raw(in, &d, 8);
    info.shape[i] = static_cast<std::size_t>(d);
  }
  return info;
}

TensorInfo read_tensor_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return read_tensor_info(in);
}

Tensor read_tensor(std::istream& in) {
  const TensorInfo info = read_tensor_info(in);
  const std::size_t n = shape_numel(info.shape);
  std::vector<double> data(n);
  if (info.dtype == Dtype::f64) {
    read_raw(in, data.data(), n * sizeof(double));
  } else {
    std::vector<float> buf(n);
    read_raw(in, buf.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(buf[i]);
  }
  return Tensor(info.shape, std::move(data));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return read_tensor(in);
}

struct TensorFileWriter::Impl {
  std::filesystem::path path;
  std::ofstream out;
  Dtype dtype;
  std::size_t expected;
  std::size_t written = 0;
  bool finished = false;
};

TensorFileWriter::TensorFileWriter(const std::filesystem::path& path, Shape shape,
                                   Dtype dtype)
    : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->dtype = dtype;
  impl_->expected = shape_numel(shape);
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw IoError("cannot open for writing: " + path.string());
  write_header(impl_->out, shape, dtype);
}

TensorFileWriter::~TensorFileWriter() {
  // An unfinished writer means the producer aborted; drop the partial file.
  if (impl_ && !impl_->finished) {
    impl_->out.close();
    std::error_code ec;
    std::filesystem::remove(impl_->path, ec);
  }
}

void TensorFileWriter::append(const double* values, std::size_t count) {
  if (impl_->written + count > impl_->expected)
    throw IoError("tensor writer: more data than the declared shape holds");
  if (impl_->dtype == Dtype::f64) {
    write_raw(impl_->out, values, count * sizeof(double));
  } else {
    std::vector<float> buf(count);
    for (std::size_t i = 0; i < count; ++i) buf[i] = static_cast<float>(values[i]);
    write_raw(impl_->out, buf.data(), buf.size() * sizeof(float));
  }
  impl_->written += count;
}

void TensorFileWriter::finish() {
  if (impl_->written != impl_->expected)
    throw IoError("tensor writer: wrote " + std::to_string(impl_->written) +
                  " of " + std::to_string(impl_->expected) + " values");
  impl_->out.flush();
  if (!impl_->out) throw IoError("write failed: " + impl_->path.string());
  impl_->out.close();
  impl_->finished = true;
}

Tensor read_tensor_slice2d(const std::filesystem::path& path, std::size_t outer_index) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  const TensorInfo info = read_tensor_info(in);
  if (info.shape.size() < 2) throw IoError("slice read needs >= 2 dimensions");
  const std::size_t h = info.shape[info.shape.size() - 2];
  const std::size_t w = info.shape[info.shape.size() - 1];
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 2 < info.shape.size(); ++i) outer *= info.shape[i];
  if (outer_index >= outer) throw IoError("slice index out of range");
  const std::size_t elem = info.dtype == Dtype::f64 ? 8 : 4;
  in.seekg(static_cast<std::streamoff>(info.header_bytes() + outer_index * h * w * elem));
  std::vector<double> data(h * w);
  if (info.dtype == Dtype::f64) {
    read_raw(in, data.data(), data.size() * sizeof(double));
  } else {
    std::vector<float> buf(h * w);
    read_raw(in, buf.data(), buf.size() * sizeof(float));
    for (std::size_t i = 0; i < buf.size(); ++i) data[i] = static_cast<double>(buf[i]);
  }
  return Tensor({h, w}, std::move(data));
}

}  // namespace seis
