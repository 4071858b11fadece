#pragma once

// Binary model checkpoints.
//
// Layout (all integers little-endian):
//   magic "LDFM" | u32 version (= 1) | u32 n_items | tensors...
// Each tensor is: u8 rank | u32 dim per axis | f64 payload, row-major.
// Tensor order: for every dense layer its weight matrix then bias, followed
// by, for every batchnorm layer, gamma, beta, running mean, running variance.
// A model with D dense layers therefore stores 6D - 4 tensors, and the reader
// rejects files whose byte length disagrees with their own headers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpldf/nn.hpp"

namespace kpldf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace detail {

inline void ckpt_error(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + what);
}

struct ByteReader {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  const std::filesystem::path& path;

  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) {
      ckpt_error(path, std::string("truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
};

inline void append_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void append_f64s(std::string& out, const double* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path,
                             const nn::ModelParams& params) {
  nn::validate_params(params);
  std::string out;
  out.append("LDFM", 4);
  detail::append_u32(out, 1);
  detail::append_u32(out, static_cast<std::uint32_t>(params.n_items));

  auto put_matrix = [&out](const nn::Matrix& m) {
    out.push_back(static_cast<char>(2));
    detail::append_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::append_u32(out, static_cast<std::uint32_t>(m.cols()));
    detail::append_f64s(out, m.data(), static_cast<std::size_t>(m.size()));
  };
  auto put_vector = [&out](const nn::RowVector& v) {
    out.push_back(static_cast<char>(1));
    detail::append_u32(out, static_cast<std::uint32_t>(v.cols()));
    detail::append_f64s(out, v.data(), static_cast<std::size_t>(v.size()));
  };

  for (const auto& d : params.dense) {
    put_matrix(d.weights);
    put_vector(d.bias);
  }
  for (const auto& b : params.bn) {
    put_vector(b.gamma);
    put_vector(b.beta);
    put_vector(b.running_mean);
    put_vector(b.running_var);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) detail::ckpt_error(path, "cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) detail::ckpt_error(path, "write failed");
}

inline nn::ModelParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) detail::ckpt_error(path, "cannot open");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());

  detail::ByteReader r{buf, 0, path};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), "LDFM", 4) != 0) {
    detail::ckpt_error(path, "bad magic");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    detail::ckpt_error(path, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t n_items = r.u32("n_items");

  struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
  };
  std::vector<Tensor> tensors;
  while (r.pos < buf.size()) {
    Tensor t;
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank < 1 || rank > 2) {
      detail::ckpt_error(path, "tensor " + std::to_string(tensors.size()) +
                                   " has unsupported rank " +
                                   std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("tensor dim");
      if (dim == 0) {
        detail::ckpt_error(path, "tensor " + std::to_string(tensors.size()) +
                                     " has a zero dimension");
      }
      t.dims.push_back(dim);
      count *= dim;
    }
    r.need(count * sizeof(double), "tensor payload");
    t.data.resize(count);
    std::memcpy(t.data.data(), buf.data() + r.pos, count * sizeof(double));
    r.pos += count * sizeof(double);
    tensors.push_back(std::move(t));
  }

  if (tensors.size() < 8 || (tensors.size() + 4) % 6 != 0) {
    detail::ckpt_error(path, "unexpected tensor count " +
                                 std::to_string(tensors.size()));
  }
  const std::size_t n_dense = (tensors.size() + 4) / 6;

  nn::ModelParams p;
  p.n_items = n_items;
  std::size_t idx = 0;
  auto take_matrix = [&](const char* what) -> nn::Matrix {
    const Tensor& t = tensors[idx++];
    if (t.dims.size() != 2) {
      detail::ckpt_error(path, std::string(what) + " should be rank 2");
    }
    nn::Matrix m(t.dims[0], t.dims[1]);
    std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(double));
    return m;
  };
  auto take_vector = [&](const char* what) -> nn::RowVector {
    const Tensor& t = tensors[idx++];
    if (t.dims.size() != 1) {
      detail::ckpt_error(path, std::string(what) + " should be rank 1");
    }
    nn::RowVector v(t.dims[0]);
    std::memcpy(v.data(), t.data.data(), t.data.size() * sizeof(double));
    return v;
  };

  for (std::size_t l = 0; l < n_dense; ++l) {
    nn::DenseLayer d;
    d.weights = take_matrix("dense weight");
    d.bias = take_vector("dense bias");
    p.dense.push_back(std::move(d));
  }
  for (std::size_t l = 0; l + 1 < n_dense; ++l) {
    nn::BatchNormLayer b;
    b.gamma = take_vector("batchnorm gamma");
    b.beta = take_vector("batchnorm beta");
    b.running_mean = take_vector("batchnorm running mean");
    b.running_var = take_vector("batchnorm running variance");
    p.bn.push_back(std::move(b));
  }

  p.layer_dims.push_back(p.dense.front().weights.cols());
  for (const auto& d : p.dense) p.layer_dims.push_back(d.weights.rows());
  try {
    nn::validate_params(p);
  } catch (const std::invalid_argument& e) {
    detail::ckpt_error(path, e.what());
  }
  if (p.layer_dims.back() != n_items ||
      p.layer_dims.front() != 2 * static_cast<std::size_t>(n_items) + 1) {
    detail::ckpt_error(path, "layer widths disagree with n_items");
  }
  return p;
}

// Small JSON companion written next to a checkpoint recording where it came
// from: the epoch it snapshots, the multiplier at that point, and a hash of
// the training configuration.
inline void write_checkpoint_sidecar(const std::filesystem::path& path,
                                     std::uint64_t epoch, double lambda,
                                     const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lambda"] = lambda;
  j["config_hash"] = config_hash;
  std::ofstream f(path, std::ios::trunc);
  if (!f) detail::ckpt_error(path, "cannot open for writing");
  f << j.dump() << "\n";
  if (!f) detail::ckpt_error(path, "write failed");
}

}  // namespace kpldf
