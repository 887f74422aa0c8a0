#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/training.hpp"

namespace increg {

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// IDX (MNIST-style): 2 zero bytes, a type byte (0x08 = unsigned byte), a dimension
// count, then one big-endian uint32 per dimension, then the data.

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4) throw ParseError(origin + ": truncated IDX header at offset 0");
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08)
    throw ParseError(origin + ": bad IDX magic (expected 00 00 08 xx for unsigned bytes)");
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw ParseError(origin + ": IDX file declares zero dimensions");
  if (bytes.size() < 4 + 4 * ndims)
    throw ParseError(origin + ": truncated IDX dimension table at offset 4");
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * d;
    const std::uint32_t v = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    out.dims.push_back(v);
    count *= v;
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header + count)
    throw ParseError(origin + ": truncated IDX payload, expected " + std::to_string(count) +
                     " bytes from offset " + std::to_string(header) + ", file ends at " +
                     std::to_string(bytes.size()));
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                    bytes.begin() + static_cast<std::ptrdiff_t>(header + count));
  return out;
}

inline std::vector<std::uint8_t> encode_idx(const IdxArray& a) {
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(a.dims.size())};
  for (auto d : a.dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

/// Pairs an image file (N x H x W) with a label file (N); pixels scaled to [0, 1].
inline Dataset idx_dataset(const IdxArray& images, const IdxArray& labels, std::size_t classes,
                           const std::string& origin) {
  if (images.dims.size() != 3) throw ParseError(origin + ": IDX images must be N x H x W");
  if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
    throw ParseError(origin + ": IDX label count does not match image count");
  Dataset d;
  d.classes = classes;
  d.images = Tensor4<float>({images.dims[0], 1, images.dims[1], images.dims[2]});
  for (std::size_t i = 0; i < images.values.size(); ++i)
    d.images.storage()[i] = static_cast<float>(images.values[i]) / 255.0f;
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    if (labels.values[i] >= classes)
      throw ParseError(origin + ": label " + std::to_string(labels.values[i]) + " at record " +
                       std::to_string(i) + " is out of range");
    d.labels.push_back(labels.values[i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary: records of 1 label byte + 3072 pixel bytes (R, G, B planes of 32x32).

inline constexpr std::size_t cifar_record_bytes = 1 + 3 * 32 * 32;

inline void append_cifar_records(const std::vector<std::uint8_t>& bytes, const std::string& origin,
                                 Dataset& into) {
  if (bytes.size() % cifar_record_bytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % cifar_record_bytes;
    throw ParseError(origin + ": truncated CIFAR-10 record at offset " + std::to_string(offset));
  }
  const std::size_t n = bytes.size() / cifar_record_bytes;
  // Check every label before touching `into` so a bad file leaves it unchanged.
  for (std::size_t off = 0; off < bytes.size(); off += cifar_record_bytes)
    if (bytes[off] > 9)
      throw ParseError(origin + ": label " + std::to_string(bytes[off]) + " out of range at offset " +
                       std::to_string(off));
  const std::size_t start = into.labels.size();
  std::vector<float> pixels = std::move(into.images.storage());
  pixels.resize((start + n) * 3072);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * cifar_record_bytes;
    into.labels.push_back(bytes[off]);
    for (std::size_t k = 0; k < 3072; ++k)
      pixels[(start + r) * 3072 + k] = static_cast<float>(bytes[off + 1 + k]) / 255.0f;
  }
  into.classes = 10;
  into.images = Tensor4<float>({start + n, 3, 32, 32}, std::move(pixels));
}

/// Takes rows [begin, end) of a dataset.
inline Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  detail::require(begin <= end && end <= d.size(), "slice: range out of bounds");
  const auto s = d.images.shape();
  const std::size_t per = s.sample_size();
  Dataset out;
  out.classes = d.classes;
  out.images = Tensor4<float>(
      {end - begin, s.c, s.h, s.w},
      std::vector<float>(d.images.storage().begin() + static_cast<std::ptrdiff_t>(begin * per),
                         d.images.storage().begin() + static_cast<std::ptrdiff_t>(end * per)));
  out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

/// data_batch_1..5.bin give 50k images, split 45k train / 5k validation (the last
/// `val_size` records); test_batch.bin gives the 10k test images.
inline DataSplits load_cifar10(const std::filesystem::path& dir, std::size_t val_size = 5000) {
  Dataset all;
  for (int b = 1; b <= 5; ++b) {
    const auto p = dir / ("data_batch_" + std::to_string(b) + ".bin");
    append_cifar_records(read_file_bytes(p), p.string(), all);
  }
  DataSplits s;
  if (val_size >= all.size()) throw ConfigError("CIFAR-10: validation split larger than train set");
  s.train = slice(all, 0, all.size() - val_size);
  s.val = slice(all, all.size() - val_size, all.size());
  const auto tp = dir / "test_batch.bin";
  append_cifar_records(read_file_bytes(tp), tp.string(), s.test);
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs: each class has a random prototype image; samples are the
// prototype plus isotropic noise.

struct BlobSpec {
  std::size_t classes = 4;
  Shape3 dims{2, 8, 8};
  double noise = 0.5;
  std::uint64_t seed = 1;
  std::size_t train = 2000;
  std::size_t val = 500;
  std::size_t test = 500;
};

inline DataSplits synthetic_blobs(const BlobSpec& spec) {
  detail::require(spec.classes >= 2 && spec.dims.size() > 0, "synthetic_blobs: bad spec");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t per = spec.dims.size();
  std::vector<double> centers(spec.classes * per);
  for (auto& c : centers) c = normal(rng);
  auto make = [&](std::size_t n) {
    Dataset d;
    d.classes = spec.classes;
    d.images = Tensor4<float>({n, spec.dims.c, spec.dims.h, spec.dims.w});
    std::uniform_int_distribution<std::size_t> pick(0, spec.classes - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = pick(rng);
      d.labels.push_back(static_cast<int>(y));
      auto x = d.images.sample(i);
      for (std::size_t k = 0; k < per; ++k)
        x[k] = static_cast<float>(centers[y * per + k] + spec.noise * normal(rng));
    }
    return d;
  };
  DataSplits s;
  s.train = make(spec.train);
  s.val = make(spec.val);
  s.test = make(spec.test);
  return s;
}

// ---------------------------------------------------------------------------

/// Per-channel mean of a dataset's images.
inline std::vector<float> channel_means(const Dataset& d) {
  const auto s = d.images.shape();
  std::vector<double> acc(s.c, 0.0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t k = 0; k < s.h * s.w; ++k) acc[c] += d.images.sample(n)[c * s.h * s.w + k];
  std::vector<float> out(s.c, 0.0f);
  const double count = static_cast<double>(s.n * s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c) out[c] = count > 0 ? static_cast<float>(acc[c] / count) : 0.0f;
  return out;
}

inline void subtract_channel_means(Dataset& d, const std::vector<float>& means) {
  const auto s = d.images.shape();
  detail::require(means.size() == s.c, "subtract_channel_means: channel count mismatch");
  for (std::size_t n = 0; n < s.n; ++n) {
    auto x = d.images.sample(n);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t k = 0; k < s.h * s.w; ++k) x[c * s.h * s.w + k] -= means[c];
  }
}

}  // namespace increg
