#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "increg/dataset.hpp"
#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"

namespace increg {

/// A trained (and possibly pruned or compacted) network with its run metadata.
///
/// File layout: the 8 bytes "INCREG01", a little-endian uint64 byte length, that
/// many bytes of compact JSON metadata, then for each parameterized layer in order
/// its weight, bias, weight momentum and bias momentum as little-endian float32.
struct Checkpoint {
  Network<float> net;
  std::uint64_t iteration = 0;
  std::vector<float> channel_means;
  std::vector<LayerGroups> groups;  // only λ_g and the pruned flags are persisted
  nlohmann::json extra = nlohmann::json::object();
};

inline constexpr std::array<char, 8> checkpoint_magic{'I', 'N', 'C', 'R', 'E', 'G', '0', '1'};

namespace detail {

inline nlohmann::json layer_json(const Layer<float>& l) {
  nlohmann::json j = {{"name", l.name},
                      {"kind", to_string(l.spec.kind)},
                      {"in", {l.in.c, l.in.h, l.in.w}},
                      {"out", {l.out.c, l.out.h, l.out.w}}};
  switch (l.spec.kind) {
    case LayerKind::conv: {
      j["filters"] = l.spec.filters;
      j["kernel"] = l.spec.kernel;
      j["stride"] = l.spec.stride;
      j["pad"] = l.spec.pad;
      j["exempt"] = l.spec.prune_exempt;
      nlohmann::json cm = nlohmann::json::array();
      for (const auto& c : l.col_map) cm.push_back({c.channel, c.kh, c.kw});
      j["col_map"] = std::move(cm);
      break;
    }
    case LayerKind::maxpool:
      j["pool_size"] = l.spec.pool_size;
      j["pool_stride"] = l.spec.pool_stride;
      break;
    case LayerKind::fully_connected: j["outputs"] = l.spec.outputs; break;
    default: break;
  }
  if (l.has_params()) j["weight_shape"] = {l.weight.rows(), l.weight.cols()};
  return j;
}

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "fc") return LayerKind::fully_connected;
  if (s == "softmax") return LayerKind::softmax_xent;
  throw ParseError("checkpoint: unknown layer kind '" + s + "'");
}

inline Shape3 shape_of(const nlohmann::json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>()};
}

inline void put_floats(std::string& out, std::span<const float> v) {
  for (float f : v) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw ParseError(origin_ + ": truncated checkpoint while reading " + what + " at offset " +
                       std::to_string(pos_));
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t{bytes_[pos_ + b]} << (8 * b);
    pos_ += 8;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (auto& f : out) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{bytes_[pos_ + b]} << (8 * b);
      f = std::bit_cast<float>(bits);
      pos_ += 4;
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json checkpoint_metadata(const Checkpoint& ck) {
  const auto& net = ck.net;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) layers.push_back(detail::layer_json(l));
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& lg : ck.groups) {
    nlohmann::json lambda = nlohmann::json::array(), pruned = nlohmann::json::array();
    for (const auto& g : lg.groups) {
      lambda.push_back(g.lambda);
      pruned.push_back(g.pruned);
    }
    groups.push_back({{"layer", lg.layer_id},
                      {"kind", to_string(lg.kind)},
                      {"lambda", std::move(lambda)},
                      {"pruned", std::move(pruned)}});
  }
  const auto in = net.input_shape();
  return {{"format", 1},
          {"input", {in.c, in.h, in.w}},
          {"seed", net.seed()},
          {"iteration", ck.iteration},
          {"channel_means", ck.channel_means},
          {"layers", std::move(layers)},
          {"groups", std::move(groups)},
          {"extra", ck.extra}};
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const std::string meta = checkpoint_metadata(ck).dump();
  std::string out(checkpoint_magic.begin(), checkpoint_magic.end());
  const std::uint64_t len = meta.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xFF));
  out += meta;
  for (const auto& l : ck.net.layers()) {
    if (!l.has_params()) continue;
    detail::put_floats(out, l.weight.data());
    detail::put_floats(out, l.bias);
    detail::put_floats(out, l.weight_momentum.data());
    detail::put_floats(out, l.bias_momentum);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                         const std::string& origin = "checkpoint") {
  detail::ByteReader rd(bytes, origin);
  const std::string magic = rd.text(8, "magic");
  if (magic != std::string(checkpoint_magic.begin(), checkpoint_magic.end()))
    throw ParseError(origin + ": bad magic, not an INCREG01 checkpoint");
  const std::uint64_t len = rd.u64("metadata length");
  const std::string text = rd.text(len, "metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": metadata is not valid JSON: " + e.what());
  }

  Checkpoint ck;
  try {
    if (meta.at("format").get<int>() != 1) throw ParseError(origin + ": unsupported format");
    const Shape3 input = detail::shape_of(meta.at("input"));
    std::vector<Layer<float>> layers;
    for (const auto& j : meta.at("layers")) {
      Layer<float> l;
      l.name = j.at("name").get<std::string>();
      l.spec.kind = detail::parse_layer_kind(j.at("kind").get<std::string>());
      l.in = detail::shape_of(j.at("in"));
      l.out = detail::shape_of(j.at("out"));
      switch (l.spec.kind) {
        case LayerKind::conv:
          l.spec.filters = j.at("filters").get<std::size_t>();
          l.spec.kernel = j.at("kernel").get<std::size_t>();
          l.spec.stride = j.at("stride").get<std::size_t>();
          l.spec.pad = j.at("pad").get<std::size_t>();
          l.spec.prune_exempt = j.at("exempt").get<bool>();
          l.geom = {l.in.c, l.in.h, l.in.w, l.spec.kernel, l.spec.kernel, l.spec.stride, l.spec.pad};
          for (const auto& c : j.at("col_map"))
            l.col_map.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(),
                                 c.at(2).get<std::size_t>()});
          break;
        case LayerKind::maxpool:
          l.spec.pool_size = j.at("pool_size").get<std::size_t>();
          l.spec.pool_stride = j.at("pool_stride").get<std::size_t>();
          break;
        case LayerKind::fully_connected: l.spec.outputs = j.at("outputs").get<std::size_t>(); break;
        default: break;
      }
      if (l.has_params()) {
        const auto& ws = j.at("weight_shape");
        const std::size_t r = ws.at(0).get<std::size_t>(), c = ws.at(1).get<std::size_t>();
        l.weight = Matrix<float>(r, c);
        l.weight_momentum = Matrix<float>(r, c);
        l.bias.assign(r, 0.0f);
        l.bias_momentum.assign(r, 0.0f);
        if (l.spec.kind == LayerKind::conv && l.col_map.size() != c)
          throw ParseError(origin + ": " + l.name + " column map does not match weight width");
      }
      layers.push_back(std::move(l));
    }
    for (auto& l : layers) {
      if (!l.has_params()) continue;
      rd.floats(l.weight.data(), "weights");
      rd.floats(l.bias, "biases");
      rd.floats(l.weight_momentum.data(), "weight momentum");
      rd.floats(l.bias_momentum, "bias momentum");
    }
    if (rd.pos() != rd.size())
      throw ParseError(origin + ": " + std::to_string(rd.size() - rd.pos()) +
                       " trailing bytes after the last blob");
    ck.net = Network<float>::from_layers(input, std::move(layers), meta.at("seed").get<std::uint64_t>());
    ck.iteration = meta.at("iteration").get<std::uint64_t>();
    ck.channel_means = meta.at("channel_means").get<std::vector<float>>();
    for (const auto& g : meta.at("groups")) {
      auto lg = make_groups(ck.net, g.at("layer").get<std::size_t>(),
                            parse_group_kind(g.at("kind").get<std::string>()));
      const auto& lam = g.at("lambda");
      const auto& pr = g.at("pruned");
      if (lam.size() != lg.groups.size() || pr.size() != lg.groups.size())
        throw ParseError(origin + ": group table size differs from layer " +
                         std::to_string(lg.layer_id));
      for (std::size_t i = 0; i < lg.groups.size(); ++i) {
        lg.groups[i].lambda = lam.at(i).get<double>();
        lg.groups[i].pruned = pr.at(i).get<bool>();
      }
      refresh_l1(ck.net, lg);
      ck.groups.push_back(std::move(lg));
    }
    ck.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": malformed metadata: " + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("write failed for '" + path.string() + "'");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace increg
