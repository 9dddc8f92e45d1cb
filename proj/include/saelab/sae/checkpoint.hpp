#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/error.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

// SAE checkpoints are safetensors archives (8-byte little-endian header
// length, JSON header, raw tensor bytes) with a JSON sidecar next to them:
//   sae.safetensors  -> tensors "W_enc", "b_enc", "W_dec", "b_dec"
//   sae.json         -> layer, hook, d_model, n_features, norm_policy

namespace saelab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

enum class TensorDtype { f64, f32 };

// Maps the four SAE roles onto tensor names inside an archive.
struct TensorNameMap {
  std::string w_enc = "W_enc";
  std::string b_enc = "b_enc";
  std::string w_dec = "W_dec";
  std::string b_dec = "b_dec";

  static TensorNameMap native() { return {}; }

  // Published Llama-Scope residual SAEs use torch Linear naming.
  static TensorNameMap llama_scope() { return {"encoder.weight", "encoder.bias", "decoder.weight", "decoder.bias"}; }

  static TensorNameMap from_json(const nlohmann::json& j) {
    TensorNameMap m;
    m.w_enc = j.value("W_enc", m.w_enc);
    m.b_enc = j.value("b_enc", m.b_enc);
    m.w_dec = j.value("W_dec", m.w_dec);
    m.b_dec = j.value("b_dec", m.b_dec);
    return m;
  }

  static TensorNameMap preset(const std::string& name) {
    if (name == "native" || name.empty()) return native();
    if (name == "llama-scope") return llama_scope();
    throw Error(ErrorCode::config, "unknown tensor name preset '" + name + "'");
  }
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& archive) {
  auto p = archive;
  p.replace_extension(".json");
  return p;
}

namespace detail {

struct RawTensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

inline double half_to_double(std::uint16_t h) {
  const std::uint32_t sign = (h >> 15) & 1u;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  double v;
  if (exp == 0) v = std::ldexp(static_cast<double>(mant), -24);
  else if (exp == 31) v = mant ? std::nan("") : INFINITY;
  else v = std::ldexp(static_cast<double>(mant | 0x400u), static_cast<int>(exp) - 25);
  return sign ? -v : v;
}

inline std::vector<double> decode_values(const std::string& dtype, const char* data, std::size_t bytes,
                                         std::size_t count, const std::string& name) {
  std::vector<double> out(count);
  auto need = [&](std::size_t width) {
    if (bytes != width * count)
      throw Error(ErrorCode::format, "tensor '" + name + "' byte size does not match its shape and dtype");
  };
  if (dtype == "F64") {
    need(8);
    std::memcpy(out.data(), data, bytes);
  } else if (dtype == "F32") {
    need(4);
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, data + 4 * i, 4);
      out[i] = f;
    }
  } else if (dtype == "F16") {
    need(2);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint16_t h;
      std::memcpy(&h, data + 2 * i, 2);
      out[i] = half_to_double(h);
    }
  } else if (dtype == "BF16") {
    need(2);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint16_t h;
      std::memcpy(&h, data + 2 * i, 2);
      out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
    }
  } else {
    throw Error(ErrorCode::format, "tensor '" + name + "' has unsupported dtype " + dtype);
  }
  return out;
}

}  // namespace detail

// Reads every tensor of a safetensors archive into doubles.
inline std::map<std::string, detail::RawTensor> read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open archive " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw Error(ErrorCode::format, "archive " + path.string() + " is truncated (no header)");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8)
    throw Error(ErrorCode::format, "archive " + path.string() + " is truncated (header)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, "archive " + path.string() + " has a malformed header: " + e.what());
  }
  const std::size_t data_start = 8 + header_len;
  const std::size_t data_size = bytes.size() - data_start;
  std::map<std::string, detail::RawTensor> tensors;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") continue;
    try {
      const auto offsets = info.at("data_offsets").get<std::array<std::size_t, 2>>();
      if (offsets[0] > offsets[1] || offsets[1] > data_size)
        throw Error(ErrorCode::format, "archive " + path.string() + " is truncated (tensor '" + name + "')");
      detail::RawTensor t;
      t.shape = info.at("shape").get<std::vector<std::size_t>>();
      std::size_t count = 1;
      for (auto s : t.shape) count *= s;
      t.values = detail::decode_values(info.at("dtype").get<std::string>(), bytes.data() + data_start + offsets[0],
                                       offsets[1] - offsets[0], count, name);
      tensors.emplace(name, std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, "tensor '" + name + "' has a malformed header entry: " + e.what());
    }
  }
  return tensors;
}

inline void write_safetensors(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, detail::RawTensor>>& tensors,
                              TensorDtype dtype) {
  const std::size_t width = dtype == TensorDtype::f64 ? 8 : 4;
  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::size_t n = t.values.size() * width;
    header[name] = {{"dtype", dtype == TensorDtype::f64 ? "F64" : "F32"},
                    {"shape", t.shape},
                    {"data_offsets", {offset, offset + n}}};
    offset += n;
  }
  std::string text = header.dump();
  while ((8 + text.size()) % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write archive " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    if (dtype == TensorDtype::f64) {
      out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 8));
    } else {
      for (double v : t.values) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!out) throw Error(ErrorCode::io, "failed writing archive " + path.string());
}

// Deterministic: fixed tensor order, sorted JSON keys, no timestamps.
inline void save_sae(const SparseAutoencoder& sae, const std::filesystem::path& archive,
                     TensorDtype dtype = TensorDtype::f64) {
  const auto n = static_cast<std::size_t>(sae.n_features());
  const auto d = static_cast<std::size_t>(sae.d_model());
  std::vector<std::pair<std::string, detail::RawTensor>> tensors;
  tensors.emplace_back("W_enc", detail::RawTensor{{n, d}, sae.w_enc().data()});
  tensors.emplace_back("b_enc", detail::RawTensor{{n}, sae.b_enc()});
  tensors.emplace_back("W_dec", detail::RawTensor{{n, d}, sae.w_dec().data()});
  tensors.emplace_back("b_dec", detail::RawTensor{{d}, sae.b_dec()});
  write_safetensors(archive, tensors, dtype);

  const nlohmann::json meta = {{"format", "saelab.sae/1"},
                               {"layer", sae.layer()},
                               {"hook", to_string(sae.hook().stream)},
                               {"d_model", sae.d_model()},
                               {"n_features", sae.n_features()},
                               {"norm_policy", to_string(sae.norm_policy())}};
  std::ofstream out(sidecar_path(archive), std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write sidecar " + sidecar_path(archive).string());
  out << meta.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "failed writing sidecar " + sidecar_path(archive).string());
}

namespace detail {

// Brings a matrix to [n_features x d_model], whichever way it was stored.
inline Matrix orient(const RawTensor& t, std::size_t d_model, const std::string& role) {
  if (t.shape.size() != 2) throw Error(ErrorCode::format, role + " must be a 2-D tensor");
  const auto rows = t.shape[0], cols = t.shape[1];
  if (rows == cols)
    throw Error(ErrorCode::format, role + " is square; orientation is ambiguous (SAE must be overcomplete)");
  if (cols == d_model) return Matrix(rows, cols, t.values);
  if (rows == d_model) return Matrix(rows, cols, t.values).transposed();
  throw Error(ErrorCode::format, role + " shape [" + std::to_string(rows) + ", " + std::to_string(cols) +
                                     "] does not contain d_model " + std::to_string(d_model));
}

}  // namespace detail

struct LoadOptions {
  TensorNameMap names = TensorNameMap::native();
  std::optional<int> d_model;  // overrides the sidecar
};

inline SparseAutoencoder load_sae(const std::filesystem::path& archive, int layer, const LoadOptions& options = {}) {
  nlohmann::json meta = nlohmann::json::object();
  if (auto side = sidecar_path(archive); std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, "malformed sidecar " + side.string() + ": " + e.what());
    }
  }
  if (meta.contains("layer") && meta["layer"].get<int>() != layer)
    throw Error(ErrorCode::format, "archive is for layer " + std::to_string(meta["layer"].get<int>()) +
                                       ", requested layer " + std::to_string(layer));
  if (meta.contains("hook")) (void)parse_hook_stream(meta["hook"].get<std::string>());

  std::optional<int> d_model = options.d_model;
  if (!d_model && meta.contains("d_model")) d_model = meta["d_model"].get<int>();
  if (!d_model) throw Error(ErrorCode::format, "d_model unknown: no sidecar metadata and no override");

  const auto tensors = read_safetensors(archive);
  const auto& names = options.names;
  std::vector<std::string> missing;
  for (const auto* n : {&names.w_enc, &names.b_enc, &names.w_dec, &names.b_dec})
    if (!tensors.contains(*n)) missing.push_back(*n);
  if (!missing.empty()) {
    std::string msg = "archive " + archive.string() + " is missing tensors:";
    for (const auto& m : missing) msg += " " + m;
    msg += " (expected " + names.w_enc + ", " + names.b_enc + ", " + names.w_dec + ", " + names.b_dec + ")";
    throw Error(ErrorCode::format, msg);
  }
  const auto d = static_cast<std::size_t>(*d_model);
  auto w_enc = detail::orient(tensors.at(names.w_enc), d, "W_enc");
  auto w_dec = detail::orient(tensors.at(names.w_dec), d, "W_dec");
  const auto& b_enc = tensors.at(names.b_enc);
  const auto& b_dec = tensors.at(names.b_dec);
  if (b_enc.shape.size() != 1 || b_dec.shape.size() != 1)
    throw Error(ErrorCode::format, "bias tensors must be 1-D");
  if (meta.contains("n_features") && meta["n_features"].get<std::size_t>() != w_enc.rows())
    throw Error(ErrorCode::format, "sidecar n_features disagrees with W_enc");
  auto policy = DecoderNormPolicy::unit_norm_rows;
  if (meta.contains("norm_policy")) policy = parse_norm_policy(meta["norm_policy"].get<std::string>());
  try {
    return SparseAutoencoder(layer, std::move(w_enc), b_enc.values, std::move(w_dec), b_dec.values, policy);
  } catch (const Error& e) {
    throw Error(ErrorCode::format, std::string("archive shapes are inconsistent: ") + e.what());
  }
}

}  // namespace saelab
