#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/corpus/corpus.hpp"
#include "saelab/corpus/file_lock.hpp"
#include "saelab/model/language_model.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

// Residual cache layout:
//   <root>/<corpus id>/<model id>/manifest.json
//   <root>/<corpus id>/<model id>/L<layer>/<doc index>.f32   row-major [token x d_model], little-endian float32
// Position 0 of every block is the begin-of-text token.

namespace saelab {

inline constexpr const char* kCacheSchema = "saelab.cache/1";

namespace detail {

inline std::string path_safe(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

inline std::string block_digest(const std::vector<float>& values) {
  return Digest{}.bytes(values.data(), values.size() * sizeof(float)).hex();
}

}  // namespace detail

class ActivationCache {
 public:
  struct Block {
    std::string file;  // relative to the cache directory
    std::size_t offset = 0;
    std::size_t bytes = 0;
    std::string digest;
  };

  struct Entry {
    std::string doc_id;
    std::size_t tokens = 0;
    std::map<int, Block> blocks;  // layer -> block
  };

  static std::filesystem::path directory_for(const std::filesystem::path& root, const std::string& corpus_id,
                                             const std::string& model_id) {
    return root / detail::path_safe(corpus_id) / detail::path_safe(model_id);
  }

  // Opens an existing cache without touching the model.
  static ActivationCache open(const std::filesystem::path& dir) {
    ActivationCache c;
    c.dir_ = dir;
    const auto manifest = dir / "manifest.json";
    std::ifstream in(manifest);
    if (!in) throw Error(ErrorCode::not_found, "no activation cache at " + dir.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, "malformed cache manifest " + manifest.string() + ": " + e.what());
    }
    if (j.value("schema", "") != kCacheSchema)
      throw Error(ErrorCode::format, "cache manifest " + manifest.string() + " has an unsupported schema");
    c.corpus_id_ = j.at("corpus_id").get<std::string>();
    c.model_id_ = j.at("model_id").get<std::string>();
    c.weights_digest_ = j.at("weights_digest").get<std::string>();
    if (!j.at("sae_digest").is_null()) c.sae_digest_ = j["sae_digest"].get<std::string>();
    c.d_model_ = j.at("d_model").get<std::size_t>();
    for (const auto& d : j.at("documents")) {
      Entry e;
      e.doc_id = d.at("id").get<std::string>();
      e.tokens = d.at("tokens").get<std::size_t>();
      for (const auto& [layer, b] : d.at("blocks").items())
        e.blocks[std::stoi(layer)] = Block{b.at("file").get<std::string>(), b.at("offset").get<std::size_t>(),
                                           b.at("bytes").get<std::size_t>(), b.at("digest").get<std::string>()};
      c.entries_.push_back(std::move(e));
    }
    return c;
  }

  const std::filesystem::path& directory() const noexcept { return dir_; }
  const std::string& corpus_id() const noexcept { return corpus_id_; }
  const std::string& model_id() const noexcept { return model_id_; }
  const std::string& weights_digest() const noexcept { return weights_digest_; }
  const std::optional<std::string>& sae_digest() const noexcept { return sae_digest_; }
  std::size_t d_model() const noexcept { return d_model_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::set<int> layers() const {
    std::set<int> out;
    if (!entries_.empty())
      for (const auto& [l, b] : entries_.front().blocks) out.insert(l);
    return out;
  }

  std::size_t index_of(const std::string& doc_id) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].doc_id == doc_id) return i;
    throw Error(ErrorCode::not_found, "document '" + doc_id + "' is not cached");
  }

  // Residuals of one document at one layer, one vector per token.
  std::vector<Vector> residuals(std::size_t doc_index, int layer) const {
    const auto& e = entries_.at(doc_index);
    auto it = e.blocks.find(layer);
    if (it == e.blocks.end())
      throw Error(ErrorCode::not_found, "layer " + std::to_string(layer) + " is not cached for " + e.doc_id);
    const auto& b = it->second;
    std::ifstream in(dir_ / b.file, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot read cache block " + (dir_ / b.file).string());
    std::vector<float> raw(b.bytes / sizeof(float));
    in.seekg(static_cast<std::streamoff>(b.offset));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(b.bytes));
    if (!in || raw.size() != e.tokens * d_model_)
      throw Error(ErrorCode::format, "cache block " + b.file + " is truncated");
    if (detail::block_digest(raw) != b.digest)
      throw Error(ErrorCode::stale_cache, "cache block " + b.file + " does not match its manifest digest; rebuild the cache");
    std::vector<Vector> out(e.tokens, Vector(d_model_));
    for (std::size_t t = 0; t < e.tokens; ++t)
      for (std::size_t k = 0; k < d_model_; ++k) out[t][k] = raw[t * d_model_ + k];
    return out;
  }

  // Every cached token residual of a layer as training rows.
  Matrix dataset(int layer, bool include_bos = false) const {
    std::vector<double> values;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto res = residuals(i, layer);
      for (std::size_t t = include_bos ? 0 : 1; t < res.size(); ++t, ++rows)
        values.insert(values.end(), res[t].begin(), res[t].end());
    }
    return Matrix(rows, d_model_, std::move(values));
  }

 private:
  friend ActivationCache cache_activations(const LanguageModel&, const SparseAutoencoder*, const Corpus&,
                                           std::span<const HookPoint>, const std::filesystem::path&);

  void write_manifest() const {
    nlohmann::json j{{"schema", kCacheSchema},
                     {"corpus_id", corpus_id_},
                     {"model_id", model_id_},
                     {"weights_digest", weights_digest_},
                     {"sae_digest", sae_digest_ ? nlohmann::json(*sae_digest_) : nlohmann::json(nullptr)},
                     {"d_model", d_model_},
                     {"documents", nlohmann::json::array()}};
    for (const auto& e : entries_) {
      nlohmann::json blocks = nlohmann::json::object();
      for (const auto& [layer, b] : e.blocks)
        blocks[std::to_string(layer)] = {{"file", b.file}, {"offset", b.offset}, {"bytes", b.bytes}, {"digest", b.digest}};
      j["documents"].push_back({{"id", e.doc_id}, {"tokens", e.tokens}, {"blocks", blocks}});
    }
    write_file_atomic(dir_ / "manifest.json", j.dump(1) + "\n");
  }

  std::filesystem::path dir_;
  std::string corpus_id_, model_id_, weights_digest_;
  std::optional<std::string> sae_digest_;
  std::size_t d_model_ = 0;
  std::vector<Entry> entries_;
};

// Idempotent: when the cache already holds every requested layer for this
// (corpus, model, weights, SAE) key, no forward pass is run. A cache built
// for different weights or a different SAE is reported as stale rather than
// silently reused or overwritten.
inline ActivationCache cache_activations(const LanguageModel& model, const SparseAutoencoder* sae, const Corpus& corpus,
                                         std::span<const HookPoint> hooks, const std::filesystem::path& root) {
  for (const auto& h : hooks) model.handle().validate(h);
  if (sae && sae->d_model() != model.handle().d_model)
    throw Error(ErrorCode::shape, "SAE d_model does not match the model");
  const auto dir = ActivationCache::directory_for(root, corpus.id, model.handle().model_id);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create cache directory " + dir.string() + ": " + ec.message());
  FileLock lock(dir / ".lock");

  ActivationCache cache;
  bool fresh = false;
  const std::optional<std::string> sae_digest = sae ? std::optional<std::string>(sae->digest()) : std::nullopt;
  if (std::filesystem::exists(dir / "manifest.json")) {
    cache = ActivationCache::open(dir);
    const std::string hint = " (remove " + dir.string() + " to rebuild)";
    if (cache.weights_digest_ != model.weights_digest())
      throw Error(ErrorCode::stale_cache, "cache was built with model weights " + cache.weights_digest_ +
                                              ", current weights are " + model.weights_digest() + hint);
    if (cache.sae_digest_ && sae_digest && *cache.sae_digest_ != *sae_digest)
      throw Error(ErrorCode::stale_cache,
                  "cache was built for SAE " + *cache.sae_digest_ + ", current SAE is " + *sae_digest + hint);
    if (cache.entries_.size() != corpus.size())
      throw Error(ErrorCode::stale_cache, "cache document count differs from corpus" + hint);
    if (!cache.sae_digest_) cache.sae_digest_ = sae_digest;
  } else {
    fresh = true;
    cache.dir_ = dir;
    cache.corpus_id_ = corpus.id;
    cache.model_id_ = model.handle().model_id;
    cache.weights_digest_ = model.weights_digest();
    cache.sae_digest_ = sae_digest;
    cache.d_model_ = static_cast<std::size_t>(model.handle().d_model);
    for (const auto& doc : corpus.documents) cache.entries_.push_back({doc.id, 0, {}});
  }

  std::vector<HookPoint> missing;
  const auto have = cache.layers();
  for (const auto& h : hooks)
    if (!have.contains(h.layer)) missing.push_back(h);
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());

  if (!missing.empty()) {
    for (const auto& h : missing)
      std::filesystem::create_directories(dir / ("L" + std::to_string(h.layer)));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto& entry = cache.entries_[i];
      if (entry.doc_id != corpus.documents[i].id)
        throw Error(ErrorCode::stale_cache, "cached document order differs from corpus; remove " + dir.string());
      const auto trace = forward_with_capture(model, corpus.documents[i].text, missing);
      entry.tokens = trace.tokens.size();
      for (const auto& h : missing) {
        const auto& res = trace.residuals.at(h.layer);
        std::vector<float> raw;
        raw.reserve(res.size() * cache.d_model_);
        for (const auto& v : res)
          for (double x : v) raw.push_back(static_cast<float>(x));
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.f32", i);
        const std::string file = "L" + std::to_string(h.layer) + "/" + name;
        write_file_atomic(dir / file, std::string(reinterpret_cast<const char*>(raw.data()), raw.size() * sizeof(float)));
        entry.blocks[h.layer] = ActivationCache::Block{file, 0, raw.size() * sizeof(float), detail::block_digest(raw)};
      }
    }
  }
  if (!missing.empty() || fresh) cache.write_manifest();
  return cache;
}

}  // namespace saelab
