#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/model/demo_world.hpp"
#include "saelab/model/language_model.hpp"
#include "saelab/sae/checkpoint.hpp"
#include "saelab/sae/sparse_autoencoder.hpp"

// Workspace configuration (JSON):
//
//   {
//     "model_id": "synthetic-coffee-world",
//     "backend": "synthetic",            // or "real-llm"
//     "device": "cpu",
//     "hook_stream": "residual-post-mlp",
//     "cache_dir": ".saelab/cache",      // SAELAB_CACHE_DIR overrides
//     "store": ".saelab/store.json",
//     "saes": [{"layer": 18, "path": "l18.safetensors", "names": "llama-scope"}],
//     "provider": {"base_url": "...", "model": "...", "auth_token_env": "..."}
//   }

namespace saelab {

inline constexpr const char* kCacheDirEnv = "SAELAB_CACHE_DIR";

struct SaeSource {
  int layer = 0;
  std::filesystem::path path;
  std::string names = "native";  // preset name or an inline map in the config
  nlohmann::json inline_names;
};

struct WorkspaceConfig {
  std::string model_id = demo::kModelId;
  Backend backend = Backend::synthetic;
  std::string device = "cpu";
  HookStream hook_stream = HookStream::residual_post_mlp;
  std::filesystem::path cache_dir = ".saelab/cache";
  std::filesystem::path store = ".saelab/store.json";
  std::vector<SaeSource> saes;
  nlohmann::json provider;  // null when no external provider is configured

  std::filesystem::path effective_cache_dir() const {
    if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
    return cache_dir;
  }
};

inline WorkspaceConfig workspace_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  WorkspaceConfig c;
  try {
    c.model_id = j.value("model_id", c.model_id);
    c.backend = parse_backend(j.value("backend", to_string(c.backend)));
    c.device = j.value("device", c.device);
    c.hook_stream = parse_hook_stream(j.value("hook_stream", to_string(c.hook_stream)));
    auto rel = [&](const std::filesystem::path& p) { return p.is_absolute() || base.empty() ? p : base / p; };
    if (j.contains("cache_dir")) c.cache_dir = rel(j["cache_dir"].get<std::string>());
    if (j.contains("store")) c.store = rel(j["store"].get<std::string>());
    for (const auto& s : j.value("saes", nlohmann::json::array())) {
      SaeSource src;
      src.layer = s.at("layer").get<int>();
      src.path = rel(s.at("path").get<std::string>());
      if (s.contains("names")) {
        if (s["names"].is_string()) src.names = s["names"].get<std::string>();
        else src.inline_names = s["names"];
      }
      c.saes.push_back(std::move(src));
    }
    if (j.contains("provider")) c.provider = j["provider"];
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad workspace config: ") + e.what());
  }
  return c;
}

inline WorkspaceConfig load_workspace_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
  return workspace_config_from_json(j, path.parent_path());
}

struct Workspace {
  WorkspaceConfig config;
  std::shared_ptr<const LanguageModel> model;
  std::map<int, std::shared_ptr<const SparseAutoencoder>> saes;

  const SparseAutoencoder& sae(int layer) const {
    auto it = saes.find(layer);
    if (it == saes.end()) throw Error(ErrorCode::not_found, "no SAE loaded for layer " + std::to_string(layer));
    return *it->second;
  }

  std::vector<int> layers() const {
    std::vector<int> out;
    for (const auto& [l, _] : saes) out.push_back(l);
    return out;
  }
};

// The synthetic backend ships one model, the planted coffee world. The
// real-llm backend needs external weights and an inference runtime that this
// build does not link; selecting it raises a backend error.
inline Workspace open_workspace(const WorkspaceConfig& config) {
  Workspace w;
  w.config = config;
  if (config.backend == Backend::real_llm)
    throw Error(ErrorCode::backend, "model '" + config.model_id +
                                        "': the real-llm backend is not available in this build; use backend "
                                        "\"synthetic\" or the GPU reproduction script");
  if (config.model_id != demo::kModelId)
    throw Error(ErrorCode::config, "unknown synthetic model '" + config.model_id + "' (available: " + demo::kModelId + ")");
  if (config.device != "cpu") throw Error(ErrorCode::config, "synthetic backend runs on device \"cpu\" only");
  auto world = demo::make_world();
  w.model = world.model;
  w.saes = world.saes;
  for (const auto& src : config.saes) {
    LoadOptions opts;
    opts.names = src.inline_names.is_null() ? TensorNameMap::preset(src.names) : TensorNameMap::from_json(src.inline_names);
    opts.d_model = w.model->handle().d_model;
    auto sae = load_sae(src.path, src.layer, opts);
    w.model->handle().hook(src.layer);
    w.saes[src.layer] = std::make_shared<const SparseAutoencoder>(std::move(sae));
  }
  return w;
}

}  // namespace saelab
