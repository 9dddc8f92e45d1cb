#pragma once

#include <algorithm>
#include <chrono>
#include <cctype>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/corpus/file_lock.hpp"
#include "saelab/error.hpp"
#include "saelab/feature_id.hpp"

namespace saelab {

inline constexpr const char* kStoreSchema = "saelab.store/1";

struct DescriptionEntry {
  std::string text;
  std::string updated_at;
};

struct ScanThresholds {
  double hyperactive = 0.9;
  double bos_ratio = 10.0;
};

// Per-feature statistics from a density/BOS scan. Flags are always derived
// from these numbers and the thresholds, never stored on their own.
struct FeatureStats {
  std::size_t active_tokens = 0;
  std::size_t total_tokens = 0;
  double density = 0.0;
  double bos_activation = 0.0;
  double max_in_text_activation = 0.0;
  std::string corpus_id;
};

enum class FeatureFlag { hyperactive, dead, bos_anomalous };

inline std::string to_string(FeatureFlag f) {
  switch (f) {
    case FeatureFlag::hyperactive: return "hyperactive";
    case FeatureFlag::dead: return "dead";
    case FeatureFlag::bos_anomalous: return "bos-anomalous";
  }
  return "?";
}

inline std::vector<FeatureFlag> derive_flags(const FeatureStats& s, const ScanThresholds& t) {
  std::vector<FeatureFlag> flags;
  if (s.density > t.hyperactive) flags.push_back(FeatureFlag::hyperactive);
  if (s.density == 0.0) flags.push_back(FeatureFlag::dead);
  if (s.bos_activation > 0.0 && s.bos_activation >= t.bos_ratio * s.max_in_text_activation)
    flags.push_back(FeatureFlag::bos_anomalous);
  return flags;
}

struct FeatureRecord {
  FeatureId feature;
  std::map<std::string, DescriptionEntry> descriptions;  // source -> current description
  std::optional<double> max_activation;
  std::optional<FeatureStats> stats;
  std::vector<FeatureFlag> flags;  // filled from stats on read
};

inline nlohmann::json to_json(const FeatureRecord& r) {
  nlohmann::json j{{"feature", r.feature.str()}, {"layer", r.feature.layer}, {"index", r.feature.index}};
  auto& d = j["descriptions"] = nlohmann::json::array();
  for (const auto& [source, e] : r.descriptions) d.push_back({{"source", source}, {"description", e.text}});
  j["max_activation"] = r.max_activation ? nlohmann::json(*r.max_activation) : nlohmann::json(nullptr);
  if (r.stats) {
    j["density"] = r.stats->density;
    j["bos_activation"] = r.stats->bos_activation;
    j["max_in_text_activation"] = r.stats->max_in_text_activation;
    j["scan_corpus"] = r.stats->corpus_id;
  } else {
    j["density"] = nullptr;
  }
  auto& f = j["flags"] = nlohmann::json::array();
  for (auto flag : r.flags) f.push_back(to_string(flag));
  return j;
}

struct ImportResult {
  std::size_t imported = 0;  // rows that changed the store
  std::size_t unchanged = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

struct ImportLimits {
  int n_layers = 32;
  std::optional<int> n_features;
};

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

// Feature descriptions, scan statistics and interpretation records in a
// single JSON file. Writers hold an exclusive lock on <file>.lock.
class MetadataStore {
 public:
  MetadataStore() = default;
  explicit MetadataStore(std::filesystem::path path) : path_(std::move(path)) {
    if (!path_.empty() && std::filesystem::exists(path_)) load();
  }

  const std::filesystem::path& path() const noexcept { return path_; }
  const ScanThresholds& thresholds() const noexcept { return thresholds_; }
  void set_thresholds(ScanThresholds t) { thresholds_ = t; }

  std::size_t size() const noexcept { return features_.size(); }

  std::optional<FeatureRecord> get(const FeatureId& id) const {
    auto it = features_.find(id);
    if (it == features_.end()) return std::nullopt;
    return with_flags(it->second);
  }

  std::vector<FeatureRecord> all() const {
    std::vector<FeatureRecord> out;
    for (const auto& [id, r] : features_) out.push_back(with_flags(r));
    return out;
  }

  // Returns true when the stored description changed.
  bool upsert_description(const FeatureId& id, const std::string& source, const std::string& text) {
    auto& r = record(id);
    auto it = r.descriptions.find(source);
    if (it != r.descriptions.end() && it->second.text == text) return false;
    r.descriptions[source] = DescriptionEntry{text, detail::utc_now()};
    return true;
  }

  void set_stats(const FeatureId& id, const FeatureStats& stats) { record(id).stats = stats; }
  void set_max_activation(const FeatureId& id, double v) { record(id).max_activation = v; }

  void put_interpretation(const FeatureId& id, nlohmann::json record_json) {
    interpretations_[id] = std::move(record_json);
  }
  std::optional<nlohmann::json> interpretation(const FeatureId& id) const {
    auto it = interpretations_.find(id);
    if (it == interpretations_.end()) return std::nullopt;
    return it->second;
  }

  // Case-insensitive substring match over descriptions, ordered by
  // (layer, index). A query written as /pattern/ is an ECMAScript regex.
  std::vector<FeatureRecord> search(const std::string& query) const {
    std::function<bool(const std::string&)> match;
    if (query.size() >= 2 && query.front() == '/' && query.back() == '/') {
      std::shared_ptr<std::regex> re;
      try {
        re = std::make_shared<std::regex>(query.substr(1, query.size() - 2),
                                          std::regex::ECMAScript | std::regex::icase);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::query, "invalid pattern " + query + ": " + e.what());
      }
      match = [re](const std::string& text) { return std::regex_search(text, *re); };
    } else {
      const auto needle = detail::lower(query);
      match = [needle](const std::string& text) { return detail::lower(text).find(needle) != std::string::npos; };
    }
    std::vector<FeatureRecord> out;
    for (const auto& [id, r] : features_) {
      bool hit = false;
      for (const auto& [source, e] : r.descriptions) hit = hit || match(e.text);
      if (hit) out.push_back(with_flags(r));
    }
    return out;
  }

  // json-lines rows {layer, index, description, source}; malformed or
  // out-of-range rows are skipped and counted.
  ImportResult import_jsonl(std::istream& in, const ImportLimits& limits = {}, const std::string& default_source = "imported") {
    ImportResult result;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      auto skip = [&](const std::string& why) {
        ++result.skipped;
        result.warnings.push_back("line " + std::to_string(n) + ": " + why);
      };
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        skip("not valid JSON");
        continue;
      }
      if (!j.is_object() || !j.contains("layer") || !j["layer"].is_number_integer() || !j.contains("index") ||
          !j["index"].is_number_integer() || !j.contains("description") || !j["description"].is_string()) {
        skip("expected integer layer/index and string description");
        continue;
      }
      const int layer = j["layer"].get<int>();
      const int index = j["index"].get<int>();
      if (layer < 0 || layer >= limits.n_layers) {
        skip("layer " + std::to_string(layer) + " out of range");
        continue;
      }
      if (index < 0 || (limits.n_features && index >= *limits.n_features)) {
        skip("index " + std::to_string(index) + " out of range");
        continue;
      }
      std::string source = default_source;
      if (j.contains("source") && j["source"].is_string()) source = j["source"].get<std::string>();
      if (upsert_description(FeatureId{layer, index}, source, j["description"].get<std::string>())) ++result.imported;
      else ++result.unchanged;
    }
    return result;
  }

  // All-or-nothing variant: the store is untouched when `fetch` throws.
  ImportResult import_transaction(const std::function<std::string()>& fetch, const ImportLimits& limits = {},
                                  const std::string& default_source = "imported") {
    std::string body;
    try {
      body = fetch();
    } catch (const Error& e) {
      throw Error(ErrorCode::import, std::string("description import failed, nothing imported: ") + e.what());
    }
    MetadataStore staged = *this;
    std::istringstream in(body);
    auto result = staged.import_jsonl(in, limits, default_source);
    *this = std::move(staged);
    return result;
  }

  // Sorted by (layer, index, source); timestamps are not exported.
  std::string export_jsonl() const {
    std::string out;
    for (const auto& [id, r] : features_)
      for (const auto& [source, e] : r.descriptions) {
        nlohmann::ordered_json j;
        j["layer"] = id.layer;
        j["index"] = id.index;
        j["description"] = e.text;
        j["source"] = source;
        out += j.dump() + "\n";
      }
    return out;
  }

  void save() const {
    if (path_.empty()) throw Error(ErrorCode::io, "metadata store has no file path");
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    auto lock_path = path_;
    lock_path += ".lock";
    FileLock lock(lock_path);
    write_file_atomic(path_, serialize().dump(1) + "\n");
  }

  nlohmann::json serialize() const {
    nlohmann::json j{{"schema", kStoreSchema},
                     {"thresholds", {{"hyperactive", thresholds_.hyperactive}, {"bos_ratio", thresholds_.bos_ratio}}}};
    auto& feats = j["features"] = nlohmann::json::array();
    for (const auto& [id, r] : features_) {
      nlohmann::json f{{"feature", id.str()}};
      auto& d = f["descriptions"] = nlohmann::json::object();
      for (const auto& [source, e] : r.descriptions) d[source] = {{"text", e.text}, {"updated_at", e.updated_at}};
      if (r.max_activation) f["max_activation"] = *r.max_activation;
      if (r.stats)
        f["stats"] = {{"active_tokens", r.stats->active_tokens},
                      {"total_tokens", r.stats->total_tokens},
                      {"density", r.stats->density},
                      {"bos_activation", r.stats->bos_activation},
                      {"max_in_text_activation", r.stats->max_in_text_activation},
                      {"corpus_id", r.stats->corpus_id}};
      feats.push_back(std::move(f));
    }
    auto& interp = j["interpretations"] = nlohmann::json::object();
    for (const auto& [id, rec] : interpretations_) interp[id.str()] = rec;
    return j;
  }

 private:
  FeatureRecord& record(const FeatureId& id) {
    auto [it, inserted] = features_.try_emplace(id);
    if (inserted) it->second.feature = id;
    return it->second;
  }

  FeatureRecord with_flags(FeatureRecord r) const {
    r.flags = r.stats ? derive_flags(*r.stats, thresholds_) : std::vector<FeatureFlag>{};
    return r;
  }

  void load() {
    std::ifstream in(path_);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, "malformed metadata store " + path_.string() + ": " + e.what());
    }
    if (j.value("schema", "") != kStoreSchema)
      throw Error(ErrorCode::format, "metadata store " + path_.string() + " has an unsupported schema");
    if (j.contains("thresholds")) {
      thresholds_.hyperactive = j["thresholds"].value("hyperactive", thresholds_.hyperactive);
      thresholds_.bos_ratio = j["thresholds"].value("bos_ratio", thresholds_.bos_ratio);
    }
    for (const auto& f : j.value("features", nlohmann::json::array())) {
      auto& r = record(FeatureId::parse(f.at("feature").get<std::string>()));
      const auto descriptions = f.value("descriptions", nlohmann::json::object());
      for (const auto& [source, e] : descriptions.items())
        r.descriptions[source] = DescriptionEntry{e.at("text").get<std::string>(), e.value("updated_at", "")};
      if (f.contains("max_activation")) r.max_activation = f["max_activation"].get<double>();
      if (f.contains("stats")) {
        const auto& s = f["stats"];
        r.stats = FeatureStats{s.at("active_tokens").get<std::size_t>(), s.at("total_tokens").get<std::size_t>(),
                               s.at("density").get<double>(), s.at("bos_activation").get<double>(),
                               s.at("max_in_text_activation").get<double>(), s.value("corpus_id", "")};
      }
    }
    const auto interpretations = j.value("interpretations", nlohmann::json::object());
    for (const auto& [key, rec] : interpretations.items())
      interpretations_[FeatureId::parse(key)] = rec;
  }

  std::filesystem::path path_;
  ScanThresholds thresholds_;
  std::map<FeatureId, FeatureRecord> features_;
  std::map<FeatureId, nlohmann::json> interpretations_;
};

}  // namespace saelab
