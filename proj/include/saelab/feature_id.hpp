#pragma once

#include <charconv>
#include <compare>
#include <string>
#include <string_view>

#include "json.hpp"
#include "saelab/error.hpp"

namespace saelab {

// A feature is addressed as "layer/index", e.g. "18/9463".
struct FeatureId {
  int layer = 0;
  int index = 0;

  std::string str() const { return std::to_string(layer) + "/" + std::to_string(index); }

  static FeatureId parse(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) {
      throw Error(ErrorCode::format, "feature id must be 'layer/index', got '" + std::string(text) + "'");
    }
    FeatureId id;
    auto parse_int = [&](std::string_view part, int& out) {
      const auto* end = part.data() + part.size();
      auto [ptr, ec] = std::from_chars(part.data(), end, out);
      if (ec != std::errc{} || ptr != end || part.empty() || out < 0) {
        throw Error(ErrorCode::format, "invalid feature id '" + std::string(text) + "'");
      }
    };
    parse_int(text.substr(0, slash), id.layer);
    parse_int(text.substr(slash + 1), id.index);
    return id;
  }

  friend auto operator<=>(const FeatureId&, const FeatureId&) = default;
};

inline void to_json(nlohmann::json& j, const FeatureId& id) { j = id.str(); }
inline void from_json(const nlohmann::json& j, FeatureId& id) { id = FeatureId::parse(j.get<std::string>()); }

}  // namespace saelab

template <>
struct std::hash<saelab::FeatureId> {
  std::size_t operator()(const saelab::FeatureId& id) const noexcept {
    return std::hash<long long>{}((static_cast<long long>(id.layer) << 32) ^ id.index);
  }
};
