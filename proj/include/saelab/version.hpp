#pragma once

namespace saelab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace saelab
