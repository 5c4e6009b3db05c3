#pragma once

namespace qnd {

inline constexpr const char* tool_version = "1.0.0";
inline constexpr const char* schema_version = "qndsim-1";

}  // namespace qnd
