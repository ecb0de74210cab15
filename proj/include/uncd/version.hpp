#pragma once

namespace uncd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace uncd
