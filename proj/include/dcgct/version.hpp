#pragma once

namespace dcgct {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dcgct
