#pragma once

namespace adacap {
inline constexpr const char* kVersion = "0.1.0";
}
