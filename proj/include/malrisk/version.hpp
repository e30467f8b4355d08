#pragma once

namespace malrisk {
inline constexpr const char* kVersion = "0.1.0";
}
