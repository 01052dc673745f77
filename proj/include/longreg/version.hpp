#pragma once

namespace longreg {
inline constexpr const char* kVersion = "0.1.0";
}
