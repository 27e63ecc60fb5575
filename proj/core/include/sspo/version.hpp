#pragma once

namespace sspo {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sspo
