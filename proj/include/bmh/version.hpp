#pragma once

namespace bmh {

inline constexpr const char* kVersion = "0.1.0";

} // namespace bmh
