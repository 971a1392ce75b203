#pragma once

namespace cblb {

inline constexpr const char* kVersion = "1.0.0";

} // namespace cblb
