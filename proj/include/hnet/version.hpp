#pragma once

namespace hnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hnet
