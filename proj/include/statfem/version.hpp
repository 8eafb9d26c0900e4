#pragma once

namespace statfem {

inline constexpr const char* kVersion = "0.1.0";

} // namespace statfem
