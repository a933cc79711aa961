#pragma once

namespace decoyforge {

inline constexpr const char* kToolName = "decoyforge";
inline constexpr const char* kToolVersion = "0.1.0";

} // namespace decoyforge
