#pragma once

namespace mfcq {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr const char* kFileMagic = "MFCQ1";

}  // namespace mfcq
