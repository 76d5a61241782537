#pragma once

#include "splatfield/io.hpp"

#include <string>

namespace splatfield {

#ifdef SPLATFIELD_VERSION
inline constexpr const char* kVersion = SPLATFIELD_VERSION;
#else
inline constexpr const char* kVersion = "0.0.0";
#endif

/// "splatfield X.Y.Z (SPSC v1, SPMK v1, SPFM v1)".
inline std::string version_banner() {
    return std::string("splatfield ") + kVersion + " (SPSC v" + std::to_string(kBundleVersion) + ", SPMK v" +
           std::to_string(kMaskVersion) + ", SPFM v" + std::to_string(kFeatureMapVersion) + ")";
}

} // namespace splatfield
