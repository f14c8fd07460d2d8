#pragma once
// Library version, echoed into every report so artifacts are traceable.

namespace mfgc {

inline constexpr const char* version_string = "0.1.0";

}  // namespace mfgc
