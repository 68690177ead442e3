// real.hpp - Scalar type for all model math.
//
// Default build uses float64 so gradient checks and the determinism contract
// hold bit-exactly. Define XVAD_REAL_FLOAT for a float32 speed build (not
// covered by the numeric test suite).
#pragma once

namespace xvad {

#ifdef XVAD_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

inline constexpr const char* real_name() {
#ifdef XVAD_REAL_FLOAT
    return "float32";
#else
    return "float64";
#endif
}

}  // namespace xvad
