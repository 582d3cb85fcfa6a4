#pragma once

// Scalar precision is fixed per build of the library. The f32 build is used
// for training and benchmarks, the f64 build for gradient verification. Both
// builds can be linked into one binary because every symbol lives in a
// precision-specific inline namespace.

#ifdef CHNET_DOUBLE
#define CHNET_NS_BEGIN namespace chnet { inline namespace f64 {
#else
#define CHNET_NS_BEGIN namespace chnet { inline namespace f32 {
#endif
#define CHNET_NS_END } }

CHNET_NS_BEGIN

#ifdef CHNET_DOUBLE
using Real = double;
#else
using Real = float;
#endif

inline constexpr bool kDoublePrecision = sizeof(Real) == 8;

CHNET_NS_END
