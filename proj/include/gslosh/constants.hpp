#pragma once

#include <cstddef>

namespace gslosh {

/// Observation windows: frames per sequence and points per free surface.
inline constexpr std::size_t kSequenceLength = 16;
inline constexpr std::size_t kSurfacePoints = 21;
inline constexpr std::size_t kObservationWidth = 2 * kSurfacePoints;

/// Scalars stored per particle: q(3) v(3) e(1) sigma(3) tau(3).
inline constexpr std::size_t kFieldsPerParticle = 13;
inline constexpr std::size_t kGroupCount = 5;

}  // namespace gslosh
