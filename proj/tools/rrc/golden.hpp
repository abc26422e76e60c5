#pragma once

#include <cstdint>
#include <random>

#include <nlohmann/json.hpp>

#include "rrc/geometry.hpp"

namespace rrc::tools {

/// Random valid quad: a rotated rectangle with independent corner jitter,
/// retried until it canonicalises.
geometry::Quad random_quad(std::mt19937_64& rng, double span = 1000.0);

/// Test vectors for client-side homography implementations.
nlohmann::ordered_json golden_vectors(std::uint64_t seed, int count);

}  // namespace rrc::tools
