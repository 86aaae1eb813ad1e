#pragma once

#include <cstddef>

#include "archtune/numkernel/ndarray.hpp"
#include "archtune/numkernel/rng.hpp"

namespace archtune::nk {

/// Fills `a` with U(-b, b), b = gain / sqrt(fan_in). gain = sqrt(6) gives the
/// He-uniform bound used for conv layers; gain = 1 the classic linear bound.
void fan_in_uniform(NdArray& a, std::size_t fan_in, double gain, Rng& rng);

}  // namespace archtune::nk
