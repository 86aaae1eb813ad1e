#include "archtune/numkernel/init.hpp"

#include <cmath>

namespace archtune::nk {

void fan_in_uniform(NdArray& a, std::size_t fan_in, double gain, Rng& rng) {
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    for (double& v : a.data()) v = rng.uniform(-bound, bound);
}

}  // namespace archtune::nk
