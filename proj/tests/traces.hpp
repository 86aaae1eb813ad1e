#pragma once

// Scripted controller traces for exercising the stopping rule without
// training anything.

#include <vector>

#include "archtune/archspace/archspace.hpp"
#include "archtune/numkernel/rng.hpp"

namespace archtune::testing {

struct ScriptedTrace {
    std::vector<arch::ActionVector> sampled;
    std::vector<arch::ActionVector> greedy;
    std::vector<double> reward;
};

/// Rounds 1..fix_round sample uniformly random binary vectors with a
/// wandering greedy decode; from fix_round + 1 on, every sample and the greedy
/// decode equal `fixed`. Reward climbs noisily until `converge_round` and is
/// flat afterwards.
inline ScriptedTrace fixing_trace(const arch::ActionVector& fixed, std::size_t fix_round, std::size_t converge_round,
                                  std::size_t rounds, std::uint64_t seed) {
    nk::Rng rng(seed);
    ScriptedTrace t;
    const std::size_t k = fixed.size();
    for (std::size_t r = 1; r <= rounds; ++r) {
        if (r <= fix_round) {
            std::vector<int> s(k), g(k);
            for (std::size_t i = 0; i < k; ++i) {
                s[i] = static_cast<int>(rng.below(2));
                g[i] = static_cast<int>(rng.below(2));
            }
            t.sampled.emplace_back(s);
            t.greedy.emplace_back(g);
        } else {
            t.sampled.push_back(fixed);
            t.greedy.push_back(fixed);
        }
        const double progress = std::min(1.0, static_cast<double>(r) / static_cast<double>(converge_round));
        const double noise = r < converge_round ? 0.05 * rng.uniform(-1, 1) : 0.0;
        t.reward.push_back(0.3 + 0.6 * progress + noise);
    }
    return t;
}

}  // namespace archtune::testing
