#pragma once

#include <deque>
#include <string_view>
#include <vector>

#include "archtune/archspace/archspace.hpp"
#include "archtune/controller/controller.hpp"

namespace archtune::stop {

struct EarlyStopConfig {
    std::size_t window = 20;
    double p_stop = 0.9;
};

/// Sliding window of sampled action vectors plus whole-run frequencies.
class ActionHistory {
public:
    ActionHistory(std::vector<int> candidates_per_site, std::size_t window);

    void record(const arch::ActionVector& sampled, const arch::ActionVector& greedy);

    std::size_t round() const noexcept { return round_; }
    std::size_t window() const noexcept { return window_; }
    std::size_t num_sites() const noexcept { return candidates_.size(); }
    bool buffer_full() const noexcept { return buffer_.size() == window_; }
    /// Frequency of `action` at `site` among the buffered samples.
    double window_frequency(std::size_t site, int action) const;
    /// Frequency of `action` at `site` over every recorded round.
    double run_frequency(std::size_t site, int action) const;
    /// Window frequency of action 1 at every site (one heatmap row).
    std::vector<double> heatmap_row() const;
    /// Consecutive most recent rounds with the current greedy vector.
    std::size_t greedy_streak() const noexcept { return streak_; }
    const arch::ActionVector& last_greedy() const noexcept { return greedy_; }

private:
    std::vector<int> candidates_;
    std::size_t window_;
    std::deque<arch::ActionVector> buffer_;
    std::vector<std::vector<std::size_t>> window_counts_;
    std::vector<std::vector<std::size_t>> run_counts_;
    std::size_t round_ = 0;
    std::size_t streak_ = 0;
    arch::ActionVector greedy_;
};

/// Full window, greedy vector unchanged for the whole window, and at every
/// site the greedy action's window frequency is at least `p_stop`.
bool is_stable(const ActionHistory& hist, double p_stop);

enum class StopReason { stable, budget_exhausted };
std::string_view to_string(StopReason r);

struct StopDecision {
    bool stopped = false;
    std::size_t stop_round = 0;
    arch::ActionVector a_star;
    StopReason reason = StopReason::budget_exhausted;
};

/// A* is the policy's greedy decode at the stop round.
StopDecision finalize(const ActionHistory& hist, const ctrl::ControllerPolicy& policy, StopReason reason);

/// 1 - stop_round / budget; zero when the budget ran out.
double search_saving(const StopDecision& d, std::size_t budget);

}  // namespace archtune::stop
