#include "archtune/earlystop/earlystop.hpp"

#include <stdexcept>

namespace archtune::stop {

ActionHistory::ActionHistory(std::vector<int> candidates_per_site, std::size_t window)
    : candidates_(std::move(candidates_per_site)), window_(window) {
    if (window_ == 0) throw std::invalid_argument("stability window must be positive");
    for (int c : candidates_) {
        window_counts_.emplace_back(static_cast<std::size_t>(c), 0);
        run_counts_.emplace_back(static_cast<std::size_t>(c), 0);
    }
}

void ActionHistory::record(const arch::ActionVector& sampled, const arch::ActionVector& greedy) {
    if (sampled.size() != num_sites() || greedy.size() != num_sites()) {
        throw std::invalid_argument("action vector length differs from site count");
    }
    for (std::size_t s = 0; s < num_sites(); ++s) {
        if (sampled[s] < 0 || sampled[s] >= candidates_[s] || greedy[s] < 0 || greedy[s] >= candidates_[s]) {
            throw std::out_of_range("action index out of range at site " + std::to_string(s));
        }
    }
    if (buffer_.size() == window_) {
        const auto& old = buffer_.front();
        for (std::size_t s = 0; s < num_sites(); ++s) --window_counts_[s][static_cast<std::size_t>(old[s])];
        buffer_.pop_front();
    }
    buffer_.push_back(sampled);
    for (std::size_t s = 0; s < num_sites(); ++s) {
        ++window_counts_[s][static_cast<std::size_t>(sampled[s])];
        ++run_counts_[s][static_cast<std::size_t>(sampled[s])];
    }
    streak_ = (round_ > 0 && greedy == greedy_) ? streak_ + 1 : 1;
    greedy_ = greedy;
    ++round_;
}

double ActionHistory::window_frequency(std::size_t site, int action) const {
    if (buffer_.empty()) return 0.0;
    return static_cast<double>(window_counts_.at(site).at(static_cast<std::size_t>(action))) /
           static_cast<double>(buffer_.size());
}

double ActionHistory::run_frequency(std::size_t site, int action) const {
    if (round_ == 0) return 0.0;
    return static_cast<double>(run_counts_.at(site).at(static_cast<std::size_t>(action))) /
           static_cast<double>(round_);
}

std::vector<double> ActionHistory::heatmap_row() const {
    std::vector<double> row;
    for (std::size_t s = 0; s < num_sites(); ++s) row.push_back(window_frequency(s, 1));
    return row;
}

bool is_stable(const ActionHistory& hist, double p_stop) {
    if (!(p_stop > 0.5 && p_stop <= 1.0)) throw std::invalid_argument("p_stop must lie in (0.5, 1]");
    if (!hist.buffer_full() || hist.greedy_streak() < hist.window()) return false;
    for (std::size_t s = 0; s < hist.num_sites(); ++s) {
        if (hist.window_frequency(s, hist.last_greedy()[s]) < p_stop) return false;
    }
    return true;
}

std::string_view to_string(StopReason r) { return r == StopReason::stable ? "stable" : "budget_exhausted"; }

StopDecision finalize(const ActionHistory& hist, const ctrl::ControllerPolicy& policy, StopReason reason) {
    return {true, hist.round(), ctrl::greedy_episode(policy).actions, reason};
}

double search_saving(const StopDecision& d, std::size_t budget) {
    if (budget == 0) throw std::invalid_argument("budget must be positive");
    if (d.reason == StopReason::budget_exhausted || d.stop_round >= budget) return 0.0;
    return 1.0 - static_cast<double>(d.stop_round) / static_cast<double>(budget);
}

}  // namespace archtune::stop
