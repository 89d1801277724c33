#pragma once
// Process rewards: on-the-spot execution reward, latent reward from rollouts
// or PRM scores, their sum, argmax selection and the two-candidate conflict
// taxonomy. Everything here is a pure function.

#include "core.hpp"

#include <cmath>
#include <span>

namespace codetool::reward {

// 1 iff the step executed successfully; timeouts and protocol errors are failures.
constexpr int on_the_spot(const ExecutionResult& exec) noexcept {
    return exec.status == ExecStatus::Success ? 1 : 0;
}

inline double raw_latent(int delta_correct, int delta_total) {
    if (delta_total < 1) throw ZeroTotalError();
    if (delta_correct < 0 || delta_correct > delta_total)
        throw DomainError("delta_correct must be in [0, delta_total]");
    return static_cast<double>(delta_correct) / static_cast<double>(delta_total);
}

// alpha^(1-lr) * beta^(tau/L)
inline double latent_from_rollouts(double lr, double tau, const HyperParams& hp) {
    if (!(lr >= 0.0 && lr <= 1.0)) throw DomainError("lr must be in [0,1]");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw DomainError("tau must be >= 0");
    validate(hp);
    return std::pow(hp.alpha, 1.0 - lr) * std::pow(hp.beta, tau / hp.big_l);
}

// Normalized "more potential" probability from nonnegative yes/no scores.
inline double latent_from_prm_scores(double s_yes, double s_no) {
    if (!(s_yes >= 0.0) || !(s_no >= 0.0)) throw DomainError("PRM scores must be nonnegative");
    if (s_yes + s_no == 0.0) throw DegenerateScores();
    return s_yes / (s_yes + s_no);
}

inline double cumulative(int r_spot, double r_latent) {
    if (r_spot != 0 && r_spot != 1) throw DomainError("r_spot must be 0 or 1");
    if (!(r_latent >= 0.0 && r_latent <= 1.0)) throw DomainError("latent reward must be in [0,1]");
    return static_cast<double>(r_spot) + r_latent;
}

inline RewardBundle make_bundle(int r_spot, LatentEstimate latent) {
    RewardBundle b;
    b.r_spot = r_spot;
    b.r_total = cumulative(r_spot, latent.value);
    b.latent = std::move(latent);
    return b;
}

inline LatentEstimate rollout_estimate(int delta_correct, int delta_total, double tau, const HyperParams& hp) {
    LatentEstimate est;
    est.method = LatentMethod::Rollout;
    RolloutStats stats;
    stats.delta_correct = delta_correct;
    stats.delta_total = delta_total;
    stats.tau = tau;
    stats.raw_lr = raw_latent(delta_correct, delta_total);
    est.value = latent_from_rollouts(stats.raw_lr, tau, hp);
    est.rollout_stats = stats;
    return est;
}

inline LatentEstimate prm_estimate(double s_yes, double s_no) {
    return LatentEstimate{latent_from_prm_scores(s_yes, s_no), LatentMethod::Prm, std::nullopt};
}

inline LatentEstimate constant_estimate(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw DomainError("constant latent must be in [0,1]");
    return LatentEstimate{value, LatentMethod::Constant, std::nullopt};
}

// Argmax of r_total, lowest index on ties.
inline std::size_t select_candidate(std::span<const double> totals) {
    if (totals.empty()) throw EmptyInput("select_candidate: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < totals.size(); ++i)
        if (totals[i] > totals[best]) best = i;
    return best;
}

inline std::size_t select_candidate(std::span<const RewardBundle> candidates) {
    std::vector<double> totals;
    totals.reserve(candidates.size());
    for (const auto& c : candidates) totals.push_back(c.r_total);
    return select_candidate(std::span<const double>(totals));
}

enum class ConflictCase { Case1, Case2, Case3, Case4 };

inline std::string_view to_string(ConflictCase c) {
    switch (c) {
        case ConflictCase::Case1: return "Case1";
        case ConflictCase::Case2: return "Case2";
        case ConflictCase::Case3: return "Case3";
        case ConflictCase::Case4: return "Case4";
    }
    return "?";
}

// Case1: both executable. Case2: neither. Case3: the executable one has a
// strictly higher latent. Case4: it does not (reward conflict).
inline ConflictCase classify_conflict(const RewardBundle& a, const RewardBundle& b) {
    if (a.r_spot == 1 && b.r_spot == 1) return ConflictCase::Case1;
    if (a.r_spot == 0 && b.r_spot == 0) return ConflictCase::Case2;
    const auto& exec_ok = a.r_spot == 1 ? a : b;
    const auto& exec_bad = a.r_spot == 1 ? b : a;
    return exec_ok.latent.value > exec_bad.latent.value ? ConflictCase::Case3 : ConflictCase::Case4;
}

}  // namespace codetool::reward
