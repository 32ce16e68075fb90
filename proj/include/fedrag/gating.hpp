#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "fedrag/random.hpp"
#include "fedrag/router.hpp"

namespace fedrag {

enum class GatingMode { stochastic, deterministic };

struct GatingConfig {
    double tau0 = 0.5;
    double tau_min = 0.05;
    std::uint64_t seed = 0;
    GatingMode mode = GatingMode::stochastic;
    bool ensure_nonempty = true;

    /// Requires 0 < tau_min <= tau0 <= 1.
    void validate() const;
    nlohmann::json to_json() const;
    static GatingConfig from_json(const nlohmann::json& doc);
};

struct GateDecision {
    double threshold = 0.0;
    std::vector<double> gate_probs;
    /// Ascending domain ids.
    std::vector<std::size_t> active;
    /// True when the argmax fallback filled an empty draw.
    bool fallback = false;

    nlohmann::json to_json() const;
};

/// Entropy-scaled threshold tau0 * (1 - H(p_hat) / ln m), with p_hat = p / sum(p)
/// floored at 1e-12, clamped to [tau_min, tau0]. Returns tau0 when m == 1.
double adaptive_threshold(const DomainProbs& probs, const GatingConfig& cfg);

/// min(1, p / tau).
double gate_probability(double p, double tau);

/// Draws the active domain set. Stochastic mode consumes exactly one uniform
/// per domain from `rng`; deterministic mode activates gate_prob >= 0.5.
GateDecision sample_active(const DomainProbs& probs, const GatingConfig& cfg, Rng& rng);

}  // namespace fedrag
