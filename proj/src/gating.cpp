#include "fedrag/gating.hpp"

#include <algorithm>
#include <cmath>

#include "fedrag/error.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-12;

void check_probs(const DomainProbs& probs) {
    if (probs.size() == 0) throw DataError("gating: empty probability vector");
    for (std::size_t j = 0; j < probs.size(); ++j) {
        const double p = probs[j];
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw DataError("gating: probabilities must lie in [0, 1]");
    }
}

}  // namespace

void GatingConfig::validate() const {
    if (!(tau_min > 0.0 && tau_min <= tau0 && tau0 <= 1.0)) {
        throw UsageError("gating: require 0 < tau_min <= tau0 <= 1");
    }
}

json GatingConfig::to_json() const {
    return {{"tau0", tau0},
            {"tau_min", tau_min},
            {"seed", seed},
            {"mode", mode == GatingMode::stochastic ? "stochastic" : "deterministic"},
            {"ensure_nonempty", ensure_nonempty}};
}

GatingConfig GatingConfig::from_json(const json& doc) {
    GatingConfig c;
    c.tau0 = doc.value("tau0", c.tau0);
    c.tau_min = doc.value("tau_min", c.tau_min);
    c.seed = doc.value("seed", c.seed);
    const auto mode = doc.value("mode", std::string("stochastic"));
    if (mode == "stochastic") {
        c.mode = GatingMode::stochastic;
    } else if (mode == "deterministic") {
        c.mode = GatingMode::deterministic;
    } else {
        throw UsageError("gating: unknown mode '" + mode + "'");
    }
    c.ensure_nonempty = doc.value("ensure_nonempty", c.ensure_nonempty);
    c.validate();
    return c;
}

json GateDecision::to_json() const { return {{"tau", threshold}, {"gate_probs", gate_probs}, {"active", active}}; }

double adaptive_threshold(const DomainProbs& probs, const GatingConfig& cfg) {
    cfg.validate();
    check_probs(probs);
    const double total = probs.p.sum();
    if (!(total > 0.0)) throw DataError("degenerate probabilities");
    const std::size_t m = probs.size();
    if (m == 1) return cfg.tau0;

    double entropy = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double q = std::max(probs[j] / total, kProbFloor);
        entropy -= q * std::log(q);
    }
    const double raw = cfg.tau0 * (1.0 - entropy / std::log(static_cast<double>(m)));
    return std::clamp(raw, cfg.tau_min, cfg.tau0);
}

double gate_probability(double p, double tau) {
    if (!(tau > 0.0)) throw DataError("gate_probability: threshold must be positive");
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("gate_probability: probability must lie in [0, 1]");
    return std::min(1.0, p / tau);
}

GateDecision sample_active(const DomainProbs& probs, const GatingConfig& cfg, Rng& rng) {
    GateDecision d;
    d.threshold = adaptive_threshold(probs, cfg);
    d.gate_probs.reserve(probs.size());
    for (std::size_t j = 0; j < probs.size(); ++j) {
        const double g = gate_probability(probs[j], d.threshold);
        d.gate_probs.push_back(g);
        const bool on = cfg.mode == GatingMode::stochastic ? rng.bernoulli(g) : g >= 0.5;
        if (on) d.active.push_back(j);
    }
    if (d.active.empty() && cfg.ensure_nonempty) {
        d.active.push_back(probs.argmax());
        d.fallback = true;
    }
    return d;
}

}  // namespace fedrag
