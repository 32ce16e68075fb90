#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedrag/random.hpp"
#include "fedrag/retriever.hpp"
#include "fedrag/router.hpp"
#include "support/fixtures.hpp"

namespace fedrag::testing {

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// |a - b| / max(|a|, |b|), with a small floor so entries that are zero in
/// both do not divide by zero.
inline double entry_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct RouterInstance {
    RouterModel model;
    std::vector<RouterExample> batch;
};

inline RouterInstance random_router_instance(Rng& rng) {
    const auto m = static_cast<std::size_t>(rng.between(1, 4));
    const auto d = static_cast<std::size_t>(rng.between(2, 8));
    const auto n = static_cast<std::size_t>(rng.between(1, 6));
    RouterInstance inst{RouterModel::zeros(m, d, "test"), {}};
    for (Eigen::Index i = 0; i < inst.model.weights.size(); ++i) inst.model.weights.data()[i] = 0.7 * rng.normal();
    for (Eigen::Index j = 0; j < inst.model.bias.size(); ++j) inst.model.bias[j] = 0.5 * rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        RouterExample ex{random_vector(rng, d), Eigen::VectorXd(static_cast<Eigen::Index>(m))};
        for (Eigen::Index j = 0; j < ex.labels.size(); ++j) ex.labels[j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        inst.batch.push_back(std::move(ex));
    }
    return inst;
}

/// Largest entry-wise error between bce_gradient and central differences.
inline double router_gradient_error(const RouterInstance& inst) {
    const auto g = bce_gradient(inst.model, inst.batch);
    const double h = kFiniteDifferenceStep;
    double worst = 0.0;
    auto model = inst.model;
    for (Eigen::Index i = 0; i < model.weights.size(); ++i) {
        const double saved = model.weights.data()[i];
        model.weights.data()[i] = saved + h;
        const double up = bce_loss(model, inst.batch);
        model.weights.data()[i] = saved - h;
        const double down = bce_loss(model, inst.batch);
        model.weights.data()[i] = saved;
        worst = std::max(worst, entry_error(g.weights.data()[i], (up - down) / (2 * h)));
    }
    for (Eigen::Index j = 0; j < model.bias.size(); ++j) {
        const double saved = model.bias[j];
        model.bias[j] = saved + h;
        const double up = bce_loss(model, inst.batch);
        model.bias[j] = saved - h;
        const double down = bce_loss(model, inst.batch);
        model.bias[j] = saved;
        worst = std::max(worst, entry_error(g.bias[j], (up - down) / (2 * h)));
    }
    return worst;
}

struct RetrieverInstance {
    ProjectionModel model;
    ContrastiveBatch batch;
    double temperature = 0.5;
    bool in_batch_negatives = false;
};

inline RetrieverInstance random_retriever_instance(Rng& rng) {
    const auto d = static_cast<std::size_t>(rng.between(2, 8));
    const auto d_out = static_cast<std::size_t>(rng.between(2, static_cast<std::int64_t>(d)));
    RetrieverInstance inst;
    inst.model.projection.resize(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < inst.model.projection.size(); ++i) inst.model.projection.data()[i] = rng.normal();
    inst.model.embedder_fingerprint = "test";
    inst.temperature = 0.1 + 0.9 * rng.uniform();
    inst.in_batch_negatives = rng.bernoulli(0.5);

    const auto nq = static_cast<std::size_t>(rng.between(1, 4));
    const auto nd = static_cast<std::size_t>(rng.between(2, 6));
    for (std::size_t i = 0; i < nq; ++i) inst.batch.queries.push_back(random_vector(rng, d));
    for (std::size_t j = 0; j < nd; ++j) inst.batch.documents.push_back(random_vector(rng, d));
    for (std::size_t i = 0; i < nq; ++i) {
        std::vector<std::size_t> docs(nd);
        for (std::size_t j = 0; j < nd; ++j) docs[j] = j;
        rng.shuffle(docs);
        const auto pos = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(nd) - 1));
        const auto neg = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(nd - pos)));
        inst.batch.positives.emplace_back(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(pos));
        inst.batch.negatives.emplace_back(docs.begin() + static_cast<std::ptrdiff_t>(pos),
                                          docs.begin() + static_cast<std::ptrdiff_t>(pos + neg));
    }
    return inst;
}

/// Largest entry-wise error between symmetric_loss_gradient and central
/// differences of symmetric_loss.
inline double retriever_gradient_error(const RetrieverInstance& inst) {
    const auto lg = symmetric_loss_gradient(inst.batch, inst.model, inst.temperature, inst.in_batch_negatives);
    const double h = kFiniteDifferenceStep;
    double worst = 0.0;
    auto model = inst.model;
    for (Eigen::Index i = 0; i < model.projection.size(); ++i) {
        const double saved = model.projection.data()[i];
        model.projection.data()[i] = saved + h;
        const double up = symmetric_loss(inst.batch, model, inst.temperature, inst.in_batch_negatives);
        model.projection.data()[i] = saved - h;
        const double down = symmetric_loss(inst.batch, model, inst.temperature, inst.in_batch_negatives);
        model.projection.data()[i] = saved;
        worst = std::max(worst, entry_error(lg.gradient.data()[i], (up - down) / (2 * h)));
    }
    return worst;
}

}  // namespace fedrag::testing
