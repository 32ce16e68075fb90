#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fedrag/embedding.hpp"

namespace fedrag {

/// Router output: one independent relevance probability per domain.
struct DomainProbs {
    Eigen::VectorXd p;

    std::size_t size() const { return static_cast<std::size_t>(p.size()); }
    double operator[](std::size_t j) const { return p[static_cast<Eigen::Index>(j)]; }
    std::size_t argmax() const;
};

/// Multi-label domain classifier p = sigmoid(W e + b) over a frozen embedder.
struct RouterModel {
    Eigen::MatrixXd weights;  // m x d
    Eigen::VectorXd bias;     // m
    std::string embedder_fingerprint;

    static RouterModel zeros(std::size_t domains, std::size_t dimension, std::string fingerprint);

    std::size_t domains() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t dimension() const { return static_cast<std::size_t>(weights.cols()); }

    nlohmann::json to_json() const;
    static RouterModel from_json(const nlohmann::json& doc);
};

struct RouterTrainConfig {
    double learning_rate = 0.1;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double l2_penalty = 1e-4;

    void validate() const;
    nlohmann::json to_json() const;
    static RouterTrainConfig from_json(const nlohmann::json& doc);
};

/// Query embedding with its binary label vector (length m).
struct RouterExample {
    EmbeddingVector embedding;
    Eigen::VectorXd labels;
};

struct RouterGradient {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;
};

/// Probability clamp used by the loss.
inline constexpr double kBceEpsilon = 1e-7;

double sigmoid(double z);

DomainProbs predict(const RouterModel& model, const EmbeddingVector& query_embedding);

/// Mean over the batch of the per-domain binary cross-entropy summed over
/// domains. Probabilities are clamped to [eps, 1 - eps].
double bce_loss(const RouterModel& model, std::span<const RouterExample> batch);

/// Gradient of bce_loss (without the L2 term).
RouterGradient bce_gradient(const RouterModel& model, std::span<const RouterExample> batch);

struct RouterTrainResult {
    RouterModel model;
    /// Full-dataset bce_loss after each epoch.
    std::vector<double> loss_trace;
    std::vector<std::string> warnings;
};

/// Mini-batch SGD on bce_loss + l2 * ||W||^2 from a zero initialization.
/// Deterministic for a fixed seed.
RouterTrainResult train_router(std::span<const RouterExample> examples, std::size_t domains,
                               std::size_t dimension, const std::string& embedder_fingerprint,
                               const RouterTrainConfig& cfg);

struct LabeledQuery {
    std::string text;
    std::vector<std::size_t> domains;
};

/// Embeds each query and trains on its multi-hot domain labels.
RouterTrainResult train_router(std::span<const LabeledQuery> dataset, const Embedder& embedder,
                               std::size_t domains, const RouterTrainConfig& cfg);

void save_router(const RouterModel& model, const std::filesystem::path& path);

/// Throws DataError when `expected_fingerprint` is non-empty and differs from
/// the stored one.
RouterModel load_router(const std::filesystem::path& path, const std::string& expected_fingerprint = {});

}  // namespace fedrag
