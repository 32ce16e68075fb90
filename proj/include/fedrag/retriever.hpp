#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fedrag/embedding.hpp"

namespace fedrag {

/// Shared bi-encoder head: E(x) = normalize(P * base(x)) for queries and
/// documents alike.
struct ProjectionModel {
    Eigen::MatrixXd projection;  // d' x d
    std::string embedder_fingerprint;

    static ProjectionModel identity(std::size_t dimension, std::string fingerprint);

    std::size_t input_dimension() const { return static_cast<std::size_t>(projection.cols()); }
    std::size_t output_dimension() const { return static_cast<std::size_t>(projection.rows()); }

    /// Content hash of the matrix and fingerprint; indexes record it.
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static ProjectionModel from_json(const nlohmann::json& doc);
};

struct RetrieverTrainConfig {
    double temperature = 0.05;
    double learning_rate = 0.05;
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    bool include_in_batch_negatives = false;
    /// Output dimension d'; 0 keeps the input dimension.
    std::size_t output_dimension = 0;
    double init_noise = 0.01;

    void validate() const;
    nlohmann::json to_json() const;
    static RetrieverTrainConfig from_json(const nlohmann::json& doc);
};

/// Base (unprojected) embeddings of one batch. positives[i] / negatives[i]
/// index into `documents` for query i.
struct ContrastiveBatch {
    std::vector<EmbeddingVector> queries;
    std::vector<EmbeddingVector> documents;
    std::vector<std::vector<std::size_t>> positives;
    std::vector<std::vector<std::size_t>> negatives;

    /// Every query needs at least one positive and one negative.
    void validate() const;
};

enum class Direction { query_to_document, document_to_query };

EmbeddingVector encode(const ProjectionModel& model, const EmbeddingVector& base);

/// Mean InfoNCE term over positive pairs; log-sum-exp stabilized.
/// document_to_query contrasts each positive document against the batch
/// queries annotated negative for it (or, with in-batch negatives, every other
/// query that is not positive for it). Pairs without any negative are
/// skipped; returns 0 when no pair qualifies.
double infonce_directional(const ContrastiveBatch& batch, const ProjectionModel& model, double temperature,
                           Direction direction, bool in_batch_negatives = false);

/// Mean of the two directional losses. A direction without any qualifying
/// pair is left out of the mean.
double symmetric_loss(const ContrastiveBatch& batch, const ProjectionModel& model, double temperature,
                      bool in_batch_negatives = false);

struct LossAndGradient {
    double loss = 0.0;
    Eigen::MatrixXd gradient;  // d' x d
};

/// symmetric_loss and its analytic gradient with respect to P.
LossAndGradient symmetric_loss_gradient(const ContrastiveBatch& batch, const ProjectionModel& model,
                                        double temperature, bool in_batch_negatives = false);

/// One query with the chunk ids annotated positive and negative for it.
struct QueryGroup {
    std::string query;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;
};

struct RetrieverTrainResult {
    ProjectionModel model;
    /// Mean batch loss per epoch.
    std::vector<double> loss_trace;
};

/// Seeded mini-batch SGD on symmetric_loss. P starts at identity plus
/// N(0, init_noise^2) noise. Groups lacking a positive or a negative are
/// skipped. `chunk_text` maps chunk ids to text.
RetrieverTrainResult train_retriever(std::span<const QueryGroup> groups,
                                     const std::unordered_map<std::string, std::string>& chunk_text,
                                     const Embedder& embedder, const RetrieverTrainConfig& cfg);

/// Initial model train_retriever starts from.
ProjectionModel initial_projection(std::size_t input_dimension, const std::string& fingerprint,
                                   const RetrieverTrainConfig& cfg);

/// Mean s(q, d+) minus mean s(q, d-) over all annotated pairs.
double similarity_margin(const ProjectionModel& model, std::span<const QueryGroup> groups,
                         const std::unordered_map<std::string, std::string>& chunk_text, const Embedder& embedder);

void save_retriever(const ProjectionModel& model, const std::filesystem::path& path);
ProjectionModel load_retriever(const std::filesystem::path& path, const std::string& expected_fingerprint = {});

}  // namespace fedrag
