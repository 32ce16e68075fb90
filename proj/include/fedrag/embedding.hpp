#pragma once

#include <cstdint>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace fedrag {

using EmbeddingVector = Eigen::VectorXd;

enum class EmbedderBackend { hashed, remote };

struct EmbedderConfig {
    EmbedderBackend backend = EmbedderBackend::hashed;
    std::size_t dimension = 256;
    bool normalize = true;
    /// Salt for the feature hash.
    std::uint64_t seed = 0;
    /// Base URL of the embedding service, e.g. "http://127.0.0.1:9000".
    std::string remote_url;
    int timeout_ms = 10000;
    std::size_t max_in_flight = 8;
    std::size_t remote_batch_size = 64;

    void validate() const;

    /// Identifies the vector space: models and indexes built with one
    /// fingerprint refuse to mix with another.
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static EmbedderConfig from_json(const nlohmann::json& doc);
};

class Embedder {
public:
    virtual ~Embedder() = default;

    virtual const EmbedderConfig& config() const = 0;
    virtual EmbeddingVector embed(std::string_view text) const = 0;

    /// Element-wise embed, order preserved. Errors name the failing position.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const;

    std::size_t dimension() const { return config().dimension; }
    std::string fingerprint() const { return config().fingerprint(); }
};

/// Signed feature hashing of lowercased word unigrams and per-word character
/// 3..5-grams (with '<' '>' word boundaries).
class HashedEmbedder final : public Embedder {
public:
    explicit HashedEmbedder(EmbedderConfig cfg);

    const EmbedderConfig& config() const override { return cfg_; }
    EmbeddingVector embed(std::string_view text) const override;

private:
    void add_feature(EmbeddingVector& v, std::string_view tag, std::string_view gram, double weight) const;

    EmbedderConfig cfg_;
};

/// Client for `POST /embed` {"texts": [...]} -> {"vectors": [[...], ...]}.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(EmbedderConfig cfg);

    const EmbedderConfig& config() const override { return cfg_; }
    EmbeddingVector embed(std::string_view text) const override;
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override;

private:
    std::vector<EmbeddingVector> request(std::span<const std::string> texts) const;

    EmbedderConfig cfg_;
    // Shared by every caller of this embedder, not just one batch.
    std::unique_ptr<std::counting_semaphore<1024>> slots_;
};

std::shared_ptr<const Embedder> make_embedder(const EmbedderConfig& cfg);

/// Dot product s(q, d).
double similarity(const EmbeddingVector& q, const EmbeddingVector& d);

/// In-place L2 normalization; zero vectors are left unchanged.
void normalize_l2(EmbeddingVector& v);

/// Lowercased word with leading and trailing punctuation removed. Falls back
/// to the lowercased raw token when nothing alphanumeric remains.
std::string normalize_word(std::string_view token);

}  // namespace fedrag
