#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "fedrag/corpus.hpp"
#include "fedrag/embedding.hpp"
#include "fedrag/evaluation.hpp"
#include "fedrag/federated.hpp"
#include "fedrag/gating.hpp"
#include "fedrag/retriever.hpp"
#include "fedrag/router.hpp"

namespace fedrag {

/// One structured document of paths and settings. Command-line flags are
/// applied on top of it.
struct AppConfig {
    std::filesystem::path corpus_dir;
    std::filesystem::path chunks_path;
    std::filesystem::path models_dir = "models";
    std::filesystem::path index_dir = "index";
    std::filesystem::path dataset_path;

    EmbedderConfig embedder;
    GatingConfig gating;
    RouterTrainConfig router;
    RetrieverTrainConfig retriever;
    std::size_t k = 5;
    std::size_t k_domain = 0;
    std::string selector_url;
    std::string host = "127.0.0.1";
    int port = 8080;

    void validate() const;
    nlohmann::json to_json() const;
    /// Relative paths in the document are resolved against `base_dir`.
    static AppConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
    static AppConfig load(const std::filesystem::path& path);
};

/// Model directory layout: embedder.json, router.json, retriever.json.
struct ModelPaths {
    std::filesystem::path embedder;
    std::filesystem::path router;
    std::filesystem::path retriever;

    static ModelPaths in(const std::filesystem::path& dir);
};

void save_embedder_config(const EmbedderConfig& cfg, const std::filesystem::path& path);
EmbedderConfig load_embedder_config(const std::filesystem::path& path);

/// Reads cfg.chunks_path when set, otherwise chunks the pages in cfg.corpus_dir.
Corpus load_configured_corpus(const AppConfig& cfg);

enum class TrainTarget { router, retriever, all };

TrainTarget parse_train_target(std::string_view name);

struct TrainSummary {
    std::vector<double> router_loss;
    std::vector<std::string> router_warnings;
    std::vector<double> retriever_loss;
    std::optional<double> margin_before;
    std::optional<double> margin_after;

    nlohmann::json to_json() const;
};

/// Trains from cfg.dataset_path and writes the embedder config and the
/// requested models to cfg.models_dir.
TrainSummary train_models(const AppConfig& cfg, TrainTarget target, std::uint64_t seed);

/// Encodes the configured corpus with the saved models and writes cfg.index_dir.
FederatedIndex build_configured_index(const AppConfig& cfg);

struct SearchRequest {
    std::string query;
    Method mode = Method::mkpqa;
    std::size_t k = 5;
    bool deterministic = false;
    /// Seeds the gate draw. When absent the service derives one from its base
    /// seed and a request counter.
    std::optional<std::uint64_t> seed;

    static SearchRequest from_json(const nlohmann::json& doc, std::size_t default_k);
};

/// Everything needed to answer queries. Shared by the CLI and the HTTP
/// service, and safe for concurrent use.
class SearchService {
public:
    SearchService(FederatedIndex index, QueryEncoder encoder, RouterModel router, GatingConfig gating,
                  std::unique_ptr<ResourceSelector> selector, std::uint64_t base_seed, std::size_t k_domain = 0);

    /// Loads models from cfg.models_dir and the index from cfg.index_dir and
    /// checks that they share one vector space. The keyword selector backs
    /// lfs when `mock` is set and no selector URL is configured.
    static std::unique_ptr<SearchService> open(const AppConfig& cfg, bool mock, std::uint64_t base_seed);

    SearchResult search(const SearchRequest& req) const;

    /// {"probs", "tau", "gate_probs", "active"}.
    nlohmann::json route(std::string_view query, std::optional<std::uint64_t> seed, bool deterministic) const;

    /// {"query", "mode", "results", "probs", "gate", "timing_ms"}.
    nlohmann::json result_json(const SearchResult& result) const;

    const FederatedIndex& index() const { return index_; }
    const QueryEncoder& encoder() const { return encoder_; }
    const RouterModel& router() const { return router_; }
    const GatingConfig& gating() const { return gating_; }

private:
    std::uint64_t request_seed(std::optional<std::uint64_t> seed) const;

    FederatedIndex index_;
    QueryEncoder encoder_;
    RouterModel router_;
    GatingConfig gating_;
    std::unique_ptr<ResourceSelector> selector_;
    std::uint64_t base_seed_;
    std::size_t k_domain_;
    mutable std::atomic<std::uint64_t> counter_{0};
};

/// Human-readable multi-line rendering used by `fedrag search`.
std::string format_result(const SearchResult& result, const FederatedIndex& index);

/// {"error": "usage"|"data"|"remote"|"internal", "message"} as one line.
std::string error_line(const std::exception& e);

}  // namespace fedrag
