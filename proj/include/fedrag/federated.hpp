#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fedrag/corpus.hpp"
#include "fedrag/embedding.hpp"
#include "fedrag/gating.hpp"
#include "fedrag/random.hpp"
#include "fedrag/retriever.hpp"
#include "fedrag/router.hpp"

namespace fedrag {

struct IndexedChunk {
    std::string id;
    std::string url;
    std::string title;
    std::string text;
};

struct DomainHit {
    std::size_t row = 0;
    double score = 0.0;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat exact index over one domain's encoded chunks. Vectors are rounded
/// through float32 at construction, so a freshly built index and one loaded
/// from disk score identically.
class DomainIndex {
public:
    DomainIndex(DomainId domain, std::string name, std::vector<IndexedChunk> chunks, const RowMatrix& vectors);

    DomainId domain() const { return domain_; }
    const std::string& name() const { return name_; }
    std::size_t size() const { return chunks_.size(); }
    std::size_t dimension() const { return static_cast<std::size_t>(vectors_.cols()); }
    const IndexedChunk& chunk(std::size_t row) const { return chunks_[row]; }
    const RowMatrix& vectors() const { return vectors_; }

    /// Exact top-k by dot product; ties broken by chunk id ascending.
    std::vector<DomainHit> search(const EmbeddingVector& query, std::size_t k) const;

private:
    DomainId domain_;
    std::string name_;
    std::vector<IndexedChunk> chunks_;
    RowMatrix vectors_;
};

/// One DomainIndex per registered domain, sharing one vector space.
class FederatedIndex {
public:
    FederatedIndex(DomainRegistry domains, std::vector<DomainIndex> indexes, std::string embedder_fingerprint,
                   std::string projection_fingerprint);

    const DomainRegistry& domains() const { return domains_; }
    std::size_t domain_count() const { return indexes_.size(); }
    const DomainIndex& domain(DomainId id) const { return indexes_.at(id); }
    const std::string& embedder_fingerprint() const { return embedder_fingerprint_; }
    const std::string& projection_fingerprint() const { return projection_fingerprint_; }
    std::size_t total_chunks() const;
    const IndexedChunk* find(std::string_view id) const;

    /// Layout: manifest.json at the root, then <domain>/manifest.json and
    /// <domain>/vectors.bin ("MKPI", u32 version, u32 n, u32 d, n*d float32 LE).
    void save(const std::filesystem::path& dir) const;
    static FederatedIndex load(const std::filesystem::path& dir);

private:
    DomainRegistry domains_;
    std::vector<DomainIndex> indexes_;
    std::string embedder_fingerprint_;
    std::string projection_fingerprint_;
};

/// Base embedder plus the shared projection head.
class QueryEncoder {
public:
    QueryEncoder(std::shared_ptr<const Embedder> embedder, ProjectionModel projection);

    struct Encoded {
        EmbeddingVector base;
        EmbeddingVector projected;
    };

    Encoded encode(std::string_view text) const;
    const Embedder& embedder() const { return *embedder_; }
    const ProjectionModel& projection() const { return projection_; }

    /// Throws DataError unless `index` was built in this encoder's space.
    void check_compatible(const FederatedIndex& index) const;

private:
    std::shared_ptr<const Embedder> embedder_;
    ProjectionModel projection_;
};

FederatedIndex build_index(const Corpus& corpus, const QueryEncoder& encoder);

struct RankedDoc {
    std::string id;
    DomainId domain = 0;
    double s = 0.0;
    double p = 1.0;
    /// Exactly p * s.
    double u = 0.0;
    std::size_t rank = 0;
};

struct DomainCandidates {
    DomainId domain = 0;
    std::vector<RankedDoc> docs;
};

struct SearchTiming {
    double embed_ms = 0.0;
    double route_ms = 0.0;
    double gate_ms = 0.0;
    double search_ms = 0.0;
    double merge_ms = 0.0;
    double total_ms = 0.0;

    nlohmann::json to_json() const;
};

struct SearchResult {
    std::string query;
    std::string mode;
    std::optional<DomainProbs> probs;
    std::optional<GateDecision> gate;
    std::vector<DomainCandidates> candidates;
    std::vector<RankedDoc> ranked;
    /// k minus the number of ranked documents, when fewer exist.
    std::size_t shortfall = 0;
    std::size_t docs_scored = 0;
    SearchTiming timing;

    std::vector<std::string> ranked_ids() const;
};

struct SearchOptions {
    std::size_t k = 5;
    /// Per-domain candidate count; 0 means "same as k".
    std::size_t k_domain = 0;

    std::size_t per_domain() const { return k_domain == 0 ? k : k_domain; }
    void validate() const;
};

/// Ranks per-domain candidates of the active domains by U = p_j * s with the
/// tie rule (U desc, domain asc, id asc) and keeps the global top-k.
SearchResult rank_active(const FederatedIndex& index, const EmbeddingVector& query_vector, const DomainProbs& probs,
                         std::span<const DomainId> active, const SearchOptions& options);

/// Full method: route, gate, search active domains, unify scores.
SearchResult federated_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                              const RouterModel& router, const GatingConfig& gating, const SearchOptions& options,
                              Rng& rng);

/// Unified-index baseline: every domain, ranked by raw s.
SearchResult uis_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const SearchOptions& options);

/// Router-filtered baseline: argmax domain only (ties -> lowest id), raw s.
SearchResult rfs_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const RouterModel& router, const SearchOptions& options);

struct DomainDescriptor {
    std::string name;
    std::string description;
};

/// Picks one domain for a query (LFS baseline).
class ResourceSelector {
public:
    virtual ~ResourceSelector() = default;
    virtual std::string select(std::string_view query, std::span<const DomainDescriptor> domains) const = 0;
};

/// Picks the domain whose description shares the most distinct words with
/// the query; ties go to the earliest domain.
class KeywordSelector final : public ResourceSelector {
public:
    std::string select(std::string_view query, std::span<const DomainDescriptor> domains) const override;
};

/// `POST /select` {"query", "domains": [{"name", "description"}]} -> {"domain"}.
class RemoteSelector final : public ResourceSelector {
public:
    explicit RemoteSelector(std::string base_url, int timeout_ms = 10000);
    std::string select(std::string_view query, std::span<const DomainDescriptor> domains) const override;

private:
    std::string base_url_;
    int timeout_ms_;
};

/// Selector-filtered baseline: the selected domain only, raw s.
SearchResult lfs_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const ResourceSelector& selector, const SearchOptions& options);

struct PromptTemplate {
    std::string preamble =
        "You are a product support assistant. Answer the question using the numbered contexts below. "
        "If the contexts do not contain the answer, say so.";
    std::string context_heading = "Contexts:";
    std::string question_prefix = "Question: ";
    /// Upper bound on whitespace tokens in the whole prompt.
    std::size_t token_budget = 2048;
};

struct PromptContext {
    std::string id;
    std::string title;
    std::string text;
};

std::vector<PromptContext> prompt_contexts(const FederatedIndex& index, std::span<const RankedDoc> ranked);

/// Preamble, numbered contexts in rank order, then the question. Contexts are
/// dropped from the lowest rank up until the prompt fits the token budget.
std::string build_prompt(std::string_view query, std::span<const PromptContext> contexts,
                         const PromptTemplate& tmpl = {});

}  // namespace fedrag
