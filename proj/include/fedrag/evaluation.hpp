#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedrag/datagen.hpp"
#include "fedrag/embedding.hpp"
#include "fedrag/federated.hpp"
#include "fedrag/gating.hpp"
#include "fedrag/retriever.hpp"
#include "fedrag/router.hpp"

namespace fedrag {

struct Outcome {
    SearchResult result;
    std::vector<std::string> gold;
};

/// Fraction of outcomes whose rank-1 id is in the gold set. A result with no
/// ranked documents counts as a miss.
double acc_at_top1(std::span<const Outcome> outcomes);

/// Sentence split at '.', '!' or '?' followed by whitespace or the end.
/// Statements without any letter or digit are dropped.
std::vector<std::string> split_statements(std::string_view text);

/// Lowercased, punctuation removed, whitespace collapsed to single spaces.
std::string normalize_statement(std::string_view text);

enum class JudgeKind { relevancy, faithfulness };

class Judge {
public:
    virtual ~Judge() = default;
    /// Rating in [1, 10].
    virtual double rate_relevancy(std::string_view query, std::string_view response) const = 0;
    virtual bool supported(std::string_view statement, std::span<const std::string> contexts) const = 0;
};

/// Deterministic lexical judge.
class MockJudge final : public Judge {
public:
    /// 1 + 9 * Jaccard(query words, response words).
    double rate_relevancy(std::string_view query, std::string_view response) const override;
    /// Normalized statement is a substring of some normalized context.
    bool supported(std::string_view statement, std::span<const std::string> contexts) const override;
};

/// `POST /judge` {"kind", "query", "response", "contexts"} -> {"score"}.
/// Faithfulness is asked one statement at a time; score >= 0.5 means supported.
class RemoteJudge final : public Judge {
public:
    explicit RemoteJudge(std::string base_url, int timeout_ms = 30000);
    double rate_relevancy(std::string_view query, std::string_view response) const override;
    bool supported(std::string_view statement, std::span<const std::string> contexts) const override;

private:
    double score(JudgeKind kind, std::string_view query, std::string_view response,
                 std::span<const std::string> contexts) const;

    std::string base_url_;
    int timeout_ms_;
};

/// supported statements / total statements.
double faithfulness(std::string_view response, std::span<const std::string> contexts, const Judge& judge);

/// Judge rating, checked to lie in [1, 10].
double relevancy(std::string_view query, std::string_view response, const Judge& judge);

/// Stand-in responder: the first `sentences` statements of the top context.
std::string extractive_response(std::span<const PromptContext> contexts, std::size_t sentences = 2);

enum class Method { mkpqa, uis, rfs, lfs };

std::string method_name(Method m);
Method parse_method(std::string_view name);

struct BenchmarkConfig {
    SyntheticSpec spec;
    /// When both are set the benchmark loads them instead of generating data.
    std::optional<std::filesystem::path> corpus_dir;
    std::optional<std::filesystem::path> dataset_path;

    std::vector<Method> methods{Method::mkpqa, Method::uis, Method::rfs};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    SearchOptions search;
    EmbedderConfig embedder;
    RouterTrainConfig router;
    RetrieverTrainConfig retriever;
    GatingConfig gating;
    double holdout_fraction = 0.2;

    /// Allows the lexical selector and mock judge in place of remote backends.
    bool mock = false;
    std::string selector_url;
    std::string judge_url;
    /// Adds relevancy and faithfulness of an extractive response.
    bool quality = false;

    void validate() const;
    nlohmann::json to_json() const;
};

struct MethodMetrics {
    double acc_uni = 0.0;
    double acc_cross = 0.0;
    double acc_all = 0.0;
    double mean_active_domains = 0.0;
    double mean_docs_scored = 0.0;
    std::optional<double> relevancy;
    std::optional<double> faithfulness;
    std::size_t uni_queries = 0;
    std::size_t cross_queries = 0;

    nlohmann::json to_json() const;
};

struct SeedReport {
    std::uint64_t seed = 0;
    std::size_t train_queries = 0;
    std::size_t test_queries = 0;
    double router_final_loss = 0.0;
    double retriever_final_loss = 0.0;
    std::map<std::string, MethodMetrics> methods;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Sample standard deviation; 0 for a single value.
MeanStd mean_std(std::span<const double> values);

struct EvalReport {
    nlohmann::json config;
    std::vector<SeedReport> seeds;
    /// method -> metric -> mean/std across seeds.
    std::map<std::string, std::map<std::string, MeanStd>> aggregate;

    nlohmann::json to_json() const;
    /// method,metric,mean,std rows.
    std::string to_csv() const;
};

/// Wall-clock data is kept apart from EvalReport so reports stay
/// byte-identical across runs.
struct LatencySummary {
    std::size_t samples = 0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double max_ms = 0.0;

    nlohmann::json to_json() const;
};

LatencySummary summarize_latency(std::vector<double> samples_ms);

struct BenchmarkRun {
    EvalReport report;
    std::map<std::string, LatencySummary> timing;
};

/// Seeded 80/20 split of query groups; returns (train, test).
std::pair<std::vector<QueryRecord>, std::vector<QueryRecord>> split_queries(std::span<const QueryRecord> queries,
                                                                            double holdout_fraction,
                                                                            std::uint64_t seed);

BenchmarkRun run_benchmark(const BenchmarkConfig& cfg);

struct LatencyConfig {
    std::size_t domains = 3;
    std::size_t chunks_per_domain = 10000;
    std::size_t dimension = 256;
    std::size_t queries = 200;
    std::size_t k = 5;
    std::uint64_t seed = 0;
};

struct LatencyReport {
    LatencyConfig config;
    LatencySummary summary;
    double mean_active_domains = 0.0;

    nlohmann::json to_json() const;
};

/// Times federated_search over a flat index of random unit vectors. The router
/// is all zeros, so every query sees maximal entropy and every domain is
/// searched.
LatencyReport run_latency_benchmark(const LatencyConfig& cfg);

}  // namespace fedrag
