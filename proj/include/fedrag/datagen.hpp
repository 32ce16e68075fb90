#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fedrag/corpus.hpp"

namespace fedrag {

struct SyntheticSpec {
    std::size_t domains = 3;
    std::size_t vocab_size = 200;
    /// Fraction of each domain vocabulary drawn from the shared pool.
    double overlap = 0.3;
    std::size_t pages_per_domain = 20;
    std::size_t chunks_per_page = 5;
    std::size_t uni_queries_per_domain = 150;
    /// May be 0 for a uni-domain-only dataset.
    std::size_t cross_queries_per_pair = 40;
    std::size_t negatives_per_query = 4;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& doc);
};

struct QueryDocPair {
    std::string query;
    std::string chunk_id;
    std::vector<DomainId> domains;
    int label = 0;

    bool operator==(const QueryDocPair&) const = default;
};

struct SyntheticCorpus {
    std::vector<SourcePage> pages;
    Corpus corpus;
    std::vector<std::string> shared_pool;
    /// Full vocabulary per domain, shared words included.
    std::vector<std::vector<std::string>> vocabularies;
    /// Chunk id -> shared concept words of its topic; the twin chunks in other
    /// domains carry the same set.
    std::unordered_map<std::string, std::vector<std::string>> concepts;
    /// Chunk id -> the domain-specific topic words of its paragraph.
    std::unordered_map<std::string, std::vector<std::string>> topics;
    /// Page url -> theme words common to its chunks.
    std::unordered_map<std::string, std::vector<std::string>> themes;

    /// Writes domains.json plus one page file per page, loadable by load_corpus.
    void write(const std::filesystem::path& dir) const;
};

SyntheticCorpus generate_corpus(const SyntheticSpec& spec);

/// Positive pairs only. Uni-domain queries come first (domain by domain), then
/// cross-domain queries pair by pair.
std::vector<QueryDocPair> generate_queries(const SyntheticSpec& spec, const SyntheticCorpus& corpus);

/// Appends negatives_per_query label-0 pairs after each query's positives:
/// sibling chunks of the golden pages first, then chunks of same-domain pages
/// ranked by shared theme words.
std::vector<QueryDocPair> generate_negatives(const SyntheticSpec& spec, const SyntheticCorpus& corpus,
                                             std::span<const QueryDocPair> positives);

/// generate_queries followed by generate_negatives.
std::vector<QueryDocPair> generate_dataset(const SyntheticSpec& spec, const SyntheticCorpus& corpus);

nlohmann::json pair_to_json(const QueryDocPair& pair);
QueryDocPair pair_from_json(const nlohmann::json& record);
void export_dataset(std::span<const QueryDocPair> pairs, const std::filesystem::path& path);
std::vector<QueryDocPair> load_dataset(const std::filesystem::path& path);

double positive_ratio(std::span<const QueryDocPair> pairs);

/// All pairs of one query text, in first-appearance order.
struct QueryRecord {
    std::string text;
    std::vector<DomainId> domains;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;

    bool cross_domain() const { return domains.size() >= 2; }
};

std::vector<QueryRecord> group_by_query(std::span<const QueryDocPair> pairs);

}  // namespace fedrag
