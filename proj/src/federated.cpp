#include "fedrag/federated.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "fedrag/remote.hpp"

namespace fedrag {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'K', 'P', 'I'};
constexpr std::uint32_t kVectorsVersion = 1;
constexpr int kManifestVersion = 1;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string directory_name(const Domain& d) {
    std::string out;
    for (char c : d.name) {
        const bool safe = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
        out.push_back(safe ? c : '_');
    }
    return std::to_string(d.id) + "-" + out;
}

bool hit_before(const DomainIndex& idx, const DomainHit& a, const DomainHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return idx.chunk(a.row).id < idx.chunk(b.row).id;
}

/// (U desc, domain asc, id asc)
bool ranked_before(const RankedDoc& a, const RankedDoc& b) {
    if (a.u != b.u) return a.u > b.u;
    if (a.domain != b.domain) return a.domain < b.domain;
    return a.id < b.id;
}

std::vector<RankedDoc> to_ranked(const DomainIndex& idx, const std::vector<DomainHit>& hits, double p) {
    std::vector<RankedDoc> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back({idx.chunk(h.row).id, idx.domain(), h.score, p, p * h.score, 0});
    return out;
}

/// Merges candidate lists, keeps the global top-k and assigns dense ranks.
void finish(SearchResult& result, std::size_t k) {
    std::vector<RankedDoc> pool;
    for (const auto& c : result.candidates) pool.insert(pool.end(), c.docs.begin(), c.docs.end());
    const auto keep = std::min(k, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), ranked_before);
    pool.resize(keep);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].rank = i + 1;
    result.shortfall = k - keep;
    result.ranked = std::move(pool);
}

/// Searches `domains` and ranks by raw similarity (p fixed at 1).
SearchResult raw_search(const FederatedIndex& index, const EmbeddingVector& qvec, std::span<const DomainId> domains,
                        const SearchOptions& options) {
    SearchResult result;
    for (auto j : domains) {
        const auto& idx = index.domain(j);
        result.candidates.push_back({j, to_ranked(idx, idx.search(qvec, options.per_domain()), 1.0)});
        result.docs_scored += idx.size();
    }
    finish(result, options.k);
    return result;
}

std::vector<DomainDescriptor> descriptors(const FederatedIndex& index) {
    std::vector<DomainDescriptor> out;
    for (const auto& d : index.domains().all()) out.push_back({d.name, d.description});
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

DomainIndex::DomainIndex(DomainId domain, std::string name, std::vector<IndexedChunk> chunks, const RowMatrix& vectors)
    : domain_(domain), name_(std::move(name)), chunks_(std::move(chunks)), vectors_(vectors.cast<float>().cast<double>()) {
    if (static_cast<std::size_t>(vectors_.rows()) != chunks_.size()) {
        throw DataError("domain index '" + name_ + "': vector rows do not match chunk count");
    }
    if (!vectors_.allFinite()) throw DataError("domain index '" + name_ + "': non-finite vector entry");
    std::set<std::string_view> ids;
    for (const auto& c : chunks_) {
        if (!ids.insert(c.id).second) throw DataError("domain index '" + name_ + "': duplicate chunk id " + c.id);
    }
}

std::vector<DomainHit> DomainIndex::search(const EmbeddingVector& query, std::size_t k) const {
    if (k == 0) throw UsageError("search: k must be at least 1");
    if (static_cast<std::size_t>(query.size()) != dimension()) {
        throw DataError("search: query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                        std::to_string(dimension()));
    }
    const Eigen::VectorXd scores = vectors_ * query;
    std::vector<DomainHit> hits(chunks_.size());
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = {i, scores[static_cast<Eigen::Index>(i)]};
    const auto keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                      [this](const DomainHit& a, const DomainHit& b) { return hit_before(*this, a, b); });
    hits.resize(keep);
    return hits;
}

FederatedIndex::FederatedIndex(DomainRegistry domains, std::vector<DomainIndex> indexes,
                               std::string embedder_fingerprint, std::string projection_fingerprint)
    : domains_(std::move(domains)),
      indexes_(std::move(indexes)),
      embedder_fingerprint_(std::move(embedder_fingerprint)),
      projection_fingerprint_(std::move(projection_fingerprint)) {
    if (indexes_.size() != domains_.size()) throw DataError("federated index: one domain index per domain required");
    for (std::size_t j = 0; j < indexes_.size(); ++j) {
        if (indexes_[j].domain() != j) throw DataError("federated index: domain indexes out of order");
        if (indexes_[j].size() == 0) throw DataError("federated index: domain '" + domains_.at(j).name + "' is empty");
        if (indexes_[j].dimension() != indexes_.front().dimension()) {
            throw DataError("federated index: domains disagree on vector dimension");
        }
    }
}

std::size_t FederatedIndex::total_chunks() const {
    std::size_t n = 0;
    for (const auto& i : indexes_) n += i.size();
    return n;
}

const IndexedChunk* FederatedIndex::find(std::string_view id) const {
    for (const auto& idx : indexes_) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx.chunk(r).id == id) return &idx.chunk(r);
        }
    }
    return nullptr;
}

void FederatedIndex::save(const fs::path& dir) const {
    const auto staged = io::staging_path(dir);
    fs::remove_all(staged);
    fs::create_directories(staged);

    json domains = json::array();
    for (const auto& idx : indexes_) {
        const auto& dom = domains_.at(idx.domain());
        const auto sub = directory_name(dom);
        domains.push_back({{"id", dom.id}, {"name", dom.name}, {"description", dom.description}, {"dir", sub}});
        fs::create_directories(staged / sub);

        json chunks = json::array();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto& c = idx.chunk(r);
            chunks.push_back({{"id", c.id}, {"url", c.url}, {"title", c.title}, {"text", c.text}});
        }
        io::write_json_atomic(staged / sub / "manifest.json",
                              {{"version", kManifestVersion},
                               {"domain", dom.id},
                               {"name", dom.name},
                               {"count", idx.size()},
                               {"d", idx.dimension()},
                               {"chunks", chunks}});

        std::string bin(kMagic, 4);
        put_u32(bin, kVectorsVersion);
        put_u32(bin, static_cast<std::uint32_t>(idx.size()));
        put_u32(bin, static_cast<std::uint32_t>(idx.dimension()));
        const auto& v = idx.vectors();
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                const float f = static_cast<float>(v(i, j));
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32(bin, bits);
            }
        }
        io::write_file_atomic(staged / sub / "vectors.bin", bin);
    }
    io::write_json_atomic(staged / "manifest.json", {{"version", kManifestVersion},
                                                     {"embedder_fingerprint", embedder_fingerprint_},
                                                     {"projection_fingerprint", projection_fingerprint_},
                                                     {"domains", domains}});
    io::replace_directory(staged, dir);
}

FederatedIndex FederatedIndex::load(const fs::path& dir) {
    const auto manifest = io::read_json(dir / "manifest.json");
    try {
        if (manifest.at("version").get<int>() != kManifestVersion) throw DataError("index: unsupported version");
        std::vector<Domain> domains;
        for (const auto& d : manifest.at("domains")) {
            domains.push_back({d.at("id").get<DomainId>(), d.at("name").get<std::string>(), d.value("description", "")});
        }
        DomainRegistry registry(domains);

        std::vector<DomainIndex> indexes;
        for (const auto& d : manifest.at("domains")) {
            const auto sub = dir / d.at("dir").get<std::string>();
            const auto m = io::read_json(sub / "manifest.json");
            std::vector<IndexedChunk> chunks;
            for (const auto& c : m.at("chunks")) {
                chunks.push_back({c.at("id").get<std::string>(), c.value("url", ""), c.value("title", ""),
                                  c.value("text", "")});
            }
            const auto bin = io::read_file(sub / "vectors.bin");
            const auto* p = reinterpret_cast<const unsigned char*>(bin.data());
            if (bin.size() < 16 || std::memcmp(bin.data(), kMagic, 4) != 0) {
                throw DataError((sub / "vectors.bin").string() + ": bad magic");
            }
            if (get_u32(p + 4) != kVectorsVersion) throw DataError((sub / "vectors.bin").string() + ": bad version");
            const std::size_t n = get_u32(p + 8), dim = get_u32(p + 12);
            if (n != chunks.size()) throw DataError((sub / "vectors.bin").string() + ": row count disagrees with manifest");
            if (bin.size() != 16 + n * dim * 4) throw DataError((sub / "vectors.bin").string() + ": truncated");
            RowMatrix vectors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dim; ++j) {
                    const std::uint32_t bits = get_u32(p + 16 + (i * dim + j) * 4);
                    float f;
                    std::memcpy(&f, &bits, 4);
                    vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
                }
            }
            indexes.emplace_back(d.at("id").get<DomainId>(), d.at("name").get<std::string>(), std::move(chunks),
                                 vectors);
        }
        return FederatedIndex(std::move(registry), std::move(indexes),
                              manifest.at("embedder_fingerprint").get<std::string>(),
                              manifest.at("projection_fingerprint").get<std::string>());
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed index manifest: " + e.what());
    }
}

// ---------------------------------------------------------------------------

QueryEncoder::QueryEncoder(std::shared_ptr<const Embedder> embedder, ProjectionModel projection)
    : embedder_(std::move(embedder)), projection_(std::move(projection)) {
    if (!embedder_) throw UsageError("query encoder needs an embedder");
    if (projection_.input_dimension() != embedder_->dimension()) {
        throw DataError("retriever input dimension does not match the embedder");
    }
    if (projection_.embedder_fingerprint != embedder_->fingerprint()) {
        throw DataError("retriever was trained for embedder '" + projection_.embedder_fingerprint + "', not '" +
                        embedder_->fingerprint() + "'");
    }
}

QueryEncoder::Encoded QueryEncoder::encode(std::string_view text) const {
    auto base = embedder_->embed(text);
    auto projected = fedrag::encode(projection_, base);
    return {std::move(base), std::move(projected)};
}

void QueryEncoder::check_compatible(const FederatedIndex& index) const {
    if (index.embedder_fingerprint() != embedder_->fingerprint()) {
        throw DataError("index was built with embedder '" + index.embedder_fingerprint() + "', not '" +
                        embedder_->fingerprint() + "'");
    }
    if (index.projection_fingerprint() != projection_.fingerprint()) {
        throw DataError("index was built with a different retriever model");
    }
}

FederatedIndex build_index(const Corpus& corpus, const QueryEncoder& encoder) {
    std::vector<DomainIndex> indexes;
    for (const auto& dom : corpus.domains.all()) {
        const auto& chunks = corpus.by_domain.at(dom.id);
        if (chunks.empty()) throw DataError("build_index: domain '" + dom.name + "' has no chunks");
        std::vector<std::string> texts;
        std::vector<IndexedChunk> meta;
        for (const auto& c : chunks) {
            texts.push_back(c.text);
            meta.push_back({c.id, c.url, c.title, c.text});
        }
        const auto base = encoder.embedder().embed_batch(texts);
        RowMatrix vectors(static_cast<Eigen::Index>(chunks.size()),
                          static_cast<Eigen::Index>(encoder.projection().output_dimension()));
        for (std::size_t i = 0; i < base.size(); ++i) {
            vectors.row(static_cast<Eigen::Index>(i)) = encode(encoder.projection(), base[i]).transpose();
        }
        indexes.emplace_back(dom.id, dom.name, std::move(meta), vectors);
    }
    return FederatedIndex(corpus.domains, std::move(indexes), encoder.embedder().fingerprint(),
                          encoder.projection().fingerprint());
}

// ---------------------------------------------------------------------------

json SearchTiming::to_json() const {
    return {{"embed", embed_ms}, {"route", route_ms}, {"gate", gate_ms},
            {"search", search_ms}, {"merge", merge_ms}, {"total", total_ms}};
}

std::vector<std::string> SearchResult::ranked_ids() const {
    std::vector<std::string> ids;
    ids.reserve(ranked.size());
    for (const auto& r : ranked) ids.push_back(r.id);
    return ids;
}

void SearchOptions::validate() const {
    if (k == 0) throw UsageError("k must be at least 1");
}

SearchResult rank_active(const FederatedIndex& index, const EmbeddingVector& query_vector, const DomainProbs& probs,
                         std::span<const DomainId> active, const SearchOptions& options) {
    options.validate();
    if (probs.size() != index.domain_count()) throw DataError("probability vector length does not match domain count");
    SearchResult result;
    result.probs = probs;
    auto t = Clock::now();
    for (auto j : active) {
        if (j >= index.domain_count()) throw DataError("active domain id out of range");
        const auto& idx = index.domain(j);
        result.candidates.push_back({j, to_ranked(idx, idx.search(query_vector, options.per_domain()), probs[j])});
        result.docs_scored += idx.size();
    }
    result.timing.search_ms = elapsed_ms(t);
    t = Clock::now();
    finish(result, options.k);
    result.timing.merge_ms = elapsed_ms(t);
    return result;
}

SearchResult federated_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                              const RouterModel& router, const GatingConfig& gating, const SearchOptions& options,
                              Rng& rng) {
    options.validate();
    const auto start = Clock::now();
    auto t = start;
    const auto encoded = encoder.encode(query);
    const double embed_ms = elapsed_ms(t);

    t = Clock::now();
    const auto probs = predict(router, encoded.base);
    const double route_ms = elapsed_ms(t);

    t = Clock::now();
    auto decision = sample_active(probs, gating, rng);
    const double gate_ms = elapsed_ms(t);

    auto result = rank_active(index, encoded.projected, probs, decision.active, options);
    result.query = std::string(query);
    result.mode = "mkpqa";
    result.gate = std::move(decision);
    result.timing.embed_ms = embed_ms;
    result.timing.route_ms = route_ms;
    result.timing.gate_ms = gate_ms;
    result.timing.total_ms = elapsed_ms(start);
    return result;
}

SearchResult uis_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const SearchOptions& options) {
    options.validate();
    const auto start = Clock::now();
    const auto encoded = encoder.encode(query);
    const double embed_ms = elapsed_ms(start);
    std::vector<DomainId> all(index.domain_count());
    std::iota(all.begin(), all.end(), DomainId{0});
    auto t = Clock::now();
    auto result = raw_search(index, encoded.projected, all, options);
    result.timing.search_ms = elapsed_ms(t);
    result.query = std::string(query);
    result.mode = "uis";
    result.timing.embed_ms = embed_ms;
    result.timing.total_ms = elapsed_ms(start);
    return result;
}

SearchResult rfs_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const RouterModel& router, const SearchOptions& options) {
    options.validate();
    const auto start = Clock::now();
    const auto encoded = encoder.encode(query);
    const double embed_ms = elapsed_ms(start);
    auto t = Clock::now();
    const auto probs = predict(router, encoded.base);
    if (probs.size() != index.domain_count()) throw DataError("router domain count does not match the index");
    const double route_ms = elapsed_ms(t);
    const DomainId chosen[] = {probs.argmax()};
    t = Clock::now();
    auto result = raw_search(index, encoded.projected, chosen, options);
    result.timing.search_ms = elapsed_ms(t);
    result.query = std::string(query);
    result.mode = "rfs";
    result.probs = probs;
    result.timing.embed_ms = embed_ms;
    result.timing.route_ms = route_ms;
    result.timing.total_ms = elapsed_ms(start);
    return result;
}

std::string KeywordSelector::select(std::string_view query, std::span<const DomainDescriptor> domains) const {
    if (domains.empty()) throw DataError("selector: no domains to choose from");
    std::set<std::string> words;
    for (auto tok : split_tokens(query)) words.insert(normalize_word(tok));
    std::size_t best = 0, best_hits = 0;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        std::set<std::string> described;
        const std::string text = domains[i].name + " " + domains[i].description;
        for (auto tok : split_tokens(text)) {
            described.insert(normalize_word(tok));
        }
        std::size_t hits = 0;
        for (const auto& w : words) hits += described.count(w);
        if (hits > best_hits) {
            best = i;
            best_hits = hits;
        }
    }
    return domains[best].name;
}

RemoteSelector::RemoteSelector(std::string base_url, int timeout_ms)
    : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {}

std::string RemoteSelector::select(std::string_view query, std::span<const DomainDescriptor> domains) const {
    json list = json::array();
    for (const auto& d : domains) list.push_back({{"name", d.name}, {"description", d.description}});
    const auto reply = remote::post_json(base_url_, "/select", {{"query", query}, {"domains", list}}, timeout_ms_);
    if (!reply.contains("domain") || !reply["domain"].is_string()) {
        throw RemoteError("/select reply has no 'domain' string", 200);
    }
    return reply["domain"].get<std::string>();
}

SearchResult lfs_search(const FederatedIndex& index, const QueryEncoder& encoder, std::string_view query,
                        const ResourceSelector& selector, const SearchOptions& options) {
    options.validate();
    const auto start = Clock::now();
    const auto encoded = encoder.encode(query);
    const double embed_ms = elapsed_ms(start);
    auto t = Clock::now();
    const auto name = selector.select(query, descriptors(index));
    const double route_ms = elapsed_ms(t);
    const auto id = index.domains().find(name);
    if (!id) {
        std::string valid;
        for (const auto& n : index.domains().names()) valid += (valid.empty() ? "" : ", ") + n;
        throw DataError("selector returned unknown domain '" + name + "' (valid: " + valid + ")");
    }
    const DomainId chosen[] = {*id};
    t = Clock::now();
    auto result = raw_search(index, encoded.projected, chosen, options);
    result.timing.search_ms = elapsed_ms(t);
    result.query = std::string(query);
    result.mode = "lfs";
    result.timing.embed_ms = embed_ms;
    result.timing.route_ms = route_ms;
    result.timing.total_ms = elapsed_ms(start);
    return result;
}

// ---------------------------------------------------------------------------

std::vector<PromptContext> prompt_contexts(const FederatedIndex& index, std::span<const RankedDoc> ranked) {
    std::vector<PromptContext> out;
    out.reserve(ranked.size());
    for (const auto& r : ranked) {
        const auto& idx = index.domain(r.domain);
        const IndexedChunk* hit = nullptr;
        for (std::size_t i = 0; i < idx.size() && !hit; ++i) {
            if (idx.chunk(i).id == r.id) hit = &idx.chunk(i);
        }
        if (!hit) throw DataError("ranked document " + r.id + " is not in the index");
        out.push_back({hit->id, hit->title, hit->text});
    }
    return out;
}

std::string build_prompt(std::string_view query, std::span<const PromptContext> contexts, const PromptTemplate& tmpl) {
    auto render = [&](std::size_t n) {
        std::string out = tmpl.preamble + "\n\n" + tmpl.context_heading + "\n";
        for (std::size_t i = 0; i < n; ++i) {
            const auto& c = contexts[i];
            out += "[" + std::to_string(i + 1) + "] " + c.id + " | " + c.title + "\n" + c.text + "\n\n";
        }
        if (n == 0) out += "\n";
        out += tmpl.question_prefix;
        out += query;
        out += "\n";
        return out;
    };
    std::size_t n = contexts.size();
    auto prompt = render(n);
    while (n > 0 && count_tokens(prompt) > tmpl.token_budget) prompt = render(--n);
    return prompt;
}

}  // namespace fedrag
