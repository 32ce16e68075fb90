#include "fedrag/embedding.hpp"

#include <cctype>
#include <cmath>
#include <future>

#include "fedrag/corpus.hpp"
#include "fedrag/error.hpp"
#include "fedrag/random.hpp"
#include "fedrag/remote.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool blank(std::string_view s) {
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

const char* backend_name(EmbedderBackend b) { return b == EmbedderBackend::hashed ? "hashed" : "remote"; }

}  // namespace

void EmbedderConfig::validate() const {
    if (dimension < 8) throw UsageError("embedding dimension must be at least 8");
    if (backend == EmbedderBackend::remote) {
        if (remote_url.empty()) throw UsageError("remote embedder needs a URL");
        if (max_in_flight == 0 || remote_batch_size == 0) throw UsageError("remote embedder limits must be positive");
    }
}

std::string EmbedderConfig::fingerprint() const {
    std::string fp = std::string(backend_name(backend)) + ":d=" + std::to_string(dimension) +
                     ":norm=" + (normalize ? "1" : "0");
    if (backend == EmbedderBackend::hashed) {
        fp += ":seed=" + std::to_string(seed);
    } else {
        fp += ":url=" + remote_url;
    }
    return fp;
}

json EmbedderConfig::to_json() const {
    return {{"backend", backend_name(backend)},   {"dimension", dimension},
            {"normalize", normalize},             {"seed", seed},
            {"remote_url", remote_url},           {"timeout_ms", timeout_ms},
            {"max_in_flight", max_in_flight},     {"remote_batch_size", remote_batch_size}};
}

EmbedderConfig EmbedderConfig::from_json(const json& doc) {
    EmbedderConfig cfg;
    const auto backend = doc.value("backend", std::string("hashed"));
    if (backend == "hashed") {
        cfg.backend = EmbedderBackend::hashed;
    } else if (backend == "remote") {
        cfg.backend = EmbedderBackend::remote;
    } else {
        throw UsageError("unknown embedder backend '" + backend + "'");
    }
    cfg.dimension = doc.value("dimension", cfg.dimension);
    cfg.normalize = doc.value("normalize", cfg.normalize);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.remote_url = doc.value("remote_url", cfg.remote_url);
    cfg.timeout_ms = doc.value("timeout_ms", cfg.timeout_ms);
    cfg.max_in_flight = doc.value("max_in_flight", cfg.max_in_flight);
    cfg.remote_batch_size = doc.value("remote_batch_size", cfg.remote_batch_size);
    cfg.validate();
    return cfg;
}

std::vector<EmbeddingVector> Embedder::embed_batch(std::span<const std::string> texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        try {
            out.push_back(embed(texts[i]));
        } catch (const Error& e) {
            throw DataError("text " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

std::string normalize_word(std::string_view token) {
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    std::size_t b = 0, e = token.size();
    while (b < e && !alnum(token[b])) ++b;
    while (e > b && !alnum(token[e - 1])) --e;
    if (b == e) {
        b = 0;
        e = token.size();
    }
    std::string out(token.substr(b, e - b));
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// ---------------------------------------------------------------------------

HashedEmbedder::HashedEmbedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void HashedEmbedder::add_feature(EmbeddingVector& v, std::string_view tag, std::string_view gram,
                                 double weight) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= (cfg_.seed >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    h = fnv1a(fnv1a(h, tag), gram);
    const auto bucket = Rng::splitmix64(h) % cfg_.dimension;
    const double sign = (Rng::splitmix64(h ^ 0x5bd1e9955bd1e995ULL) >> 63) ? -1.0 : 1.0;
    v[static_cast<Eigen::Index>(bucket)] += sign * weight;
}

EmbeddingVector HashedEmbedder::embed(std::string_view text) const {
    if (blank(text)) throw DataError("cannot embed empty text");
    EmbeddingVector v = EmbeddingVector::Zero(static_cast<Eigen::Index>(cfg_.dimension));
    for (auto token : split_tokens(text)) {
        const auto word = normalize_word(token);
        add_feature(v, "w", word, 1.0);

        const std::string bounded = "<" + word + ">";
        std::size_t grams = 0;
        for (std::size_t n = 3; n <= 5; ++n) {
            if (bounded.size() >= n) grams += bounded.size() - n + 1;
        }
        if (grams == 0) continue;
        // Char-gram mass per word matches the unigram's L2 weight.
        const double w = 1.0 / std::sqrt(static_cast<double>(grams));
        for (std::size_t n = 3; n <= 5; ++n) {
            for (std::size_t i = 0; i + n <= bounded.size(); ++i) {
                add_feature(v, "c", std::string_view(bounded).substr(i, n), w);
            }
        }
    }
    if (cfg_.normalize) normalize_l2(v);
    return v;
}

// ---------------------------------------------------------------------------

RemoteEmbedder::RemoteEmbedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.max_in_flight > 1024) throw UsageError("max_in_flight is capped at 1024");
    slots_ = std::make_unique<std::counting_semaphore<1024>>(static_cast<std::ptrdiff_t>(cfg_.max_in_flight));
}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
    const std::string one(text);
    return embed_batch(std::span<const std::string>(&one, 1)).front();
}

std::vector<EmbeddingVector> RemoteEmbedder::request(std::span<const std::string> texts) const {
    slots_->acquire();
    json reply;
    try {
        reply = remote::post_json(cfg_.remote_url, "/embed", json{{"texts", texts}}, cfg_.timeout_ms);
    } catch (...) {
        slots_->release();
        throw;
    }
    slots_->release();
    if (!reply.contains("vectors") || !reply["vectors"].is_array()) {
        throw RemoteError("/embed reply has no 'vectors' array", 200);
    }
    const auto& vectors = reply["vectors"];
    if (vectors.size() != texts.size()) {
        throw RemoteError("/embed returned " + std::to_string(vectors.size()) + " vectors for " +
                              std::to_string(texts.size()) + " texts",
                          200);
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& row : vectors) {
        if (!row.is_array() || row.size() != cfg_.dimension) {
            throw RemoteError("/embed vector dimension does not match configured " + std::to_string(cfg_.dimension),
                              200);
        }
        EmbeddingVector v(static_cast<Eigen::Index>(cfg_.dimension));
        for (std::size_t i = 0; i < cfg_.dimension; ++i) {
            const double x = row[i].get<double>();
            if (!std::isfinite(x)) throw RemoteError("/embed returned a non-finite value", 200);
            v[static_cast<Eigen::Index>(i)] = x;
        }
        if (cfg_.normalize) normalize_l2(v);
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (blank(texts[i])) throw DataError("text " + std::to_string(i) + ": cannot embed empty text");
    }
    std::vector<EmbeddingVector> out(texts.size());
    const std::size_t batch = cfg_.remote_batch_size;
    const std::size_t batches = (texts.size() + batch - 1) / batch;

    // Waves of at most max_in_flight concurrent requests.
    for (std::size_t first = 0; first < batches; first += cfg_.max_in_flight) {
        const std::size_t last = std::min(batches, first + cfg_.max_in_flight);
        std::vector<std::future<std::vector<EmbeddingVector>>> wave;
        for (std::size_t b = first; b < last; ++b) {
            const auto begin = b * batch;
            const auto len = std::min(batch, texts.size() - begin);
            wave.push_back(std::async(std::launch::async, [this, part = texts.subspan(begin, len)] {
                return request(part);
            }));
        }
        for (std::size_t b = first; b < last; ++b) {
            auto vectors = wave[b - first].get();
            std::move(vectors.begin(), vectors.end(), out.begin() + static_cast<std::ptrdiff_t>(b * batch));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const Embedder> make_embedder(const EmbedderConfig& cfg) {
    if (cfg.backend == EmbedderBackend::remote) return std::make_shared<RemoteEmbedder>(cfg);
    return std::make_shared<HashedEmbedder>(cfg);
}

double similarity(const EmbeddingVector& q, const EmbeddingVector& d) {
    if (q.size() != d.size()) {
        throw DataError("similarity: dimension mismatch (" + std::to_string(q.size()) + " vs " +
                        std::to_string(d.size()) + ")");
    }
    return q.dot(d);
}

void normalize_l2(EmbeddingVector& v) {
    const double n = v.norm();
    if (n > 0.0) v /= n;
}

}  // namespace fedrag
