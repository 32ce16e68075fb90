#include "fedrag/app.hpp"

#include <iomanip>
#include <sstream>

#include "fedrag/datagen.hpp"
#include "fedrag/error.hpp"
#include "fedrag/io.hpp"

namespace fedrag {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path resolve(const json& doc, const char* key, const fs::path& base, const fs::path& fallback) {
    if (!doc.contains(key)) return fallback;
    fs::path p = doc.at(key).get<std::string>();
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

void AppConfig::validate() const {
    if (k == 0) throw UsageError("k must be at least 1");
    if (port < 0 || port > 65535) throw UsageError("port out of range");
    embedder.validate();
    gating.validate();
    router.validate();
    retriever.validate();
}

json AppConfig::to_json() const {
    return {{"corpus_dir", corpus_dir.string()},
            {"chunks_path", chunks_path.string()},
            {"models_dir", models_dir.string()},
            {"index_dir", index_dir.string()},
            {"dataset_path", dataset_path.string()},
            {"embedder", embedder.to_json()},
            {"gating", gating.to_json()},
            {"router", router.to_json()},
            {"retriever", retriever.to_json()},
            {"k", k},
            {"k_domain", k_domain},
            {"selector_url", selector_url},
            {"host", host},
            {"port", port}};
}

AppConfig AppConfig::from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw UsageError("config: expected a JSON object");
    AppConfig c;
    try {
        c.corpus_dir = resolve(doc, "corpus_dir", base_dir, c.corpus_dir);
        c.chunks_path = resolve(doc, "chunks_path", base_dir, c.chunks_path);
        c.models_dir = resolve(doc, "models_dir", base_dir, c.models_dir);
        c.index_dir = resolve(doc, "index_dir", base_dir, c.index_dir);
        c.dataset_path = resolve(doc, "dataset_path", base_dir, c.dataset_path);
        if (doc.contains("embedder")) c.embedder = EmbedderConfig::from_json(doc["embedder"]);
        if (doc.contains("gating")) c.gating = GatingConfig::from_json(doc["gating"]);
        if (doc.contains("router")) c.router = RouterTrainConfig::from_json(doc["router"]);
        if (doc.contains("retriever")) c.retriever = RetrieverTrainConfig::from_json(doc["retriever"]);
        c.k = doc.value("k", c.k);
        c.k_domain = doc.value("k_domain", c.k_domain);
        c.selector_url = doc.value("selector_url", c.selector_url);
        c.host = doc.value("host", c.host);
        c.port = doc.value("port", c.port);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

AppConfig AppConfig::load(const fs::path& path) {
    json doc;
    try {
        doc = io::read_json(path);
    } catch (const DataError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return from_json(doc, path.parent_path());
}

ModelPaths ModelPaths::in(const fs::path& dir) {
    return {dir / "embedder.json", dir / "router.json", dir / "retriever.json"};
}

void save_embedder_config(const EmbedderConfig& cfg, const fs::path& path) {
    io::write_json_atomic(path, cfg.to_json());
}

EmbedderConfig load_embedder_config(const fs::path& path) { return EmbedderConfig::from_json(io::read_json(path)); }

Corpus load_configured_corpus(const AppConfig& cfg) {
    if (cfg.corpus_dir.empty()) throw UsageError("missing corpus directory");
    if (!cfg.chunks_path.empty()) return read_chunks(cfg.chunks_path, DomainRegistry::load(cfg.corpus_dir / "domains.json"));
    return load_corpus(cfg.corpus_dir);
}

TrainTarget parse_train_target(std::string_view name) {
    if (name == "router") return TrainTarget::router;
    if (name == "retriever") return TrainTarget::retriever;
    if (name == "all") return TrainTarget::all;
    throw UsageError("unknown training target '" + std::string(name) + "' (router, retriever, all)");
}

json TrainSummary::to_json() const {
    json doc = json::object();
    if (!router_loss.empty()) doc["router"] = {{"loss", router_loss}, {"warnings", router_warnings}};
    if (margin_before) {
        doc["retriever"] = {{"loss", retriever_loss}, {"margin_before", *margin_before}, {"margin_after", *margin_after}};
    }
    return doc;
}

TrainSummary train_models(const AppConfig& cfg, TrainTarget target, std::uint64_t seed) {
    if (cfg.dataset_path.empty()) throw UsageError("missing dataset path");
    const auto corpus = load_configured_corpus(cfg);
    const auto groups = group_by_query(load_dataset(cfg.dataset_path));
    const auto embedder = make_embedder(cfg.embedder);
    const auto paths = ModelPaths::in(cfg.models_dir);
    fs::create_directories(cfg.models_dir);
    save_embedder_config(cfg.embedder, paths.embedder);

    TrainSummary summary;
    if (target != TrainTarget::retriever) {
        std::vector<LabeledQuery> labeled;
        for (const auto& g : groups) labeled.push_back({g.text, g.domains});
        auto rcfg = cfg.router;
        rcfg.seed = seed;
        auto result = train_router(labeled, *embedder, corpus.domains.size(), rcfg);
        save_router(result.model, paths.router);
        summary.router_loss = std::move(result.loss_trace);
        summary.router_warnings = std::move(result.warnings);
    }
    if (target != TrainTarget::router) {
        std::vector<QueryGroup> qg;
        for (const auto& g : groups) qg.push_back({g.text, g.positives, g.negatives});
        auto rcfg = cfg.retriever;
        rcfg.seed = seed;
        std::unordered_map<std::string, std::string> texts;
        for (const auto& list : corpus.by_domain) {
            for (const auto& c : list) texts.emplace(c.id, c.text);
        }
        const auto init = initial_projection(embedder->dimension(), embedder->fingerprint(), rcfg);
        summary.margin_before = similarity_margin(init, qg, texts, *embedder);
        auto result = train_retriever(qg, texts, *embedder, rcfg);
        summary.margin_after = similarity_margin(result.model, qg, texts, *embedder);
        save_retriever(result.model, paths.retriever);
        summary.retriever_loss = std::move(result.loss_trace);
    }
    return summary;
}

FederatedIndex build_configured_index(const AppConfig& cfg) {
    const auto corpus = load_configured_corpus(cfg);
    const auto paths = ModelPaths::in(cfg.models_dir);
    const auto embedder = make_embedder(load_embedder_config(paths.embedder));
    const QueryEncoder encoder(embedder, load_retriever(paths.retriever, embedder->fingerprint()));
    auto built = build_index(corpus, encoder);
    built.save(cfg.index_dir);
    return built;
}

SearchRequest SearchRequest::from_json(const json& doc, std::size_t default_k) {
    if (!doc.is_object()) throw UsageError("request body must be a JSON object");
    SearchRequest r;
    try {
        if (!doc.contains("query") || !doc["query"].is_string()) throw UsageError("request needs a 'query' string");
        r.query = doc["query"].get<std::string>();
        r.mode = parse_method(doc.value("mode", std::string("mkpqa")));
        r.k = doc.value("k", default_k);
        r.deterministic = doc.value("deterministic", false);
        if (doc.contains("seed") && !doc["seed"].is_null()) r.seed = doc["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad request: ") + e.what());
    }
    if (r.k == 0) throw UsageError("k must be at least 1");
    return r;
}

SearchService::SearchService(FederatedIndex index, QueryEncoder encoder, RouterModel router, GatingConfig gating,
                             std::unique_ptr<ResourceSelector> selector, std::uint64_t base_seed, std::size_t k_domain)
    : index_(std::move(index)),
      encoder_(std::move(encoder)),
      router_(std::move(router)),
      gating_(gating),
      selector_(std::move(selector)),
      base_seed_(base_seed),
      k_domain_(k_domain) {
    gating_.validate();
    encoder_.check_compatible(index_);
    if (router_.domains() != index_.domain_count()) {
        throw DataError("router has " + std::to_string(router_.domains()) + " domains but the index has " +
                        std::to_string(index_.domain_count()));
    }
    if (router_.embedder_fingerprint != encoder_.embedder().fingerprint()) {
        throw DataError("router was trained for embedder '" + router_.embedder_fingerprint + "'");
    }
}

std::unique_ptr<SearchService> SearchService::open(const AppConfig& cfg, bool mock, std::uint64_t base_seed) {
    const auto paths = ModelPaths::in(cfg.models_dir);
    auto ecfg = load_embedder_config(paths.embedder);
    // Connection settings may differ between training and serving; the
    // fingerprint only covers the vector space.
    if (ecfg.backend == EmbedderBackend::remote && !cfg.embedder.remote_url.empty()) {
        ecfg.remote_url = cfg.embedder.remote_url;
    }
    auto embedder = make_embedder(ecfg);
    auto router = load_router(paths.router, embedder->fingerprint());
    auto projection = load_retriever(paths.retriever, embedder->fingerprint());
    auto index = FederatedIndex::load(cfg.index_dir);

    std::unique_ptr<ResourceSelector> selector;
    if (!cfg.selector_url.empty()) {
        selector = std::make_unique<RemoteSelector>(cfg.selector_url);
    } else if (mock) {
        selector = std::make_unique<KeywordSelector>();
    }
    return std::make_unique<SearchService>(std::move(index), QueryEncoder(std::move(embedder), std::move(projection)),
                                           std::move(router), cfg.gating, std::move(selector), base_seed,
                                           cfg.k_domain);
}

std::uint64_t SearchService::request_seed(std::optional<std::uint64_t> seed) const {
    if (seed) return *seed;
    return Rng::derive(base_seed_, counter_.fetch_add(1));
}

SearchResult SearchService::search(const SearchRequest& req) const {
    SearchOptions options;
    options.k = req.k;
    options.k_domain = k_domain_;
    switch (req.mode) {
        case Method::mkpqa: {
            auto gating = gating_;
            if (req.deterministic) gating.mode = GatingMode::deterministic;
            Rng rng(request_seed(req.seed));
            return federated_search(index_, encoder_, req.query, router_, gating, options, rng);
        }
        case Method::uis: return uis_search(index_, encoder_, req.query, options);
        case Method::rfs: return rfs_search(index_, encoder_, req.query, router_, options);
        case Method::lfs:
            if (!selector_) throw UsageError("mode lfs needs a selector URL or the mock flag");
            return lfs_search(index_, encoder_, req.query, *selector_, options);
    }
    throw UsageError("unknown mode");
}

json SearchService::route(std::string_view query, std::optional<std::uint64_t> seed, bool deterministic) const {
    auto gating = gating_;
    if (deterministic) gating.mode = GatingMode::deterministic;
    const auto probs = predict(router_, encoder_.embedder().embed(query));
    Rng rng(request_seed(seed));
    const auto gate = sample_active(probs, gating, rng);
    std::vector<double> p(probs.p.data(), probs.p.data() + probs.p.size());
    return {{"probs", p}, {"tau", gate.threshold}, {"gate_probs", gate.gate_probs}, {"active", gate.active}};
}

json SearchService::result_json(const SearchResult& r) const {
    json results = json::array();
    for (const auto& d : r.ranked) {
        results.push_back({{"id", d.id},
                           {"domain", index_.domains().at(d.domain).name},
                           {"s", d.s},
                           {"p", d.p},
                           {"u", d.u},
                           {"rank", d.rank}});
    }
    json doc = {{"query", r.query}, {"mode", r.mode}, {"results", results}, {"timing_ms", r.timing.to_json()}};
    if (r.probs) {
        doc["probs"] = std::vector<double>(r.probs->p.data(), r.probs->p.data() + r.probs->p.size());
    } else {
        doc["probs"] = nullptr;
    }
    doc["gate"] = r.gate ? r.gate->to_json() : json(nullptr);
    return doc;
}

std::string format_result(const SearchResult& r, const FederatedIndex& index) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "mode: " << r.mode << "\n";
    if (r.probs) {
        out << "p:";
        for (std::size_t j = 0; j < r.probs->size(); ++j) out << " " << index.domains().at(j).name << "=" << (*r.probs)[j];
        out << "\n";
    }
    if (r.gate) {
        out << "tau: " << r.gate->threshold << "\ngate:";
        for (std::size_t j = 0; j < r.gate->gate_probs.size(); ++j) {
            out << " " << index.domains().at(j).name << "=" << r.gate->gate_probs[j];
        }
        out << "\nactive:";
        for (auto j : r.gate->active) out << " " << index.domains().at(j).name;
        out << (r.gate->fallback ? " (fallback)" : "") << "\n";
    }
    for (const auto& d : r.ranked) {
        out << d.rank << ". " << d.id << "  [" << index.domains().at(d.domain).name << "]  s=" << d.s << " p=" << d.p
            << " U=" << d.u << "\n";
    }
    if (r.shortfall > 0) out << "(" << r.shortfall << " fewer results than requested)\n";
    return out.str();
}

std::string error_line(const std::exception& e) {
    std::string kind = "internal";
    if (const auto* fe = dynamic_cast<const Error*>(&e)) {
        switch (fe->kind()) {
            case ErrorKind::usage: kind = "usage"; break;
            case ErrorKind::data: kind = "data"; break;
            case ErrorKind::remote: kind = "remote"; break;
        }
    }
    json doc = {{"error", kind}, {"message", e.what()}};
    if (const auto* re = dynamic_cast<const RemoteError*>(&e)) doc["http_status"] = re->http_status();
    return doc.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace fedrag
