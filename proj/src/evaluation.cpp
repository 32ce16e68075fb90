#include "fedrag/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fedrag/error.hpp"
#include "fedrag/random.hpp"
#include "fedrag/remote.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5b1;
constexpr std::uint64_t kRouterStream = 0x20;
constexpr std::uint64_t kRetrieverStream = 0x21;
constexpr std::uint64_t kGatingStream = 0x22;

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::set<std::string> word_set(std::string_view text) {
    std::set<std::string> out;
    for (auto tok : split_tokens(text)) {
        auto w = normalize_word(tok);
        if (std::any_of(w.begin(), w.end(), is_alnum)) out.insert(std::move(w));
    }
    return out;
}

const char* kind_name(JudgeKind k) { return k == JudgeKind::relevancy ? "relevancy" : "faithfulness"; }

double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct PreparedData {
    Corpus corpus;
    std::vector<QueryRecord> queries;
};

PreparedData prepare(const BenchmarkConfig& cfg, std::uint64_t seed) {
    if (cfg.corpus_dir) {
        auto corpus = load_corpus(*cfg.corpus_dir);
        auto pairs = load_dataset(*cfg.dataset_path);
        return {std::move(corpus), group_by_query(pairs)};
    }
    auto spec = cfg.spec;
    spec.seed = seed;
    auto sc = generate_corpus(spec);
    auto pairs = generate_dataset(spec, sc);
    return {std::move(sc.corpus), group_by_query(pairs)};
}

}  // namespace

double acc_at_top1(std::span<const Outcome> outcomes) {
    if (outcomes.empty()) throw DataError("acc_at_top1: no results");
    std::size_t hits = 0;
    for (const auto& o : outcomes) {
        if (o.gold.empty()) throw DataError("acc_at_top1: empty gold set for query '" + o.result.query + "'");
        if (o.result.ranked.empty()) continue;
        const auto& top = o.result.ranked.front().id;
        hits += std::find(o.gold.begin(), o.gold.end(), top) != o.gold.end();
    }
    return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

std::vector<std::string> split_statements(std::string_view text) {
    std::vector<std::string> out;
    auto flush = [&](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        if (std::any_of(s.begin(), s.end(), is_alnum)) out.emplace_back(s);
    };
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const bool terminal = c == '.' || c == '!' || c == '?';
        if (terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
            flush(text.substr(start, i + 1 - start));
            start = i + 1;
        }
    }
    if (start < text.size()) flush(text.substr(start));
    return out;
}

std::string normalize_statement(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            pending_space = !out.empty();
        } else if (std::ispunct(u)) {
            continue;
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    return out;
}

double MockJudge::rate_relevancy(std::string_view query, std::string_view response) const {
    const auto q = word_set(query), r = word_set(response);
    std::size_t inter = 0;
    for (const auto& w : q) inter += r.count(w);
    const auto uni = q.size() + r.size() - inter;
    const double jaccard = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return 1.0 + 9.0 * jaccard;
}

bool MockJudge::supported(std::string_view statement, std::span<const std::string> contexts) const {
    const auto s = normalize_statement(statement);
    if (s.empty()) return false;
    return std::any_of(contexts.begin(), contexts.end(),
                       [&](const std::string& c) { return normalize_statement(c).find(s) != std::string::npos; });
}

RemoteJudge::RemoteJudge(std::string base_url, int timeout_ms) : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {}

double RemoteJudge::score(JudgeKind kind, std::string_view query, std::string_view response,
                          std::span<const std::string> contexts) const {
    const json body = {{"kind", kind_name(kind)},
                       {"query", query},
                       {"response", response},
                       {"contexts", std::vector<std::string>(contexts.begin(), contexts.end())}};
    const auto reply = remote::post_json(base_url_, "/judge", body, timeout_ms_);
    if (!reply.contains("score") || !reply["score"].is_number()) {
        throw RemoteError("/judge reply has no numeric 'score'", 200);
    }
    return reply["score"].get<double>();
}

double RemoteJudge::rate_relevancy(std::string_view query, std::string_view response) const {
    return score(JudgeKind::relevancy, query, response, {});
}

bool RemoteJudge::supported(std::string_view statement, std::span<const std::string> contexts) const {
    return score(JudgeKind::faithfulness, "", statement, contexts) >= 0.5;
}

double faithfulness(std::string_view response, std::span<const std::string> contexts, const Judge& judge) {
    const auto statements = split_statements(response);
    if (statements.empty()) throw DataError("faithfulness: response has no statements");
    std::size_t ok = 0;
    for (const auto& s : statements) ok += judge.supported(s, contexts);
    return static_cast<double>(ok) / static_cast<double>(statements.size());
}

double relevancy(std::string_view query, std::string_view response, const Judge& judge) {
    const double r = judge.rate_relevancy(query, response);
    if (!(r >= 1.0 && r <= 10.0)) throw RemoteError("relevancy rating " + std::to_string(r) + " outside [1, 10]");
    return r;
}

std::string extractive_response(std::span<const PromptContext> contexts, std::size_t sentences) {
    if (contexts.empty()) return "I could not find an answer in the documentation.";
    const auto statements = split_statements(contexts.front().text);
    std::string out;
    for (std::size_t i = 0; i < std::min(sentences, statements.size()); ++i) {
        if (!out.empty()) out += ' ';
        out += statements[i];
    }
    return out;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::mkpqa: return "mkpqa";
        case Method::uis: return "uis";
        case Method::rfs: return "rfs";
        case Method::lfs: return "lfs";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (auto m : {Method::mkpqa, Method::uis, Method::rfs, Method::lfs}) {
        if (method_name(m) == name) return m;
    }
    throw UsageError("unknown method '" + std::string(name) + "' (expected mkpqa, uis, rfs or lfs)");
}

void BenchmarkConfig::validate() const {
    if (seeds.empty()) throw UsageError("benchmark: at least one seed is required");
    if (methods.empty()) throw UsageError("benchmark: at least one method is required");
    if (corpus_dir.has_value() != dataset_path.has_value()) {
        throw UsageError("benchmark: corpus and dataset paths must be given together");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw UsageError("benchmark: holdout must lie in (0, 1)");
    const bool wants_lfs = std::find(methods.begin(), methods.end(), Method::lfs) != methods.end();
    if (wants_lfs && selector_url.empty() && !mock) {
        throw UsageError("method lfs needs a remote selector URL or the mock flag");
    }
    if (quality && judge_url.empty() && !mock) throw UsageError("quality metrics need a remote judge URL or the mock flag");
    if (!corpus_dir) spec.validate();
    search.validate();
    embedder.validate();
    router.validate();
    retriever.validate();
    gating.validate();
}

json BenchmarkConfig::to_json() const {
    json m = json::array();
    for (auto x : methods) m.push_back(method_name(x));
    json doc = {{"methods", m},
                {"seeds", seeds},
                {"k", search.k},
                {"k_domain", search.per_domain()},
                {"embedder", embedder.to_json()},
                {"router", router.to_json()},
                {"retriever", retriever.to_json()},
                {"gating", gating.to_json()},
                {"holdout_fraction", holdout_fraction},
                {"mock", mock},
                {"quality", quality}};
    if (corpus_dir) {
        doc["corpus_dir"] = corpus_dir->string();
        doc["dataset_path"] = dataset_path->string();
    } else {
        doc["spec"] = spec.to_json();
    }
    return doc;
}

json MethodMetrics::to_json() const {
    json doc = {{"acc_uni", acc_uni},
                {"acc_cross", acc_cross},
                {"acc_all", acc_all},
                {"mean_active_domains", mean_active_domains},
                {"mean_docs_scored", mean_docs_scored},
                {"uni_queries", uni_queries},
                {"cross_queries", cross_queries}};
    if (relevancy) doc["relevancy"] = *relevancy;
    if (faithfulness) doc["faithfulness"] = *faithfulness;
    return doc;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

json EvalReport::to_json() const {
    json per_seed = json::array();
    for (const auto& s : seeds) {
        json methods = json::object();
        for (const auto& [name, m] : s.methods) methods[name] = m.to_json();
        per_seed.push_back({{"seed", s.seed},
                            {"train_queries", s.train_queries},
                            {"test_queries", s.test_queries},
                            {"router_final_loss", s.router_final_loss},
                            {"retriever_final_loss", s.retriever_final_loss},
                            {"methods", methods}});
    }
    json agg = json::object();
    for (const auto& [method, metrics] : aggregate) {
        for (const auto& [metric, v] : metrics) agg[method][metric] = {{"mean", v.mean}, {"std", v.std}};
    }
    return {{"config", config}, {"per_seed", per_seed}, {"aggregate", agg}};
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "method,metric,mean,std\n";
    for (const auto& [method, metrics] : aggregate) {
        for (const auto& [metric, v] : metrics) out << method << ',' << metric << ',' << v.mean << ',' << v.std << '\n';
    }
    return out.str();
}

json LatencySummary::to_json() const {
    return {{"samples", samples}, {"p50_ms", p50_ms}, {"p95_ms", p95_ms}, {"max_ms", max_ms}};
}

LatencySummary summarize_latency(std::vector<double> samples_ms) {
    std::sort(samples_ms.begin(), samples_ms.end());
    LatencySummary s;
    s.samples = samples_ms.size();
    s.p50_ms = percentile(samples_ms, 0.5);
    s.p95_ms = percentile(samples_ms, 0.95);
    s.max_ms = samples_ms.empty() ? 0.0 : samples_ms.back();
    return s;
}

std::pair<std::vector<QueryRecord>, std::vector<QueryRecord>> split_queries(std::span<const QueryRecord> queries,
                                                                            double holdout_fraction,
                                                                            std::uint64_t seed) {
    if (queries.size() < 2) throw DataError("split: need at least two queries");
    std::vector<std::size_t> order(queries.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(seed, kSplitStream));
    rng.shuffle(order);
    auto test_n = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(queries.size())));
    test_n = std::clamp<std::size_t>(test_n, 1, queries.size() - 1);

    std::vector<QueryRecord> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) (i < test_n ? test : train).push_back(queries[order[i]]);
    return {std::move(train), std::move(test)};
}

BenchmarkRun run_benchmark(const BenchmarkConfig& cfg) {
    cfg.validate();
    const auto embedder = make_embedder(cfg.embedder);

    std::unique_ptr<ResourceSelector> selector;
    if (!cfg.selector_url.empty()) {
        selector = std::make_unique<RemoteSelector>(cfg.selector_url);
    } else {
        selector = std::make_unique<KeywordSelector>();
    }
    std::unique_ptr<Judge> judge;
    if (!cfg.judge_url.empty()) {
        judge = std::make_unique<RemoteJudge>(cfg.judge_url);
    } else {
        judge = std::make_unique<MockJudge>();
    }

    BenchmarkRun run;
    run.report.config = cfg.to_json();
    std::map<std::string, std::vector<double>> latencies;

    for (auto seed : cfg.seeds) {
        const auto data = prepare(cfg, seed);
        const auto [train, test] = split_queries(data.queries, cfg.holdout_fraction, seed);

        SeedReport sr;
        sr.seed = seed;
        sr.train_queries = train.size();
        sr.test_queries = test.size();

        std::vector<LabeledQuery> labeled;
        std::vector<QueryGroup> groups;
        for (const auto& q : train) {
            labeled.push_back({q.text, q.domains});
            groups.push_back({q.text, q.positives, q.negatives});
        }
        std::unordered_map<std::string, std::string> chunk_text;
        for (const auto& list : data.corpus.by_domain) {
            for (const auto& c : list) chunk_text.emplace(c.id, c.text);
        }

        auto router_cfg = cfg.router;
        router_cfg.seed = Rng::derive(seed, kRouterStream);
        const auto router = train_router(labeled, *embedder, data.corpus.domains.size(), router_cfg);
        sr.router_final_loss = router.loss_trace.empty() ? 0.0 : router.loss_trace.back();

        auto retriever_cfg = cfg.retriever;
        retriever_cfg.seed = Rng::derive(seed, kRetrieverStream);
        const auto retriever = train_retriever(groups, chunk_text, *embedder, retriever_cfg);
        sr.retriever_final_loss = retriever.loss_trace.empty() ? 0.0 : retriever.loss_trace.back();

        const QueryEncoder encoder(embedder, retriever.model);
        const auto index = build_index(data.corpus, encoder);

        for (auto method : cfg.methods) {
            const auto name = method_name(method);
            Rng gate_rng(Rng::derive(seed, kGatingStream));
            std::vector<Outcome> uni, cross;
            double active = 0.0, scored = 0.0, rel = 0.0, faith = 0.0;
            for (const auto& q : test) {
                SearchResult r;
                switch (method) {
                    case Method::mkpqa:
                        r = federated_search(index, encoder, q.text, router.model, cfg.gating, cfg.search, gate_rng);
                        active += static_cast<double>(r.gate->active.size());
                        break;
                    case Method::uis:
                        r = uis_search(index, encoder, q.text, cfg.search);
                        active += static_cast<double>(index.domain_count());
                        break;
                    case Method::rfs:
                        r = rfs_search(index, encoder, q.text, router.model, cfg.search);
                        active += 1.0;
                        break;
                    case Method::lfs:
                        r = lfs_search(index, encoder, q.text, *selector, cfg.search);
                        active += 1.0;
                        break;
                }
                scored += static_cast<double>(r.docs_scored);
                latencies[name].push_back(r.timing.total_ms);
                if (cfg.quality) {
                    const auto contexts = prompt_contexts(index, r.ranked);
                    const auto response = extractive_response(contexts);
                    std::vector<std::string> texts;
                    for (const auto& c : contexts) texts.push_back(c.text);
                    rel += relevancy(q.text, response, *judge);
                    faith += texts.empty() ? 0.0 : faithfulness(response, texts, *judge);
                }
                (q.cross_domain() ? cross : uni).push_back({std::move(r), q.positives});
            }

            MethodMetrics m;
            const double n = static_cast<double>(test.size());
            m.uni_queries = uni.size();
            m.cross_queries = cross.size();
            m.acc_uni = uni.empty() ? 0.0 : acc_at_top1(uni);
            m.acc_cross = cross.empty() ? 0.0 : acc_at_top1(cross);
            m.acc_all = (m.acc_uni * static_cast<double>(uni.size()) + m.acc_cross * static_cast<double>(cross.size())) / n;
            m.mean_active_domains = active / n;
            m.mean_docs_scored = scored / n;
            if (cfg.quality) {
                m.relevancy = rel / n;
                m.faithfulness = faith / n;
            }
            sr.methods[name] = m;
        }
        run.report.seeds.push_back(std::move(sr));
    }

    for (auto method : cfg.methods) {
        const auto name = method_name(method);
        std::map<std::string, std::vector<double>> series;
        for (const auto& s : run.report.seeds) {
            const auto& m = s.methods.at(name);
            series["acc_uni"].push_back(m.acc_uni);
            series["acc_cross"].push_back(m.acc_cross);
            series["acc_all"].push_back(m.acc_all);
            series["mean_active_domains"].push_back(m.mean_active_domains);
            series["mean_docs_scored"].push_back(m.mean_docs_scored);
            if (m.relevancy) series["relevancy"].push_back(*m.relevancy);
            if (m.faithfulness) series["faithfulness"].push_back(*m.faithfulness);
        }
        for (const auto& [metric, values] : series) run.report.aggregate[name][metric] = mean_std(values);
        run.timing[name] = summarize_latency(latencies[name]);
    }
    return run;
}

json LatencyReport::to_json() const {
    return {{"domains", config.domains},
            {"chunks_per_domain", config.chunks_per_domain},
            {"dimension", config.dimension},
            {"queries", config.queries},
            {"k", config.k},
            {"median_ms", summary.p50_ms},
            {"latency", summary.to_json()},
            {"mean_active_domains", mean_active_domains}};
}

LatencyReport run_latency_benchmark(const LatencyConfig& cfg) {
    if (cfg.domains == 0 || cfg.chunks_per_domain == 0 || cfg.queries == 0) {
        throw UsageError("latency benchmark: counts must be positive");
    }
    EmbedderConfig ecfg;
    ecfg.dimension = cfg.dimension;
    ecfg.validate();
    const std::shared_ptr<const Embedder> embedder = make_embedder(ecfg);
    const QueryEncoder encoder(embedder, ProjectionModel::identity(cfg.dimension, embedder->fingerprint()));

    Rng rng(cfg.seed);
    std::vector<Domain> domains;
    std::vector<DomainIndex> indexes;
    for (std::size_t j = 0; j < cfg.domains; ++j) {
        domains.push_back({j, "domain-" + std::to_string(j), ""});
        RowMatrix vectors(static_cast<Eigen::Index>(cfg.chunks_per_domain), static_cast<Eigen::Index>(cfg.dimension));
        std::vector<IndexedChunk> chunks;
        chunks.reserve(cfg.chunks_per_domain);
        for (std::size_t i = 0; i < cfg.chunks_per_domain; ++i) {
            for (std::size_t c = 0; c < cfg.dimension; ++c) {
                vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rng.normal();
            }
            vectors.row(static_cast<Eigen::Index>(i)).normalize();
            chunks.push_back({"domain-" + std::to_string(j) + "/" + std::to_string(i), "", "", ""});
        }
        indexes.emplace_back(j, domains.back().name, std::move(chunks), vectors);
    }
    const FederatedIndex index(DomainRegistry(domains), std::move(indexes), embedder->fingerprint(),
                               encoder.projection().fingerprint());
    const auto router = RouterModel::zeros(cfg.domains, cfg.dimension, embedder->fingerprint());
    GatingConfig gating;
    SearchOptions options;
    options.k = cfg.k;

    const char* words[] = {"export", "layers", "sync", "license", "template", "font", "crash", "plugin", "share",
                           "brush", "timeline", "color", "install", "account", "render", "print"};
    std::vector<double> samples;
    double active = 0.0;
    Rng gate_rng(Rng::derive(cfg.seed, kGatingStream));
    const std::size_t warmup = std::min<std::size_t>(5, cfg.queries);
    for (std::size_t i = 0; i < warmup + cfg.queries; ++i) {
        std::string q = "how do i";
        for (int w = 0; w < 8; ++w) q += std::string(" ") + words[rng.below(std::size(words))];
        const auto r = federated_search(index, encoder, q, router, gating, options, gate_rng);
        if (i < warmup) continue;
        samples.push_back(r.timing.total_ms);
        active += static_cast<double>(r.gate->active.size());
    }
    LatencyReport report;
    report.config = cfg;
    report.summary = summarize_latency(std::move(samples));
    report.mean_active_domains = active / static_cast<double>(cfg.queries);
    return report;
}

}  // namespace fedrag
