#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fedrag/app.hpp"
#include "fedrag/corpus.hpp"
#include "fedrag/datagen.hpp"
#include "fedrag/error.hpp"
#include "fedrag/evaluation.hpp"
#include "fedrag/federated.hpp"
#include "fedrag/io.hpp"
#include "fedrag/server.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fedrag;

namespace {

template <class T>
void override_with(const std::optional<T>& flag, T& target) {
    if (flag) target = *flag;
}

/// Flags shared by several subcommands. Each one overrides the config file.
struct Overrides {
    std::optional<std::string> corpus, chunks, models, index, dataset;
    std::optional<std::size_t> dim;
    std::optional<std::uint64_t> embed_seed;
    std::optional<std::string> embedder_url;
    std::optional<double> router_lr, router_l2;
    std::optional<std::size_t> router_epochs, router_batch;
    std::optional<double> retriever_lr, temperature;
    std::optional<std::size_t> retriever_epochs, retriever_batch, output_dim;
    bool in_batch_negatives = false;
    std::optional<double> tau0, tau_min;
    std::optional<std::size_t> k, k_domain;
    std::optional<std::string> selector_url;

    void paths(CLI::App* cmd) {
        cmd->add_option("--corpus", corpus, "Directory of page files plus domains.json");
        cmd->add_option("--chunks", chunks, "Chunk JSON Lines file written by ingest");
        cmd->add_option("--models", models, "Model directory");
        cmd->add_option("--index", index, "Index directory");
        cmd->add_option("--dataset", dataset, "Dataset JSON Lines file");
    }
    void embedder(CLI::App* cmd) {
        cmd->add_option("--dim", dim, "Embedding dimension");
        cmd->add_option("--embed-seed", embed_seed, "Feature-hash salt");
        cmd->add_option("--embedder-url", embedder_url, "Use the remote embedder at this base URL");
    }
    void training(CLI::App* cmd) {
        cmd->add_option("--router-lr", router_lr);
        cmd->add_option("--router-epochs", router_epochs);
        cmd->add_option("--router-batch", router_batch);
        cmd->add_option("--router-l2", router_l2);
        cmd->add_option("--retriever-lr", retriever_lr);
        cmd->add_option("--retriever-epochs", retriever_epochs);
        cmd->add_option("--retriever-batch", retriever_batch);
        cmd->add_option("--temperature", temperature, "InfoNCE temperature");
        cmd->add_option("--output-dim", output_dim, "Projection output dimension (0 keeps the input dimension)");
        cmd->add_flag("--in-batch-negatives", in_batch_negatives);
    }
    void search(CLI::App* cmd) {
        cmd->add_option("--tau0", tau0);
        cmd->add_option("--tau-min", tau_min);
        cmd->add_option("--k", k, "Number of results");
        cmd->add_option("--k-domain", k_domain, "Candidates per domain (0 = k)");
        cmd->add_option("--selector-url", selector_url, "Remote selector for mode lfs");
    }

    void into(AppConfig& c) const {
        if (corpus) c.corpus_dir = *corpus;
        if (chunks) c.chunks_path = *chunks;
        if (models) c.models_dir = *models;
        if (index) c.index_dir = *index;
        if (dataset) c.dataset_path = *dataset;
        override_with(dim, c.embedder.dimension);
        override_with(embed_seed, c.embedder.seed);
        if (embedder_url) {
            c.embedder.backend = EmbedderBackend::remote;
            c.embedder.remote_url = *embedder_url;
        }
        override_with(router_lr, c.router.learning_rate);
        override_with(router_epochs, c.router.epochs);
        override_with(router_batch, c.router.batch_size);
        override_with(router_l2, c.router.l2_penalty);
        override_with(retriever_lr, c.retriever.learning_rate);
        override_with(retriever_epochs, c.retriever.epochs);
        override_with(retriever_batch, c.retriever.batch_size);
        override_with(temperature, c.retriever.temperature);
        override_with(output_dim, c.retriever.output_dimension);
        if (in_batch_negatives) c.retriever.include_in_batch_negatives = true;
        override_with(tau0, c.gating.tau0);
        override_with(tau_min, c.gating.tau_min);
        override_with(k, c.k);
        override_with(k_domain, c.k_domain);
        override_with(selector_url, c.selector_url);
        c.validate();
    }
};

struct SpecFlags {
    std::optional<std::size_t> domains, vocab, pages, chunks_per_page, uni, cross, negatives;
    std::optional<double> overlap;

    void add(CLI::App* cmd) {
        cmd->add_option("--domains", domains, "Number of domains");
        cmd->add_option("--vocab", vocab, "Vocabulary size per domain");
        cmd->add_option("--overlap", overlap, "Shared vocabulary fraction in [0, 1)");
        cmd->add_option("--pages", pages, "Pages per domain");
        cmd->add_option("--chunks-per-page", chunks_per_page);
        cmd->add_option("--uni", uni, "Uni-domain queries per domain");
        cmd->add_option("--cross", cross, "Cross-domain queries per domain pair");
        cmd->add_option("--negatives", negatives, "Negatives per query");
    }
    void into(SyntheticSpec& s) const {
        override_with(domains, s.domains);
        override_with(vocab, s.vocab_size);
        override_with(overlap, s.overlap);
        override_with(pages, s.pages_per_domain);
        override_with(chunks_per_page, s.chunks_per_page);
        override_with(uni, s.uni_queries_per_domain);
        override_with(cross, s.cross_queries_per_pair);
        override_with(negatives, s.negatives_per_query);
        s.validate();
    }
};

void require(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(std::string("missing ") + what);
}

std::string summarize_trace(const std::vector<double>& trace) {
    std::ostringstream s;
    s << std::setprecision(6) << "epochs=" << trace.size();
    if (!trace.empty()) s << " loss_first=" << trace.front() << " loss_last=" << trace.back();
    return s.str();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("bad seed '" + item + "' in --seeds");
        }
    }
    if (out.empty()) throw UsageError("--seeds needs at least one seed");
    return out;
}

HttpService* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated multi-domain retrieval: routing, stochastic gating and unified ranking"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    app.add_option("--config", config_path, "JSON config file; flags override it");
    Overrides ov;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus and dataset");
    std::string gen_out;
    std::uint64_t gen_seed = 0;
    SpecFlags spec_flags;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Generator seed");
    spec_flags.add(gen);

    auto* ingest = app.add_subcommand("ingest", "Chunk a page directory into a chunk file");
    std::string ingest_out;
    std::size_t max_tokens = kDefaultMaxTokens;
    ingest->add_option("--corpus", ov.corpus, "Directory of page files plus domains.json");
    ingest->add_option("--out", ingest_out, "Chunk JSON Lines output")->required();
    ingest->add_option("--max-tokens", max_tokens, "Token limit per chunk");

    auto* train = app.add_subcommand("train", "Train the router and/or retriever");
    std::string train_target = "all";
    std::uint64_t train_seed = 0;
    train->add_option("target", train_target, "router, retriever or all")
        ->check(CLI::IsMember({"router", "retriever", "all"}));
    train->add_option("--seed", train_seed, "Training seed");
    ov.paths(train);
    ov.embedder(train);
    ov.training(train);

    auto* index = app.add_subcommand("index", "Build the federated index");
    ov.paths(index);

    auto* search = app.add_subcommand("search", "Run one query");
    std::string query, mode = "mkpqa";
    std::uint64_t search_seed = 0;
    bool deterministic = false, as_json = false, with_prompt = false, search_mock = false;
    search->add_option("query", query, "Query text")->required();
    search->add_option("--mode", mode, "mkpqa, uis, rfs or lfs")->check(CLI::IsMember({"mkpqa", "uis", "rfs", "lfs"}));
    search->add_option("--seed", search_seed, "Seed for the gate draw");
    search->add_flag("--deterministic", deterministic, "Activate domains with gate probability >= 0.5");
    search->add_flag("--json", as_json, "Print the service JSON document");
    search->add_flag("--prompt", with_prompt, "Also print the augmented prompt");
    search->add_flag("--mock", search_mock, "Use the keyword selector for lfs");
    ov.paths(search);
    ov.search(search);

    auto* eval = app.add_subcommand("eval", "Benchmark mkpqa against the baselines");
    std::string seeds_text = "0,1,2,3,4", methods_text = "mkpqa,uis,rfs", eval_out = "eval_report.json";
    std::optional<std::string> csv_out, timing_out, judge_url;
    bool eval_mock = false, quality = false;
    std::size_t latency_chunks = 0, latency_queries = 200;
    double holdout = 0.2;
    eval->add_option("--seeds", seeds_text, "Comma-separated seed list");
    eval->add_option("--methods", methods_text, "Comma-separated methods");
    eval->add_option("--out", eval_out, "Report JSON path");
    eval->add_option("--csv", csv_out, "Also write a CSV table");
    eval->add_option("--timing-out", timing_out, "Wall-clock timing JSON path (default: <out>.timing.json)");
    eval->add_option("--judge-url", judge_url, "Remote judge base URL");
    eval->add_option("--holdout", holdout, "Held-out query fraction");
    eval->add_flag("--mock", eval_mock, "Allow the keyword selector and mock judge");
    eval->add_flag("--quality", quality, "Score relevancy and faithfulness of an extractive response");
    eval->add_option("--latency-chunks", latency_chunks,
                     "Instead of the benchmark, time federated queries over this many chunks per domain");
    eval->add_option("--latency-queries", latency_queries, "Timed queries for --latency-chunks");
    spec_flags.add(eval);
    ov.paths(eval);
    ov.embedder(eval);
    ov.training(eval);
    ov.search(eval);

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    std::optional<std::string> host;
    std::optional<int> port;
    std::uint64_t serve_seed = 0;
    bool serve_mock = false;
    serve->add_option("--host", host);
    serve->add_option("--port", port, "0 picks a free port");
    serve->add_option("--seed", serve_seed, "Base seed for per-request generators");
    serve->add_flag("--mock", serve_mock, "Use the keyword selector for lfs");
    ov.paths(serve);
    ov.search(serve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << error_line(UsageError(e.what())) << "\n";
        return 2;
    }

    try {
        AppConfig cfg = config_path ? AppConfig::load(*config_path) : AppConfig{};
        ov.into(cfg);

        if (*gen) {
            SyntheticSpec spec;
            spec_flags.into(spec);
            spec.seed = gen_seed;
            const fs::path out = gen_out;
            const auto sc = generate_corpus(spec);
            const auto pairs = generate_dataset(spec, sc);
            sc.write(out / "corpus");
            export_dataset(pairs, out / "dataset.jsonl");
            io::write_json_atomic(out / "spec.json", spec.to_json());
            const auto groups = group_by_query(pairs);
            std::size_t cross = 0;
            for (const auto& g : groups) cross += g.cross_domain();
            std::cout << "pages " << sc.pages.size() << "\nchunks " << sc.corpus.total_chunks() << "\nqueries "
                      << groups.size() << " (" << cross << " cross-domain)\npairs " << pairs.size()
                      << "\npositive_ratio " << positive_ratio(pairs) << "\n";
        } else if (*ingest) {
            require(cfg.corpus_dir, "--corpus");
            const auto corpus = load_corpus(cfg.corpus_dir, max_tokens);
            write_chunks(ingest_out, corpus);
            for (const auto& d : corpus.domains.all()) {
                std::cout << d.name << "\t" << corpus.by_domain[d.id].size() << "\n";
            }
        } else if (*train) {
            const auto summary = train_models(cfg, parse_train_target(train_target), train_seed);
            for (const auto& w : summary.router_warnings) std::cerr << "warning: " << w << "\n";
            if (!summary.router_loss.empty()) std::cout << "router " << summarize_trace(summary.router_loss) << "\n";
            if (summary.margin_before) {
                std::cout << "retriever " << summarize_trace(summary.retriever_loss)
                          << " margin_before=" << *summary.margin_before << " margin_after=" << *summary.margin_after
                          << "\n";
            }
        } else if (*index) {
            const auto built = build_configured_index(cfg);
            for (const auto& d : built.domains().all()) {
                std::cout << d.name << "\t" << built.domain(d.id).size() << "\n";
            }
            std::cout << "index written to " << cfg.index_dir.string() << "\n";
        } else if (*search) {
            const auto service = SearchService::open(cfg, search_mock, cfg.gating.seed);
            SearchRequest req{query, parse_method(mode), cfg.k, deterministic, search_seed};
            const auto result = service->search(req);
            if (as_json) {
                std::cout << service->result_json(result).dump() << "\n";
            } else {
                std::cout << format_result(result, service->index());
            }
            if (with_prompt) {
                const auto contexts = prompt_contexts(service->index(), result.ranked);
                std::cout << "\n" << build_prompt(query, contexts);
            }
        } else if (*eval) {
            const fs::path out = eval_out;
            const fs::path timing_path = timing_out ? fs::path(*timing_out) : fs::path(out.string() + ".timing.json");
            if (latency_chunks > 0) {
                LatencyConfig lc;
                lc.chunks_per_domain = latency_chunks;
                lc.queries = latency_queries;
                lc.dimension = cfg.embedder.dimension;
                lc.k = cfg.k;
                const auto report = run_latency_benchmark(lc);
                io::write_json_atomic(timing_path, report.to_json());
                std::cout << report.to_json().dump() << "\n";
                return 0;
            }
            BenchmarkConfig bc;
            spec_flags.into(bc.spec);
            if (!cfg.corpus_dir.empty() || !cfg.dataset_path.empty()) {
                require(cfg.corpus_dir, "--corpus");
                require(cfg.dataset_path, "--dataset");
                bc.corpus_dir = cfg.corpus_dir;
                bc.dataset_path = cfg.dataset_path;
            }
            bc.seeds = parse_seeds(seeds_text);
            bc.methods.clear();
            std::stringstream ms(methods_text);
            for (std::string m; std::getline(ms, m, ',');) bc.methods.push_back(parse_method(m));
            bc.search.k = cfg.k;
            bc.search.k_domain = cfg.k_domain;
            bc.embedder = cfg.embedder;
            bc.router = cfg.router;
            bc.retriever = cfg.retriever;
            bc.gating = cfg.gating;
            bc.holdout_fraction = holdout;
            bc.mock = eval_mock;
            bc.quality = quality;
            bc.selector_url = cfg.selector_url;
            if (judge_url) bc.judge_url = *judge_url;

            const auto run = run_benchmark(bc);
            io::write_json_atomic(out, run.report.to_json());
            if (csv_out) io::write_file_atomic(*csv_out, run.report.to_csv());
            json timing = json::object();
            for (const auto& [m, t] : run.timing) timing[m] = t.to_json();
            io::write_json_atomic(timing_path, timing);

            std::cout << std::fixed << std::setprecision(4) << "method   acc_uni  acc_cross  acc_all  active  scored\n";
            for (const auto& [m, metrics] : run.report.aggregate) {
                std::cout << std::left << std::setw(8) << m << std::right << " " << metrics.at("acc_uni").mean << "   "
                          << metrics.at("acc_cross").mean << "     " << metrics.at("acc_all").mean << "   "
                          << metrics.at("mean_active_domains").mean << "  " << metrics.at("mean_docs_scored").mean
                          << "\n";
            }
            std::cout << "report written to " << out.string() << "\n";
        } else if (*serve) {
            override_with(host, cfg.host);
            override_with(port, cfg.port);
            const auto service = SearchService::open(cfg, serve_mock, serve_seed);
            HttpService http(*service);
            const int bound = http.bind(cfg.host, cfg.port);
            g_server = &http;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cout << "listening on " << cfg.host << ":" << bound << std::endl;
            http.serve();
            g_server = nullptr;
        }
    } catch (const Error& e) {
        std::cerr << error_line(e) << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << error_line(e) << "\n";
        return 1;
    }
    return 0;
}
