#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/eigen.h>

#include "fedrag/app.hpp"
#include "fedrag/corpus.hpp"
#include "fedrag/datagen.hpp"
#include "fedrag/error.hpp"
#include "fedrag/evaluation.hpp"
#include "fedrag/gating.hpp"
#include "fedrag/io.hpp"

namespace py = pybind11;
using namespace fedrag;
using nlohmann::json;

namespace {

/// Round-trips through the json module; documents here are small.
py::object to_python(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

json from_python(const py::object& obj) {
    if (obj.is_none()) return json::object();
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

DomainProbs probs_of(const Eigen::VectorXd& p) { return DomainProbs{p}; }

py::dict generate(const std::string& out_dir, const py::object& spec_doc, std::uint64_t seed) {
    auto spec = SyntheticSpec::from_json(from_python(spec_doc));
    spec.seed = seed;
    spec.validate();
    const std::filesystem::path out = out_dir;
    std::optional<SyntheticCorpus> sc;
    std::vector<QueryDocPair> pairs;
    {
        py::gil_scoped_release release;
        sc = generate_corpus(spec);
        pairs = generate_dataset(spec, *sc);
        sc->write(out / "corpus");
        export_dataset(pairs, out / "dataset.jsonl");
        io::write_json_atomic(out / "spec.json", spec.to_json());
    }
    const auto groups = group_by_query(pairs);
    std::size_t cross = 0;
    for (const auto& g : groups) cross += g.cross_domain();
    py::dict d;
    d["pages"] = sc->pages.size();
    d["chunks"] = sc->corpus.total_chunks();
    d["queries"] = groups.size();
    d["cross_queries"] = cross;
    d["pairs"] = pairs.size();
    d["positive_ratio"] = positive_ratio(pairs);
    return d;
}

AppConfig app_config(const py::object& doc) { return AppConfig::from_json(from_python(doc)); }

BenchmarkConfig benchmark_config(const py::dict& kw) {
    BenchmarkConfig c;
    auto doc = [&](const char* key) { return kw.contains(key) ? from_python(kw[key]) : json::object(); };
    c.spec = SyntheticSpec::from_json(doc("spec"));
    c.embedder = EmbedderConfig::from_json(doc("embedder"));
    c.router = RouterTrainConfig::from_json(doc("router"));
    c.retriever = RetrieverTrainConfig::from_json(doc("retriever"));
    c.gating = GatingConfig::from_json(doc("gating"));
    if (kw.contains("seeds")) c.seeds = kw["seeds"].cast<std::vector<std::uint64_t>>();
    if (kw.contains("methods")) {
        c.methods.clear();
        for (const auto& m : kw["methods"].cast<std::vector<std::string>>()) c.methods.push_back(parse_method(m));
    }
    if (kw.contains("k")) c.search.k = kw["k"].cast<std::size_t>();
    if (kw.contains("holdout")) c.holdout_fraction = kw["holdout"].cast<double>();
    if (kw.contains("mock")) c.mock = kw["mock"].cast<bool>();
    if (kw.contains("quality")) c.quality = kw["quality"].cast<bool>();
    if (kw.contains("corpus_dir")) c.corpus_dir = kw["corpus_dir"].cast<std::string>();
    if (kw.contains("dataset_path")) c.dataset_path = kw["dataset_path"].cast<std::string>();
    if (kw.contains("selector_url")) c.selector_url = kw["selector_url"].cast<std::string>();
    if (kw.contains("judge_url")) c.judge_url = kw["judge_url"].cast<std::string>();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Federated multi-domain retrieval core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<UsageError>(m, "UsageError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<RemoteError>(m, "RemoteError", base.ptr());

    m.def("count_tokens", [](const std::string& text) { return count_tokens(text); });
    m.def(
        "chunk_page",
        [](const std::string& url, const std::string& title, const std::string& body, std::size_t max_tokens) {
            py::list out;
            for (const auto& c : chunk_page(SourcePage{url, title, 0, body}, max_tokens)) out.append(to_python(chunk_to_json(c)));
            return out;
        },
        py::arg("url"), py::arg("title"), py::arg("body"), py::arg("max_tokens") = kDefaultMaxTokens);

    py::class_<HashedEmbedder>(m, "HashedEmbedder")
        .def(py::init([](std::size_t dimension, std::uint64_t seed) {
                 EmbedderConfig c;
                 c.dimension = dimension;
                 c.seed = seed;
                 return HashedEmbedder(c);
             }),
             py::arg("dimension") = 256, py::arg("seed") = 0)
        .def_property_readonly("dimension", [](const HashedEmbedder& e) { return e.dimension(); })
        .def_property_readonly("fingerprint", [](const HashedEmbedder& e) { return e.fingerprint(); })
        .def("embed", [](const HashedEmbedder& e, const std::string& text) { return e.embed(text); });

    m.def(
        "adaptive_threshold",
        [](const Eigen::VectorXd& p, double tau0, double tau_min) {
            GatingConfig c;
            c.tau0 = tau0;
            c.tau_min = tau_min;
            c.validate();
            return adaptive_threshold(probs_of(p), c);
        },
        py::arg("probs"), py::arg("tau0") = 0.5, py::arg("tau_min") = 0.05);
    m.def(
        "gate",
        [](const Eigen::VectorXd& p, std::uint64_t seed, bool deterministic, const py::object& gating) {
            auto c = GatingConfig::from_json(from_python(gating));
            if (deterministic) c.mode = GatingMode::deterministic;
            Rng rng(seed);
            return to_python(sample_active(probs_of(p), c, rng).to_json());
        },
        py::arg("probs"), py::arg("seed") = 0, py::arg("deterministic") = false, py::arg("gating") = py::none());

    m.def("generate", &generate, py::arg("out_dir"), py::arg("spec") = py::none(), py::arg("seed") = 0,
          "Write a synthetic corpus and labelled dataset under out_dir.");
    m.def(
        "train",
        [](const py::object& config, const std::string& target, std::uint64_t seed) {
            const auto cfg = app_config(config);
            const auto t = parse_train_target(target);
            TrainSummary s;
            {
                py::gil_scoped_release release;
                s = train_models(cfg, t, seed);
            }
            return to_python(s.to_json());
        },
        py::arg("config"), py::arg("target") = "all", py::arg("seed") = 0);
    m.def(
        "build_index",
        [](const py::object& config) {
            const auto cfg = app_config(config);
            py::gil_scoped_release release;
            const auto built = build_configured_index(cfg);
            std::vector<std::size_t> sizes;
            for (std::size_t j = 0; j < built.domain_count(); ++j) sizes.push_back(built.domain(j).size());
            return sizes;
        },
        py::arg("config"));
    m.def(
        "evaluate",
        [](const py::kwargs& kw) {
            auto cfg = benchmark_config(kw);
            cfg.validate();
            json doc;
            {
                py::gil_scoped_release release;
                doc = run_benchmark(cfg).report.to_json();
            }
            return to_python(doc);
        },
        "Run the benchmark. Keywords: spec, embedder, router, retriever, gating (dicts), seeds, methods, k, "
        "holdout, mock, quality, corpus_dir, dataset_path, selector_url, judge_url.");

    py::class_<SearchService>(m, "SearchService")
        .def(py::init([](const py::object& config, bool mock, std::uint64_t seed) {
                 return SearchService::open(app_config(config), mock, seed);
             }),
             py::arg("config"), py::arg("mock") = false, py::arg("seed") = 0)
        .def(
            "search",
            [](const SearchService& s, const std::string& query, const std::string& mode, std::size_t k,
               std::optional<std::uint64_t> seed, bool deterministic) {
                SearchRequest req{query, parse_method(mode), k, deterministic, seed};
                if (k == 0) throw UsageError("k must be at least 1");
                json doc;
                {
                    py::gil_scoped_release release;
                    doc = s.result_json(s.search(req));
                }
                return to_python(doc);
            },
            py::arg("query"), py::arg("mode") = "mkpqa", py::arg("k") = 5, py::arg("seed") = py::none(),
            py::arg("deterministic") = false)
        .def(
            "route",
            [](const SearchService& s, const std::string& query, std::optional<std::uint64_t> seed, bool deterministic) {
                return to_python(s.route(query, seed, deterministic));
            },
            py::arg("query"), py::arg("seed") = py::none(), py::arg("deterministic") = false)
        .def_property_readonly("domains", [](const SearchService& s) { return s.index().domains().names(); });
}
