#include <doctest.h>

#include <set>

#include "fedrag/error.hpp"
#include "fedrag/evaluation.hpp"
#include "support/fixtures.hpp"
#include "support/mock_server.hpp"

using namespace fedrag;
using nlohmann::json;

namespace {

Outcome outcome(std::vector<std::string> ranked, std::vector<std::string> gold) {
    Outcome o;
    for (std::size_t i = 0; i < ranked.size(); ++i) o.result.ranked.push_back({ranked[i], 0, 0.5, 1.0, 0.5, i + 1});
    o.gold = std::move(gold);
    return o;
}

BenchmarkConfig tiny_benchmark() {
    BenchmarkConfig cfg;
    cfg.spec.pages_per_domain = 4;
    cfg.spec.uni_queries_per_domain = 20;
    cfg.spec.cross_queries_per_pair = 5;
    cfg.seeds = {0, 1};
    cfg.router.epochs = 20;
    cfg.retriever.epochs = 3;
    cfg.embedder.dimension = 64;
    return cfg;
}

}  // namespace

TEST_CASE("acc_at_top1") {
    SUBCASE("ten-query fixture with seven hits") {
        std::vector<Outcome> o;
        // Hits: rank-1 id in the gold set.
        o.push_back(outcome({"a", "b"}, {"a"}));
        o.push_back(outcome({"c"}, {"c", "x"}));
        o.push_back(outcome({"d", "e"}, {"x", "d"}));
        o.push_back(outcome({"f"}, {"f"}));
        o.push_back(outcome({"g", "h"}, {"g"}));
        o.push_back(outcome({"i"}, {"i"}));
        o.push_back(outcome({"j"}, {"j"}));
        // Misses: gold below rank 1, gold absent, nothing retrieved.
        o.push_back(outcome({"k", "l"}, {"l"}));
        o.push_back(outcome({"m"}, {"z"}));
        o.push_back(outcome({}, {"n"}));
        CHECK(acc_at_top1(o) == 0.7);
    }
    SUBCASE("all and none") {
        std::vector<Outcome> all = {outcome({"a"}, {"a"}), outcome({"b"}, {"b"})};
        std::vector<Outcome> none = {outcome({"a"}, {"b"}), outcome({"b"}, {"a"})};
        CHECK(acc_at_top1(all) == 1.0);
        CHECK(acc_at_top1(none) == 0.0);
    }
    SUBCASE("matches a naive recount on random fixtures") {
        Rng rng(4);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<Outcome> o;
            std::size_t hits = 0;
            const auto n = static_cast<std::size_t>(rng.between(1, 30));
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<std::string> ranked, gold;
                for (std::int64_t r = rng.between(0, 3); r > 0; --r) ranked.push_back("d" + std::to_string(rng.below(5)));
                for (std::int64_t g = rng.between(1, 2); g > 0; --g) gold.push_back("d" + std::to_string(rng.below(5)));
                if (!ranked.empty()) {
                    for (const auto& g : gold) {
                        if (g == ranked[0]) {
                            ++hits;
                            break;
                        }
                    }
                }
                o.push_back(outcome(ranked, gold));
            }
            CHECK(acc_at_top1(o) == static_cast<double>(hits) / static_cast<double>(n));
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(acc_at_top1({}), DataError);
        std::vector<Outcome> o = {outcome({"a"}, {})};
        CHECK_THROWS_AS(acc_at_top1(o), DataError);
    }
}

TEST_CASE("statements") {
    CHECK(split_statements("One two. Three four! Five six? Seven") ==
          std::vector<std::string>{"One two.", "Three four!", "Five six?", "Seven"});
    CHECK(split_statements("Version 2.5 is out. Yes.") == std::vector<std::string>{"Version 2.5 is out.", "Yes."});
    CHECK(split_statements(" ... . ").empty());
    CHECK(split_statements("").empty());
    CHECK(normalize_statement("  Hello,   World!\n") == "hello world");
    CHECK(normalize_statement("A-B c") == "ab c");
}

TEST_CASE("faithfulness under the mock judge") {
    MockJudge judge;
    const std::vector<std::string> contexts = {"The union schema merges profile fields. It updates nightly.",
                                               "Exports run from the timeline panel."};
    SUBCASE("four statements, three contained") {
        const std::string response =
            "The union schema merges profile fields. It updates nightly. Exports run from the timeline panel. "
            "Layers can be locked.";
        // Manual check: statements 1-3 appear in a context, statement 4 does not.
        CHECK(split_statements(response).size() == 4);
        CHECK(faithfulness(response, contexts, judge) == 0.75);
    }
    SUBCASE("verbatim copy") { CHECK(faithfulness(contexts[0], contexts, judge) == 1.0); }
    SUBCASE("no overlap") { CHECK(faithfulness("Quantum widgets hum softly.", contexts, judge) == 0.0); }
    SUBCASE("case and punctuation do not matter") {
        CHECK(faithfulness("the UNION schema, merges profile fields!", contexts, judge) == 1.0);
    }
    SUBCASE("empty response") { CHECK_THROWS_AS(faithfulness("", contexts, judge), DataError); }
}

TEST_CASE("relevancy under the mock judge") {
    MockJudge judge;
    CHECK(relevancy("merge layers", "merge layers", judge) == 10.0);
    CHECK(relevancy("merge layers", "export video", judge) == 1.0);
    // Jaccard {merge, layers} vs {merge, photos} = 1/3.
    CHECK(relevancy("merge layers", "Merge photos.", judge) == doctest::Approx(4.0));
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const auto a = fedrag::testing::words(static_cast<std::size_t>(rng.between(1, 6)), "a");
        const auto b = fedrag::testing::words(static_cast<std::size_t>(rng.between(1, 6)), "a");
        const double r = relevancy(a, b, judge);
        CHECK(r >= 1.0);
        CHECK(r <= 10.0);
    }
}

TEST_CASE("remote judge") {
    std::vector<json> requests;
    fedrag::testing::MockServer server("/judge", [&](const json& req) {
        requests.push_back(req);
        if (req["kind"] == "relevancy") return std::pair<int, json>{200, {{"score", 7.5}}};
        const bool ok = req["response"].get<std::string>().find("good") != std::string::npos;
        return std::pair<int, json>{200, {{"score", ok ? 1.0 : 0.0}}};
    });
    RemoteJudge judge(server.url());
    CHECK(relevancy("q", "r", judge) == 7.5);
    CHECK(requests.back()["kind"] == "relevancy");
    CHECK(requests.back()["query"] == "q");

    const std::vector<std::string> ctx = {"context one"};
    CHECK(faithfulness("A good one. A bad one. Another good one. Bad.", ctx, judge) == 0.5);
    CHECK(requests.back()["kind"] == "faithfulness");
    CHECK(requests.back()["contexts"] == json::array({"context one"}));

    fedrag::testing::MockServer wild("/judge", [](const json&) { return std::pair<int, json>{200, {{"score", 11}}}; });
    CHECK_THROWS_AS(relevancy("q", "r", RemoteJudge(wild.url())), RemoteError);
    fedrag::testing::MockServer broken("/judge", [](const json&) { return std::pair<int, json>{500, {}}; });
    CHECK_THROWS_AS(relevancy("q", "r", RemoteJudge(broken.url())), RemoteError);
}

TEST_CASE("extractive response") {
    std::vector<PromptContext> ctx = {{"a", "A", "First sentence. Second one! Third?"}, {"b", "B", "Other."}};
    CHECK(extractive_response(ctx) == "First sentence. Second one!");
    CHECK(extractive_response(ctx, 1) == "First sentence.");
    CHECK_FALSE(extractive_response({}).empty());
}

TEST_CASE("methods and config validation") {
    for (auto m : {Method::mkpqa, Method::uis, Method::rfs, Method::lfs}) CHECK(parse_method(method_name(m)) == m);
    CHECK_THROWS_AS(parse_method("bm25"), UsageError);

    BenchmarkConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.methods.push_back(Method::lfs);
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg.mock = true;
    CHECK_NOTHROW(cfg.validate());
    cfg = {};
    cfg.quality = true;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg.judge_url = "http://127.0.0.1:9";
    CHECK_NOTHROW(cfg.validate());
    cfg = {};
    cfg.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = {};
    cfg.corpus_dir = "corpus";
    CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("mean_std and latency summary") {
    const std::vector<double> v = {2, 4, 4, 4, 5, 5, 7, 9};
    const auto ms = mean_std(v);
    CHECK(ms.mean == 5.0);
    // Sample variance 32 / 7.
    CHECK(ms.std == doctest::Approx(std::sqrt(32.0 / 7.0)));
    const std::vector<double> one = {3.0};
    CHECK(mean_std(one).std == 0.0);

    auto s = summarize_latency({5, 1, 4, 2, 3});
    CHECK(s.samples == 5);
    CHECK(s.p50_ms == 3.0);
    CHECK(s.max_ms == 5.0);
    CHECK(s.p95_ms == doctest::Approx(4.8));
}

TEST_CASE("split_queries") {
    std::vector<QueryRecord> q;
    for (int i = 0; i < 50; ++i) q.push_back({"query " + std::to_string(i), {0}, {"p"}, {"n"}});
    auto [train, test] = split_queries(q, 0.2, 3);
    CHECK(test.size() == 10);
    CHECK(train.size() == 40);
    std::set<std::string> train_texts;
    for (const auto& r : train) train_texts.insert(r.text);
    for (const auto& r : test) CHECK(train_texts.count(r.text) == 0);

    auto again = split_queries(q, 0.2, 3);
    CHECK(again.second.size() == test.size());
    for (std::size_t i = 0; i < test.size(); ++i) CHECK(again.second[i].text == test[i].text);
    auto other = split_queries(q, 0.2, 4);
    bool differs = false;
    for (std::size_t i = 0; i < test.size(); ++i) differs |= other.second[i].text != test[i].text;
    CHECK(differs);
    CHECK_THROWS_AS(split_queries(std::span(q).first(1), 0.2, 0), DataError);
}

TEST_CASE("run_benchmark") {
    auto cfg = tiny_benchmark();
    cfg.methods = {Method::mkpqa, Method::uis, Method::rfs, Method::lfs};
    cfg.mock = true;
    cfg.quality = true;
    const auto run = run_benchmark(cfg);
    const auto& report = run.report;
    REQUIRE(report.seeds.size() == 2);
    for (const auto& s : report.seeds) {
        CHECK(s.train_queries + s.test_queries == 3 * 20 + 3 * 5);
        CHECK(s.methods.size() == 4);
        for (const auto& [name, m] : s.methods) {
            for (double v : {m.acc_uni, m.acc_cross, m.acc_all}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(m.uni_queries + m.cross_queries == s.test_queries);
            REQUIRE(m.relevancy.has_value());
            CHECK(*m.relevancy >= 1.0);
            CHECK(*m.relevancy <= 10.0);
            REQUIRE(m.faithfulness.has_value());
            CHECK(*m.faithfulness >= 0.0);
            CHECK(*m.faithfulness <= 1.0);
        }
        CHECK(s.methods.at("uis").mean_active_domains == 3.0);
        CHECK(s.methods.at("rfs").mean_active_domains == 1.0);
        CHECK(s.methods.at("mkpqa").mean_active_domains >= 1.0);
    }
    CHECK(report.aggregate.at("mkpqa").count("acc_cross") == 1);
    CHECK(run.timing.at("uis").samples == report.seeds[0].test_queries + report.seeds[1].test_queries);

    const auto doc = report.to_json();
    CHECK(doc.contains("config"));
    CHECK(doc["per_seed"].size() == 2);
    CHECK(doc["aggregate"]["rfs"]["acc_all"].contains("std"));
    const auto csv = report.to_csv();
    CHECK(csv.rfind("method,metric,mean,std\n", 0) == 0);
    CHECK(csv.find("\nmkpqa,acc_cross,") != std::string::npos);

    SUBCASE("identical seeds give an identical report") {
        CHECK(run_benchmark(cfg).report.to_json().dump() == doc.dump());
    }
}

TEST_CASE("latency benchmark") {
    LatencyConfig cfg;
    cfg.chunks_per_domain = 500;
    cfg.dimension = 32;
    cfg.queries = 20;
    const auto r = run_latency_benchmark(cfg);
    CHECK(r.summary.samples == 20);
    CHECK(r.summary.p50_ms > 0.0);
    CHECK(r.summary.p50_ms <= r.summary.max_ms);
    CHECK(r.mean_active_domains == 3.0);
    const auto doc = r.to_json();
    CHECK(doc.contains("median_ms"));
}
