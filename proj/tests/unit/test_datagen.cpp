#include <doctest.h>

#include <set>
#include <sstream>

#include "fedrag/datagen.hpp"
#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "support/fixtures.hpp"

using namespace fedrag;
using fedrag::testing::TempDir;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.pages_per_domain = 6;
    s.uni_queries_per_domain = 30;
    s.cross_queries_per_pair = 8;
    s.seed = seed;
    return s;
}

std::set<std::string> word_set(const std::string& text) {
    std::set<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.insert(w);
    return out;
}

std::string page_of(const std::string& chunk_id) { return chunk_id.substr(0, chunk_id.rfind('#')); }

/// Every regular file under `dir`, relative path -> bytes.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = io::read_file(e.path());
    }
    return out;
}

}  // namespace

TEST_CASE("spec validation and serialization") {
    SyntheticSpec s;
    CHECK_NOTHROW(s.validate());
    auto bad = s;
    bad.overlap = 1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = s;
    bad.vocab_size = 10;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = s;
    bad.domains = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = s;
    bad.negatives_per_query = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);

    auto custom = small_spec(9);
    custom.overlap = 0.4;
    auto back = SyntheticSpec::from_json(custom.to_json());
    CHECK(back.to_json() == custom.to_json());
}

TEST_CASE("generated corpus") {
    const auto spec = small_spec();
    const auto sc = generate_corpus(spec);
    CHECK(sc.corpus.domains.size() == 3);
    CHECK(sc.corpus.domains.names() == std::vector<std::string>{"atlas", "beacon", "cinder"});
    CHECK(sc.pages.size() == 18);
    CHECK(sc.corpus.total_chunks() == 18 * spec.chunks_per_page);
    CHECK(sc.shared_pool.size() == 60);
    for (const auto& v : sc.vocabularies) CHECK(v.size() == spec.vocab_size);

    for (const auto& list : sc.corpus.by_domain) {
        for (const auto& c : list) {
            CHECK(c.token_count <= kDefaultMaxTokens);
            REQUIRE(sc.concepts.count(c.id) == 1);
            CHECK(sc.concepts.at(c.id).size() + sc.topics.at(c.id).size() == 10);
        }
    }

    SUBCASE("every concept has a twin in every other domain") {
        std::map<std::set<std::string>, std::set<DomainId>> owners;
        std::map<std::set<std::string>, std::size_t> uses;
        for (const auto& list : sc.corpus.by_domain) {
            for (const auto& c : list) {
                const auto& words = sc.concepts.at(c.id);
                std::set<std::string> key(words.begin(), words.end());
                owners[key].insert(c.domain);
                ++uses[key];
            }
        }
        for (const auto& [key, domains] : owners) {
            CHECK(key.size() == 3);
            CHECK(domains.size() == 3);
            CHECK(uses[key] % 3 == 0);
        }
    }
    SUBCASE("zero overlap gives disjoint vocabularies") {
        auto s0 = spec;
        s0.overlap = 0.0;
        const auto sc0 = generate_corpus(s0);
        CHECK(sc0.shared_pool.empty());
        std::set<std::string> seen;
        std::size_t total = 0;
        for (const auto& v : sc0.vocabularies) {
            seen.insert(v.begin(), v.end());
            total += v.size();
        }
        CHECK(seen.size() == total);
        for (const auto& [id, words] : sc0.concepts) CHECK(words.empty());
    }
    SUBCASE("written corpus loads back identically") {
        TempDir dir("gen");
        sc.write(dir.path());
        auto loaded = load_corpus(dir.path());
        REQUIRE(loaded.total_chunks() == sc.corpus.total_chunks());
        for (std::size_t d = 0; d < 3; ++d) {
            for (std::size_t i = 0; i < loaded.by_domain[d].size(); ++i) {
                CHECK(loaded.by_domain[d][i].id == sc.corpus.by_domain[d][i].id);
                CHECK(loaded.by_domain[d][i].text == sc.corpus.by_domain[d][i].text);
            }
        }
        for (const auto& p : sc.pages) {
            std::vector<Chunk> chunks;
            for (const auto& c : loaded.by_domain[p.domain]) {
                if (c.url == p.url) chunks.push_back(c);
            }
            CHECK(reconstruct_page(chunks) == strip_header_lines(p.body));
        }
    }
}

TEST_CASE("generated queries") {
    const auto spec = small_spec();
    const auto sc = generate_corpus(spec);
    const auto positives = generate_queries(spec, sc);
    const auto groups = group_by_query(positives);
    CHECK(groups.size() == 3 * 30 + 3 * 8);

    std::set<std::string> texts;
    for (const auto& g : groups) {
        CHECK(texts.insert(g.text).second);
        std::set<DomainId> gold_domains;
        for (const auto& id : g.positives) {
            const auto* c = sc.corpus.find(id);
            REQUIRE(c != nullptr);
            gold_domains.insert(c->domain);
        }
        CHECK(std::vector<DomainId>(gold_domains.begin(), gold_domains.end()) == g.domains);
        if (g.cross_domain()) {
            CHECK(g.positives.size() >= 2);
            CHECK(gold_domains.size() >= 2);
        } else {
            CHECK(g.positives.size() == 1);
        }
        // The query is written from each gold chunk's topic: at least three
        // of its words come from that chunk's concept and topic words.
        const auto words = word_set(g.text);
        for (const auto& id : g.positives) {
            std::size_t hits = 0;
            for (const auto* list : {&sc.concepts.at(id), &sc.topics.at(id)}) {
                for (const auto& w : *list) hits += words.count(w);
            }
            CHECK(hits >= 3);
        }
    }

    SUBCASE("no cross-domain queries when the pair count is zero") {
        auto s = spec;
        s.cross_queries_per_pair = 0;
        for (const auto& g : group_by_query(generate_queries(s, sc))) CHECK_FALSE(g.cross_domain());
    }
}

TEST_CASE("negatives") {
    SUBCASE("enough siblings means only siblings") {
        auto spec = small_spec();
        spec.chunks_per_page = 6;
        spec.negatives_per_query = 4;
        const auto sc = generate_corpus(spec);
        for (const auto& g : group_by_query(generate_dataset(spec, sc))) {
            if (g.cross_domain()) continue;
            CHECK(g.negatives.size() == 4);
            for (const auto& id : g.negatives) CHECK(page_of(id) == page_of(g.positives[0]));
        }
    }
    SUBCASE("one sibling, then related pages of the same domain") {
        auto spec = small_spec();
        spec.chunks_per_page = 2;
        spec.negatives_per_query = 4;
        const auto sc = generate_corpus(spec);
        for (const auto& g : group_by_query(generate_dataset(spec, sc))) {
            if (g.cross_domain()) continue;
            REQUIRE(g.negatives.size() == 4);
            CHECK(page_of(g.negatives[0]) == page_of(g.positives[0]));
            const auto domain = sc.corpus.find(g.positives[0])->domain;
            for (std::size_t i = 1; i < 4; ++i) {
                CHECK(page_of(g.negatives[i]) != page_of(g.positives[0]));
                CHECK(sc.corpus.find(g.negatives[i])->domain == domain);
            }
        }
    }
    SUBCASE("negatives never repeat or overlap the gold set") {
        const auto spec = small_spec(4);
        const auto sc = generate_corpus(spec);
        for (const auto& g : group_by_query(generate_dataset(spec, sc))) {
            std::set<std::string> all(g.positives.begin(), g.positives.end());
            for (const auto& id : g.negatives) CHECK(all.insert(id).second);
            CHECK(g.negatives.size() == spec.negatives_per_query);
        }
    }
}

TEST_CASE("positive ratio of the default spec") {
    SyntheticSpec spec;
    const auto sc = generate_corpus(spec);
    const auto pairs = generate_dataset(spec, sc);
    const double ratio = positive_ratio(pairs);
    MESSAGE("positive ratio " << ratio);
    CHECK(ratio >= 0.10);
    CHECK(ratio <= 0.25);

    std::size_t pos = 0;
    for (const auto& p : pairs) pos += p.label == 1;
    CHECK(ratio == static_cast<double>(pos) / static_cast<double>(pairs.size()));
}

TEST_CASE("dataset determinism and persistence") {
    const auto spec = small_spec(12);
    TempDir a("det-a"), b("det-b");
    for (auto* dir : {&a, &b}) {
        const auto sc = generate_corpus(spec);
        sc.write(dir->path() / "corpus");
        export_dataset(generate_dataset(spec, sc), dir->path() / "dataset.jsonl");
    }
    CHECK(snapshot(a.path()) == snapshot(b.path()));

    const auto sc = generate_corpus(spec);
    const auto pairs = generate_dataset(spec, sc);
    const auto loaded = load_dataset(a / "dataset.jsonl");
    CHECK(loaded == pairs);

    const auto rec = io::read_jsonl(a / "dataset.jsonl").front();
    CHECK(rec.size() == 4);
    for (const char* key : {"query", "chunk_id", "domains", "label"}) CHECK(rec.contains(key));

    auto other = spec;
    other.seed = 13;
    CHECK(generate_dataset(other, generate_corpus(other)) != pairs);

    io::write_file_atomic(a / "bad.jsonl", "{\"query\": \"q\", \"chunk_id\": \"c\", \"domains\": [0], \"label\": 2}\n");
    CHECK_THROWS_AS(load_dataset(a / "bad.jsonl"), DataError);
}

TEST_CASE("group_by_query") {
    std::vector<QueryDocPair> pairs = {{"q1", "a", {0}, 1}, {"q2", "b", {1}, 1}, {"q1", "c", {0}, 0},
                                       {"q2", "d", {1}, 0}, {"q1", "e", {0}, 0}};
    auto groups = group_by_query(pairs);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].text == "q1");
    CHECK(groups[0].positives == std::vector<std::string>{"a"});
    CHECK(groups[0].negatives == std::vector<std::string>{"c", "e"});
    CHECK(groups[1].negatives == std::vector<std::string>{"d"});
    CHECK(positive_ratio(pairs) == doctest::Approx(0.4));
}
