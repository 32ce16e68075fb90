#include <doctest.h>

#include <algorithm>

#include "fedrag/embedding.hpp"
#include "fedrag/error.hpp"
#include "support/fixtures.hpp"
#include "support/mock_server.hpp"

using namespace fedrag;
using nlohmann::json;

namespace {

EmbedderConfig hashed(std::size_t d = 256, std::uint64_t seed = 0) {
    EmbedderConfig c;
    c.dimension = d;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("similarity") {
    EmbeddingVector a(2), b(2);
    a << 0.6, 0.8;
    b << 0.8, 0.6;
    // 0.6 * 0.8 + 0.8 * 0.6
    CHECK(similarity(a, b) == doctest::Approx(0.96).epsilon(1e-12));
    CHECK(similarity(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    EmbeddingVector x(2), y(2);
    x << 1.0, 0.0;
    y << 0.0, 1.0;
    CHECK(std::abs(similarity(x, y)) < 1e-12);
    CHECK_THROWS_AS(similarity(a, EmbeddingVector::Zero(3)), DataError);
}

TEST_CASE("similarity is bilinear") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto q = fedrag::testing::random_vector(rng, 16);
        const auto d = fedrag::testing::random_vector(rng, 16);
        const double alpha = rng.uniform() * 10.0 - 5.0;
        CHECK(similarity(alpha * q, d) == doctest::Approx(alpha * similarity(q, d)).epsilon(1e-9));
    }
}

TEST_CASE("normalize_l2 and normalize_word") {
    EmbeddingVector v(3);
    v << 3.0, 0.0, 4.0;
    normalize_l2(v);
    CHECK(v.norm() == doctest::Approx(1.0));
    CHECK(v[0] == doctest::Approx(0.6));
    EmbeddingVector z = EmbeddingVector::Zero(3);
    normalize_l2(z);
    CHECK(z.isZero());

    CHECK(normalize_word("Schema,") == "schema");
    CHECK(normalize_word("(Union)") == "union");
    CHECK(normalize_word("...") == "...");
}

TEST_CASE("hashed embedder") {
    HashedEmbedder e(hashed());
    SUBCASE("deterministic and normalized") {
        const auto a = e.embed("abc");
        const auto b = e.embed("abc");
        CHECK(a == b);
        CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(a.size() == 256);
        CHECK(a.allFinite());
    }
    SUBCASE("word order does not matter") {
        Rng rng(9);
        std::vector<std::string> w = {"merge", "layers", "export", "union", "schema", "profile", "audience"};
        for (int i = 0; i < 20; ++i) {
            auto shuffled = w;
            rng.shuffle(shuffled);
            std::string a, b;
            for (const auto& s : w) a += s + " ";
            for (const auto& s : shuffled) b += s + " ";
            CHECK(similarity(e.embed(a), e.embed(b)) >= 0.99);
        }
    }
    SUBCASE("case and punctuation are folded") {
        CHECK(similarity(e.embed("Union Schema?"), e.embed("union schema")) == doctest::Approx(1.0));
    }
    SUBCASE("related texts score above unrelated ones") {
        const auto q = e.embed("create a union schema");
        CHECK(similarity(q, e.embed("the union schema merges profiles")) >
              similarity(q, e.embed("crop an image layer")));
    }
    SUBCASE("empty text") {
        CHECK_THROWS_AS(e.embed(""), DataError);
        CHECK_THROWS_AS(e.embed("   "), DataError);
    }
    SUBCASE("batch preserves order and names the failing position") {
        std::vector<std::string> texts = {"one", "two", "three"};
        auto out = e.embed_batch(texts);
        REQUIRE(out.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == e.embed(texts[i]));
        texts[1] = "";
        try {
            e.embed_batch(texts);
            FAIL("expected an error");
        } catch (const DataError& err) {
            CHECK(std::string(err.what()).find("text 1") != std::string::npos);
        }
    }
    SUBCASE("unnormalized output") {
        auto cfg = hashed();
        cfg.normalize = false;
        HashedEmbedder raw(cfg);
        CHECK(raw.embed("a b c d").norm() > 1.0);
    }
}

TEST_CASE("embedder config") {
    CHECK_THROWS_AS(hashed(7).validate(), UsageError);
    CHECK_NOTHROW(hashed(8).validate());
    CHECK(hashed(256, 0).fingerprint() != hashed(256, 1).fingerprint());
    CHECK(hashed(256, 0).fingerprint() != hashed(512, 0).fingerprint());
    auto cfg = hashed(64, 5);
    auto back = EmbedderConfig::from_json(cfg.to_json());
    CHECK(back.fingerprint() == cfg.fingerprint());

    EmbedderConfig remote;
    remote.backend = EmbedderBackend::remote;
    CHECK_THROWS_AS(remote.validate(), UsageError);
}

TEST_CASE("remote embedder") {
    using fedrag::testing::MockServer;
    MockServer server("/embed", [](const json& req) {
        json vectors = json::array();
        for (const auto& t : req.at("texts")) {
            std::vector<double> v(8, 0.0);
            v[0] = static_cast<double>(t.get<std::string>().size());
            v[1] = 1.0;
            vectors.push_back(v);
        }
        return std::pair<int, json>{200, {{"vectors", vectors}}};
    });
    EmbedderConfig cfg;
    cfg.backend = EmbedderBackend::remote;
    cfg.dimension = 8;
    cfg.remote_url = server.url();
    cfg.remote_batch_size = 2;
    RemoteEmbedder e(cfg);

    std::vector<std::string> texts = {"a", "bbb", "cc", "dddd", "e"};
    auto out = e.embed_batch(texts);
    REQUIRE(out.size() == texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const double n = static_cast<double>(texts[i].size());
        CHECK(out[i][0] == doctest::Approx(n / std::sqrt(n * n + 1.0)));
        CHECK(out[i].norm() == doctest::Approx(1.0));
    }
    CHECK(server.calls() == 3);
    CHECK(e.embed("bbb") == out[1]);

    SUBCASE("dimension mismatch") {
        auto bad = cfg;
        bad.dimension = 16;
        CHECK_THROWS_AS(RemoteEmbedder(bad).embed("a"), RemoteError);
    }
}

TEST_CASE("remote embedder failures carry the HTTP status") {
    using fedrag::testing::MockServer;
    MockServer server("/embed", [](const json&) { return std::pair<int, json>{503, {{"error", "busy"}}}; });
    EmbedderConfig cfg;
    cfg.backend = EmbedderBackend::remote;
    cfg.dimension = 8;
    cfg.remote_url = server.url();
    try {
        RemoteEmbedder(cfg).embed("a");
        FAIL("expected an error");
    } catch (const RemoteError& e) {
        CHECK(e.http_status() == 503);
        CHECK(e.exit_code() == 4);
    }

    cfg.remote_url = "http://127.0.0.1:1";
    cfg.timeout_ms = 500;
    try {
        RemoteEmbedder(cfg).embed("a");
        FAIL("expected an error");
    } catch (const RemoteError& e) {
        CHECK(e.http_status() == 0);
    }
}
