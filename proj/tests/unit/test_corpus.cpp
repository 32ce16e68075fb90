#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fedrag/corpus.hpp"
#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "support/fixtures.hpp"

using namespace fedrag;
using fedrag::testing::TempDir;
using fedrag::testing::words;

namespace {

SourcePage page(std::string body, std::string url = "https://x.test/a") {
    return {std::move(url), "A page", 0, std::move(body)};
}

std::string join_pieces(const std::vector<TextPiece>& pieces) {
    std::string out;
    for (const auto& p : pieces) out += p.text + p.separator;
    return out;
}

/// Independent count: istringstream word extraction.
std::size_t oracle_count(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    std::string w;
    while (in >> w) ++n;
    return n;
}

}  // namespace

TEST_CASE("count_tokens") {
    CHECK(count_tokens("") == 0);
    CHECK(count_tokens("  \n\t ") == 0);
    CHECK(count_tokens("what is a union schema") == 5);

    Rng rng(5);
    std::string para;
    for (int i = 0; i < 600; ++i) {
        para += "tok" + std::to_string(rng.below(50));
        para += (rng.below(7) == 0) ? "\n" : (rng.below(5) == 0 ? "  " : " ");
    }
    CHECK(oracle_count(para) == 600);
    CHECK(count_tokens(para) == 600);
    CHECK(split_tokens(para).size() == 600);
}

TEST_CASE("segment_by_headers") {
    SUBCASE("two-level nesting") {
        auto s = segment_by_headers(page("# A\nx\n## B\ny"));
        REQUIRE(s.size() == 2);
        CHECK(s[0] == Section{{"A"}, "x"});
        CHECK(s[1] == Section{{"A", "B"}, "y"});
    }
    SUBCASE("no headers gives one segment") {
        auto s = segment_by_headers(page("just text\nmore text"));
        REQUIRE(s.size() == 1);
        CHECK(s[0].path.empty());
        CHECK(s[0].text == "just text\nmore text");
    }
    SUBCASE("sibling header pops deeper levels") {
        auto s = segment_by_headers(page("# A\n## B\nb\n# C\nc"));
        REQUIRE(s.size() == 2);
        CHECK(s[0].path == std::vector<std::string>{"A", "B"});
        CHECK(s[1].path == std::vector<std::string>{"C"});
    }
    SUBCASE("three-header fixture joins to the non-header body") {
        const std::string body = "# One\nalpha beta\n\ngamma\n## Two\ndelta.\n# Three\nepsilon zeta\n";
        auto s = segment_by_headers(page(body));
        CHECK(s.size() == 3);
        std::string joined;
        for (std::size_t i = 0; i < s.size(); ++i) joined += (i ? "\n" : "") + s[i].text;
        // Oracle: drop every line starting with '#'.
        std::istringstream in(body);
        std::string line, expected;
        bool first = true;
        while (std::getline(in, line)) {
            if (!line.empty() && line[0] == '#') continue;
            expected += (first ? "" : "\n") + line;
            first = false;
        }
        CHECK(joined == strip_header_lines(body));
        CHECK(joined.find("alpha beta\n\ngamma") != std::string::npos);
        CHECK(count_tokens(joined) == count_tokens(expected));
    }
}

TEST_CASE("recursive_split") {
    SUBCASE("under the limit stays whole") {
        const auto text = words(10);
        auto pieces = recursive_split(text, 512);
        REQUIRE(pieces.size() == 1);
        CHECK(pieces[0].text == text);
    }
    SUBCASE("two paragraphs split at the blank line") {
        const auto text = words(300, "a") + "\n\n" + words(300, "b");
        auto pieces = recursive_split(text, 512);
        REQUIRE(pieces.size() == 2);
        CHECK(pieces[0].text == words(300, "a"));
        CHECK(pieces[0].separator == "\n\n");
        CHECK(pieces[1].text == words(300, "b"));
        CHECK(join_pieces(pieces) == text);
    }
    SUBCASE("1300-token paragraph without periods") {
        const auto text = words(1300);
        auto pieces = recursive_split(text, 512);
        // Oracle: ceil(1300 / 512) pieces.
        CHECK(pieces.size() == (1300 + 511) / 512);
        CHECK(pieces.size() == 3);
        for (const auto& p : pieces) CHECK(count_tokens(p.text) <= 512);
        CHECK(join_pieces(pieces) == text);
    }
    SUBCASE("sentences are preferred over words") {
        const auto text = words(6, "a") + ". " + words(6, "b") + ". " + words(6, "c");
        auto pieces = recursive_split(text, 8);
        REQUIRE(pieces.size() == 3);
        CHECK(pieces[0].text.back() == '.');
        CHECK(join_pieces(pieces) == text);
    }
    SUBCASE("hard cut when a single word run exceeds the limit") {
        const std::string text = "x" + std::string(40, 'y');
        auto pieces = recursive_split(text, 1);
        CHECK(join_pieces(pieces) == text);
        for (const auto& p : pieces) CHECK(count_tokens(p.text) <= 1);
    }
    SUBCASE("zero limit is a usage error") { CHECK_THROWS_AS(recursive_split("a b", 0), UsageError); }
}

TEST_CASE("recursive_split properties on random text") {
    Rng rng(11);
    const char* seps[] = {" ", " ", " ", "  ", "\n", "\n\n", ". ", "\t"};
    for (int trial = 0; trial < 100; ++trial) {
        std::string text;
        const auto n = rng.between(1, 400);
        for (std::int64_t i = 0; i < n; ++i) {
            text += "w" + std::to_string(rng.below(1000));
            text += seps[rng.below(8)];
        }
        const auto limit = static_cast<std::size_t>(rng.between(1, 64));
        auto pieces = recursive_split(text, limit);
        CHECK(join_pieces(pieces) == text);
        std::size_t total = 0;
        for (const auto& p : pieces) {
            CHECK(count_tokens(p.text) <= limit);
            CHECK(count_tokens(p.text) >= 1);
            total += count_tokens(p.text);
        }
        CHECK(total == count_tokens(text));
    }
}

TEST_CASE("chunk_page") {
    SUBCASE("one section under the limit") {
        auto chunks = chunk_page(page("plain text here"));
        REQUIRE(chunks.size() == 1);
        CHECK(chunks[0].id == "https://x.test/a#0");
        CHECK(chunks[0].token_count == 3);
    }
    SUBCASE("nested sections") {
        auto chunks = chunk_page(page("# A\nx\n## B\ny"));
        REQUIRE(chunks.size() == 2);
        CHECK(chunks[0].section_path == std::vector<std::string>{"A"});
        CHECK(chunks[1].section_path == std::vector<std::string>{"A", "B"});
        CHECK(chunks[0].text == "x");
        CHECK(chunks[1].text == "y");
    }
    SUBCASE("one long section adds three chunks") {
        const std::string body = "# Intro\nshort opening words\n# Long\n" + words(1300);
        auto chunks = chunk_page(page(body));
        CHECK(chunks.size() == 1 + (1300 + 511) / 512);
        CHECK(chunks.size() == 4);
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            CHECK(chunks[i].ordinal == i);
            CHECK(chunks[i].token_count <= kDefaultMaxTokens);
            CHECK(chunks[i].token_count >= 1);
        }
        CHECK(reconstruct_page(chunks) == strip_header_lines(body));
    }
    SUBCASE("empty page") {
        CHECK_THROWS_AS(chunk_page(page("")), DataError);
        CHECK_THROWS_AS(chunk_page(page("# only\n## headers\n")), DataError);
    }
}

TEST_CASE("chunk_page reconstruction on random pages") {
    Rng rng(23);
    for (int trial = 0; trial < 60; ++trial) {
        std::string body;
        const auto sections = rng.between(0, 5);
        body += words(static_cast<std::size_t>(rng.between(0, 30)), "lead");
        for (std::int64_t s = 0; s < sections; ++s) {
            body += "\n" + std::string(static_cast<std::size_t>(rng.between(1, 3)), '#') + " head" + std::to_string(s);
            const auto paras = rng.between(1, 4);
            for (std::int64_t p = 0; p < paras; ++p) {
                body += (p ? "\n\n" : "\n") + words(static_cast<std::size_t>(rng.between(1, 90)), "p");
            }
        }
        if (count_tokens(strip_header_lines(body)) == 0) continue;
        const auto limit = static_cast<std::size_t>(rng.between(5, 40));
        auto chunks = chunk_page(page(body), limit);
        CHECK(reconstruct_page(chunks) == strip_header_lines(body));
        for (const auto& c : chunks) CHECK(c.token_count <= limit);
    }
}

TEST_CASE("page format round trip and errors") {
    auto reg = fedrag::testing::registry({"atlas", "beacon"});
    SourcePage p{"https://docs.test/b/1", "Title here", 1, "# H\nbody words"};
    auto text = format_page(p, reg);
    auto back = parse_page(text, reg, "p.md");
    CHECK(back.url == p.url);
    CHECK(back.title == p.title);
    CHECK(back.domain == 1);
    CHECK(back.body == p.body);

    try {
        parse_page("url: u\ntitle: t\ndomain: nowhere\n\nbody", reg, "bad.md");
        FAIL("expected an error");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.md:3") != std::string::npos);
        CHECK(msg.find("atlas") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_page("title: t\n", reg, "x.md"), DataError);
}

TEST_CASE("domain registry") {
    auto reg = fedrag::testing::registry({"atlas", "beacon", "cinder"});
    CHECK(reg.size() == 3);
    CHECK(reg.find("beacon") == std::optional<DomainId>(1));
    CHECK_FALSE(reg.find("nope").has_value());
    for (DomainId i = 0; i < reg.size(); ++i) CHECK(reg.at(i).id == i);
    CHECK_THROWS_AS(fedrag::testing::registry({"a", "a"}), DataError);
    CHECK_THROWS_AS(fedrag::testing::registry({""}), DataError);
    auto back = DomainRegistry::from_json(reg.to_json());
    CHECK(back.names() == reg.names());
}

TEST_CASE("load_corpus reads a directory deterministically") {
    TempDir dir("corpus");
    auto reg = fedrag::testing::registry({"atlas", "beacon"});
    reg.save(dir / "domains.json");
    for (int i = 0; i < 6; ++i) {
        SourcePage p{"https://docs.test/" + std::to_string(i), "T" + std::to_string(i),
                     static_cast<DomainId>(i % 2), "# S\n" + words(30 + 10 * i, "v") + "\n## T\nmore words here"};
        io::write_file_atomic(dir / ("page-" + std::to_string(5 - i) + ".md"), format_page(p, reg));
    }
    auto a = load_corpus(dir.path(), 20);
    auto b = load_corpus(dir.path(), 20);
    REQUIRE(a.by_domain.size() == 2);
    CHECK(a.total_chunks() == b.total_chunks());
    for (std::size_t d = 0; d < 2; ++d) {
        REQUIRE(a.by_domain[d].size() == b.by_domain[d].size());
        for (std::size_t i = 0; i < a.by_domain[d].size(); ++i) {
            const auto& c = a.by_domain[d][i];
            CHECK(c.id == b.by_domain[d][i].id);
            CHECK(c.text == b.by_domain[d][i].text);
            CHECK(c.domain == d);
            CHECK(c.token_count <= 20);
            if (i > 0) {
                const auto& prev = a.by_domain[d][i - 1];
                CHECK((prev.url < c.url || (prev.url == c.url && prev.ordinal < c.ordinal)));
            }
        }
    }
    CHECK(a.find("https://docs.test/0#0") != nullptr);

    SUBCASE("chunks round trip through JSON lines") {
        write_chunks(dir / "chunks.jsonl", a);
        auto c = read_chunks(dir / "chunks.jsonl", reg);
        REQUIRE(c.total_chunks() == a.total_chunks());
        for (std::size_t d = 0; d < 2; ++d) {
            for (std::size_t i = 0; i < a.by_domain[d].size(); ++i) {
                CHECK(c.by_domain[d][i].id == a.by_domain[d][i].id);
                CHECK(c.by_domain[d][i].section_path == a.by_domain[d][i].section_path);
                CHECK(c.by_domain[d][i].token_count == a.by_domain[d][i].token_count);
            }
        }
        auto rec = io::read_jsonl(dir / "chunks.jsonl").front();
        for (const char* key : {"id", "domain", "url", "title", "section_path", "text", "token_count"}) {
            CHECK(rec.contains(key));
        }
    }
    SUBCASE("unknown domain names the file") {
        io::write_file_atomic(dir / "zz.md", "url: u\ntitle: t\ndomain: gamma\n\nbody");
        try {
            load_corpus(dir.path());
            FAIL("expected an error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("zz.md") != std::string::npos);
        }
    }
}
