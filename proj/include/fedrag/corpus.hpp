#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fedrag {

using DomainId = std::size_t;

struct Domain {
    DomainId id = 0;
    std::string name;
    std::string description;
};

/// Dense, name-unique list of product domains. Ids are positions.
class DomainRegistry {
public:
    DomainRegistry() = default;
    explicit DomainRegistry(std::vector<Domain> domains);

    std::size_t size() const { return domains_.size(); }
    const Domain& at(DomainId id) const;
    const std::vector<Domain>& all() const { return domains_; }
    std::optional<DomainId> find(std::string_view name) const;
    std::vector<std::string> names() const;

    nlohmann::json to_json() const;
    static DomainRegistry from_json(const nlohmann::json& doc);
    static DomainRegistry load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::vector<Domain> domains_;
};

struct SourcePage {
    std::string url;
    std::string title;
    DomainId domain = 0;
    std::string body;
};

struct Section {
    std::vector<std::string> path;
    std::string text;

    bool operator==(const Section&) const = default;
};

/// A split piece plus the separator text consumed after it. Concatenating
/// `text + separator` over all pieces reproduces the split input.
struct TextPiece {
    std::string text;
    std::string separator;

    bool operator==(const TextPiece&) const = default;
};

struct Chunk {
    std::string id;
    DomainId domain = 0;
    std::string url;
    std::string title;
    std::vector<std::string> section_path;
    std::string text;
    std::size_t token_count = 0;
    std::size_t ordinal = 0;
    /// Body text between this chunk and the next one (header lines removed).
    std::string separator;
};

inline constexpr std::size_t kDefaultMaxTokens = 512;

/// Number of whitespace-delimited tokens.
std::size_t count_tokens(std::string_view text);

/// Whitespace-delimited tokens, in order.
std::vector<std::string_view> split_tokens(std::string_view text);

bool is_header_line(std::string_view line);

/// Non-header lines of `body` joined with '\n'.
std::string strip_header_lines(std::string_view body);

/// One section per header scope that owns at least one line. Joining the
/// section texts with '\n' equals strip_header_lines(body).
std::vector<Section> segment_by_headers(const SourcePage& page);

/// Recursive splitter over ["\n\n", "\n", ". ", " "] with a hard token cut
/// as the last resort. Every piece has at most max_tokens tokens.
std::vector<TextPiece> recursive_split(std::string_view text, std::size_t max_tokens);

std::vector<Chunk> chunk_page(const SourcePage& page, std::size_t max_tokens = kDefaultMaxTokens);

/// Inverse of chunking for one page: concatenation of text + separator.
std::string reconstruct_page(const std::vector<Chunk>& page_chunks);

struct Corpus {
    DomainRegistry domains;
    /// by_domain[d] sorted by (url, ordinal).
    std::vector<std::vector<Chunk>> by_domain;

    std::size_t total_chunks() const;
    const Chunk* find(std::string_view chunk_id) const;
};

/// Parses the page file format: `url:`, `title:`, `domain:` lines, a blank
/// line, then the body. `origin` is used in error messages.
SourcePage parse_page(std::string_view content, const DomainRegistry& domains, const std::string& origin);
std::string format_page(const SourcePage& page, const DomainRegistry& domains);

/// Reads `domains.json` plus every other regular file in `dir` as a page.
Corpus load_corpus(const std::filesystem::path& dir, std::size_t max_tokens = kDefaultMaxTokens);

/// Groups chunks by domain and applies the canonical ordering.
Corpus make_corpus(DomainRegistry domains, std::vector<Chunk> chunks);

nlohmann::json chunk_to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& record);
void write_chunks(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_chunks(const std::filesystem::path& path, DomainRegistry domains);

}  // namespace fedrag
