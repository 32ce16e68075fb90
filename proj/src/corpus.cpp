#include "fedrag/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "fedrag/error.hpp"
#include "fedrag/io.hpp"

namespace fedrag {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (true) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string join_lines(const std::vector<std::string_view>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i > 0) out += '\n';
        out += lines[i];
    }
    return out;
}

struct Separator {
    std::string_view pattern;
    // Leading characters of the pattern that stay attached to the piece.
    std::size_t keep;
};

constexpr Separator kSeparators[] = {{"\n\n", 0}, {"\n", 0}, {". ", 1}, {" ", 0}};
constexpr std::size_t kSeparatorCount = std::size(kSeparators);

void hard_cut(std::string_view text, std::size_t max_tokens, std::vector<TextPiece>& out) {
    struct Span {
        std::size_t begin, end;
    };
    std::vector<Span> tokens;
    for (std::size_t i = 0; i < text.size();) {
        if (is_space(text[i])) {
            ++i;
            continue;
        }
        const std::size_t b = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        tokens.push_back({b, i});
    }
    if (tokens.empty()) {
        out.push_back({std::string(text), ""});
        return;
    }
    for (std::size_t t = 0; t < tokens.size(); t += max_tokens) {
        const std::size_t last = std::min(t + max_tokens, tokens.size()) - 1;
        const std::size_t begin = t == 0 ? 0 : tokens[t].begin;
        const std::size_t end = tokens[last].end;
        const std::size_t next = last + 1 < tokens.size() ? tokens[last + 1].begin : text.size();
        out.push_back({std::string(text.substr(begin, end - begin)), std::string(text.substr(end, next - end))});
    }
}

void split_into(std::string_view text, std::size_t level, std::size_t max_tokens, std::vector<TextPiece>& out) {
    if (count_tokens(text) <= max_tokens) {
        out.push_back({std::string(text), ""});
        return;
    }
    while (level < kSeparatorCount && text.find(kSeparators[level].pattern) == std::string_view::npos) ++level;
    if (level == kSeparatorCount) {
        hard_cut(text, max_tokens, out);
        return;
    }

    const auto& sep = kSeparators[level];
    std::vector<TextPiece> parts;
    std::size_t start = 0;
    while (true) {
        const auto hit = text.find(sep.pattern, start);
        if (hit == std::string_view::npos) {
            parts.push_back({std::string(text.substr(start)), ""});
            break;
        }
        parts.push_back({std::string(text.substr(start, hit - start + sep.keep)),
                         std::string(sep.pattern.substr(sep.keep))});
        start = hit + sep.pattern.size();
    }

    // Greedy merge of neighbouring parts. Separators are whitespace, so token
    // counts add up across a join.
    std::string current;
    std::string pending_sep;
    std::size_t current_tokens = 0;
    bool open = false;
    auto flush = [&] {
        if (open) out.push_back({std::move(current), std::move(pending_sep)});
        current.clear();
        pending_sep.clear();
        current_tokens = 0;
        open = false;
    };

    for (auto& part : parts) {
        const std::size_t part_tokens = count_tokens(part.text);
        if (part_tokens > max_tokens) {
            flush();
            split_into(part.text, level + 1, max_tokens, out);
            out.back().separator += part.separator;
            continue;
        }
        if (open && current_tokens + part_tokens <= max_tokens) {
            current += pending_sep;
            current += part.text;
            current_tokens += part_tokens;
            pending_sep = std::move(part.separator);
            continue;
        }
        flush();
        current = std::move(part.text);
        pending_sep = std::move(part.separator);
        current_tokens = part_tokens;
        open = true;
    }
    flush();
}

}  // namespace

// ---------------------------------------------------------------------------
// DomainRegistry

DomainRegistry::DomainRegistry(std::vector<Domain> domains) : domains_(std::move(domains)) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < domains_.size(); ++i) {
        domains_[i].id = i;
        if (domains_[i].name.empty()) throw DataError("domain " + std::to_string(i) + " has an empty name");
        if (!seen.insert(domains_[i].name).second) throw DataError("duplicate domain name '" + domains_[i].name + "'");
    }
}

const Domain& DomainRegistry::at(DomainId id) const {
    if (id >= domains_.size()) throw DataError("domain id " + std::to_string(id) + " out of range");
    return domains_[id];
}

std::optional<DomainId> DomainRegistry::find(std::string_view name) const {
    for (const auto& d : domains_) {
        if (d.name == name) return d.id;
    }
    return std::nullopt;
}

std::vector<std::string> DomainRegistry::names() const {
    std::vector<std::string> out;
    out.reserve(domains_.size());
    for (const auto& d : domains_) out.push_back(d.name);
    return out;
}

json DomainRegistry::to_json() const {
    json arr = json::array();
    for (const auto& d : domains_) arr.push_back({{"name", d.name}, {"description", d.description}});
    return {{"domains", arr}};
}

DomainRegistry DomainRegistry::from_json(const json& doc) {
    if (!doc.contains("domains") || !doc["domains"].is_array()) throw DataError("domain list needs a 'domains' array");
    std::vector<Domain> domains;
    for (const auto& d : doc["domains"]) {
        Domain dom;
        dom.name = d.at("name").get<std::string>();
        dom.description = d.value("description", "");
        domains.push_back(std::move(dom));
    }
    if (domains.empty()) throw DataError("domain list is empty");
    return DomainRegistry(std::move(domains));
}

DomainRegistry DomainRegistry::load(const fs::path& path) {
    try {
        return from_json(io::read_json(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void DomainRegistry::save(const fs::path& path) const { io::write_json_atomic(path, to_json()); }

// ---------------------------------------------------------------------------
// Tokens and splitting

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

std::vector<std::string_view> split_tokens(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t b = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > b) out.push_back(text.substr(b, i - b));
    }
    return out;
}

bool is_header_line(std::string_view line) { return !line.empty() && line.front() == '#'; }

std::string strip_header_lines(std::string_view body) {
    std::vector<std::string_view> kept;
    for (auto line : split_lines(body)) {
        if (!is_header_line(line)) kept.push_back(line);
    }
    return join_lines(kept);
}

std::vector<Section> segment_by_headers(const SourcePage& page) {
    struct Open {
        std::size_t level;
        std::string title;
    };
    std::vector<Open> stack;
    std::vector<Section> sections;
    std::vector<std::string_view> lines;

    auto current_path = [&] {
        std::vector<std::string> path;
        for (const auto& o : stack) path.push_back(o.title);
        return path;
    };
    auto emit = [&] {
        if (!lines.empty()) sections.push_back({current_path(), join_lines(lines)});
        lines.clear();
    };

    for (auto line : split_lines(page.body)) {
        if (!is_header_line(line)) {
            lines.push_back(line);
            continue;
        }
        emit();
        std::size_t level = 0;
        while (level < line.size() && line[level] == '#') ++level;
        while (!stack.empty() && stack.back().level >= level) stack.pop_back();
        stack.push_back({level, std::string(trim(line.substr(level)))});
    }
    emit();
    if (sections.empty()) sections.push_back({current_path(), ""});
    return sections;
}

std::vector<TextPiece> recursive_split(std::string_view text, std::size_t max_tokens) {
    if (max_tokens == 0) throw UsageError("max_tokens must be at least 1");
    std::vector<TextPiece> raw;
    split_into(text, 0, max_tokens, raw);

    // Fold whitespace-only pieces into a neighbour so every piece (except a
    // blank input) carries at least one token.
    std::vector<TextPiece> pieces;
    std::string carry;
    for (auto& p : raw) {
        if (count_tokens(p.text) == 0) {
            if (!pieces.empty()) {
                pieces.back().separator += p.text + p.separator;
            } else {
                carry += p.text + p.separator;
            }
            continue;
        }
        p.text = carry + p.text;
        carry.clear();
        pieces.push_back(std::move(p));
    }
    if (pieces.empty()) pieces.push_back({carry, ""});
    return pieces;
}

// ---------------------------------------------------------------------------
// Pages and chunks

std::vector<Chunk> chunk_page(const SourcePage& page, std::size_t max_tokens) {
    if (trim(page.body).empty()) throw DataError("empty page");
    const std::string flat = strip_header_lines(page.body);

    struct Located {
        std::size_t begin, end;
        std::vector<std::string> path;
    };
    std::vector<Located> spans;
    std::size_t section_offset = 0;
    for (const auto& section : segment_by_headers(page)) {
        std::size_t offset = section_offset;
        for (const auto& piece : recursive_split(section.text, max_tokens)) {
            if (count_tokens(piece.text) > 0) spans.push_back({offset, offset + piece.text.size(), section.path});
            offset += piece.text.size() + piece.separator.size();
        }
        section_offset += section.text.size() + 1;
    }
    if (spans.empty()) throw DataError("empty page");
    spans.front().begin = 0;

    std::vector<Chunk> chunks;
    chunks.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto& s = spans[i];
        const std::size_t next = i + 1 < spans.size() ? spans[i + 1].begin : flat.size();
        Chunk c;
        c.ordinal = i;
        c.id = page.url + "#" + std::to_string(i);
        c.domain = page.domain;
        c.url = page.url;
        c.title = page.title;
        c.section_path = s.path;
        c.text = flat.substr(s.begin, s.end - s.begin);
        c.separator = flat.substr(s.end, next - s.end);
        c.token_count = count_tokens(c.text);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

std::string reconstruct_page(const std::vector<Chunk>& page_chunks) {
    std::string out;
    for (const auto& c : page_chunks) {
        out += c.text;
        out += c.separator;
    }
    return out;
}

std::size_t Corpus::total_chunks() const {
    std::size_t n = 0;
    for (const auto& d : by_domain) n += d.size();
    return n;
}

const Chunk* Corpus::find(std::string_view chunk_id) const {
    for (const auto& d : by_domain) {
        for (const auto& c : d) {
            if (c.id == chunk_id) return &c;
        }
    }
    return nullptr;
}

SourcePage parse_page(std::string_view content, const DomainRegistry& domains, const std::string& origin) {
    static constexpr std::string_view keys[] = {"url:", "title:", "domain:"};
    SourcePage page;
    std::size_t pos = 0;
    std::string values[3];
    for (std::size_t line_no = 0; line_no < 3; ++line_no) {
        const auto nl = content.find('\n', pos);
        if (nl == std::string_view::npos) {
            throw DataError(origin + ":" + std::to_string(line_no + 1) + ": truncated page header");
        }
        auto line = content.substr(pos, nl - pos);
        if (!line.starts_with(keys[line_no])) {
            throw DataError(origin + ":" + std::to_string(line_no + 1) + ": expected '" + std::string(keys[line_no]) +
                            "'");
        }
        values[line_no] = std::string(trim(line.substr(keys[line_no].size())));
        pos = nl + 1;
    }
    const auto nl = content.find('\n', pos);
    const auto blank = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!trim(blank).empty()) throw DataError(origin + ":4: expected a blank line after the page header");
    if (values[0].empty()) throw DataError(origin + ":1: empty url");

    const auto id = domains.find(values[2]);
    if (!id) {
        std::string known;
        for (const auto& n : domains.names()) known += (known.empty() ? "" : ", ") + n;
        throw DataError(origin + ":3: unknown domain '" + values[2] + "' (known: " + known + ")");
    }
    page.url = values[0];
    page.title = values[1];
    page.domain = *id;
    page.body = nl == std::string_view::npos ? std::string() : std::string(content.substr(nl + 1));
    return page;
}

std::string format_page(const SourcePage& page, const DomainRegistry& domains) {
    return "url: " + page.url + "\ntitle: " + page.title + "\ndomain: " + domains.at(page.domain).name + "\n\n" +
           page.body;
}

Corpus make_corpus(DomainRegistry domains, std::vector<Chunk> chunks) {
    Corpus corpus;
    corpus.by_domain.resize(domains.size());
    for (auto& c : chunks) {
        if (c.domain >= domains.size()) throw DataError("chunk " + c.id + " has unknown domain id");
        corpus.by_domain[c.domain].push_back(std::move(c));
    }
    for (auto& list : corpus.by_domain) {
        std::sort(list.begin(), list.end(), [](const Chunk& a, const Chunk& b) {
            return a.url != b.url ? a.url < b.url : a.ordinal < b.ordinal;
        });
    }
    corpus.domains = std::move(domains);
    return corpus;
}

Corpus load_corpus(const fs::path& dir, std::size_t max_tokens) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
    auto domains = DomainRegistry::load(dir / "domains.json");

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_regular_file() || name == "domains.json" || name.starts_with(".")) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<Chunk> all;
    std::map<std::string, std::string> url_owner;
    for (const auto& file : files) {
        const auto page = parse_page(io::read_file(file), domains, file.string());
        auto [it, fresh] = url_owner.emplace(page.url, file.string());
        if (!fresh) throw DataError(file.string() + ":1: url '" + page.url + "' already defined in " + it->second);
        try {
            auto chunks = chunk_page(page, max_tokens);
            std::move(chunks.begin(), chunks.end(), std::back_inserter(all));
        } catch (const DataError& e) {
            throw DataError(file.string() + ": " + e.what());
        }
    }
    return make_corpus(std::move(domains), std::move(all));
}

json chunk_to_json(const Chunk& c) {
    return {{"id", c.id},
            {"domain", c.domain},
            {"url", c.url},
            {"title", c.title},
            {"section_path", c.section_path},
            {"text", c.text},
            {"token_count", c.token_count},
            {"ordinal", c.ordinal},
            {"separator", c.separator}};
}

Chunk chunk_from_json(const json& r) {
    Chunk c;
    c.id = r.at("id").get<std::string>();
    c.domain = r.at("domain").get<DomainId>();
    c.url = r.at("url").get<std::string>();
    c.title = r.value("title", "");
    c.section_path = r.value("section_path", std::vector<std::string>{});
    c.text = r.at("text").get<std::string>();
    c.token_count = r.value("token_count", count_tokens(c.text));
    c.ordinal = r.value("ordinal", std::size_t{0});
    c.separator = r.value("separator", "");
    return c;
}

void write_chunks(const fs::path& path, const Corpus& corpus) {
    std::vector<json> records;
    for (const auto& list : corpus.by_domain) {
        for (const auto& c : list) records.push_back(chunk_to_json(c));
    }
    io::write_jsonl_atomic(path, records);
}

Corpus read_chunks(const fs::path& path, DomainRegistry domains) {
    std::vector<Chunk> chunks;
    std::size_t line = 0;
    for (const auto& r : io::read_jsonl(path)) {
        ++line;
        try {
            chunks.push_back(chunk_from_json(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
        }
    }
    return make_corpus(std::move(domains), std::move(chunks));
}

}  // namespace fedrag
