#include "fedrag/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "fedrag/random.hpp"

namespace fedrag {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kThemeWords = 6;
constexpr std::size_t kTopicWords = 10;
constexpr std::size_t kMinChunkTokens = 80;
constexpr std::size_t kMaxChunkTokens = 220;
constexpr std::size_t kMinSentence = 8;
constexpr std::size_t kMaxSentence = 14;
constexpr std::size_t kDescriptionWords = 12;
constexpr int kMaxQueryAttempts = 200;

// Stream ids for Rng::derive.
constexpr std::uint64_t kVocabStream = 1;
constexpr std::uint64_t kConceptStream = 2;
constexpr std::uint64_t kCorpusStream = 100;
constexpr std::uint64_t kUniStream = 10000;
constexpr std::uint64_t kCrossStream = 20000;
constexpr std::uint64_t kNegativeStream = 30000;

const char* const kDomainNames[] = {"atlas", "beacon", "cinder", "delta", "ember", "fjord", "garnet", "harbor"};

const char* const kQuestionPrefixes[] = {"how do i", "what is", "why does", "where can i find", "how to",
                                         "can i", "help with", "steps for"};

std::string domain_name(std::size_t j) {
    if (j < std::size(kDomainNames)) return kDomainNames[j];
    return "domain-" + std::to_string(j);
}

std::string pseudo_word(Rng& rng) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    const auto syllables = rng.between(2, 4);
    std::string w;
    for (std::int64_t i = 0; i < syllables; ++i) {
        w.push_back(consonants[rng.below(consonants.size())]);
        w.push_back(vowels[rng.below(vowels.size())]);
    }
    return w;
}

/// k distinct elements of `pool` in random order.
std::vector<std::string> sample_distinct(const std::vector<std::string>& pool, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    k = std::min(k, idx.size());
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
    return out;
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) { return pool[rng.below(pool.size())]; }

std::string paragraph(const std::vector<std::string>& topic, const std::vector<std::string>& theme,
                      const std::vector<std::string>& vocab, Rng& rng) {
    const auto total = static_cast<std::size_t>(rng.between(kMinChunkTokens, kMaxChunkTokens));
    std::string out;
    std::size_t written = 0;
    while (written < total) {
        const auto len = std::min(total - written, static_cast<std::size_t>(rng.between(kMinSentence, kMaxSentence)));
        for (std::size_t i = 0; i < len; ++i) {
            const double r = rng.uniform();
            const auto& w = r < 0.45 ? pick(topic, rng) : r < 0.65 ? pick(theme, rng) : pick(vocab, rng);
            if (!out.empty()) out += ' ';
            out += w;
        }
        out += '.';
        written += len;
    }
    return out;
}

std::string page_url(const std::string& domain, std::size_t k) {
    std::ostringstream s;
    s << "https://docs.example.com/" << domain << "/page-" << std::setw(3) << std::setfill('0') << k;
    return s.str();
}

std::string page_key(std::string_view chunk_id) { return std::string(chunk_id.substr(0, chunk_id.rfind('#'))); }

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::size_t shared_count(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end());
    std::size_t n = 0;
    for (const auto& w : std::set<std::string>(b.begin(), b.end())) n += sa.count(w);
    return n;
}

std::size_t concept_size(const SyntheticSpec& spec) {
    return static_cast<std::size_t>(std::lround(spec.overlap * static_cast<double>(kTopicWords)));
}

struct QueryMix {
    std::size_t concept_words;
    std::size_t topic_words;
    std::size_t theme_words;
    std::size_t cue_words;
};

/// Query words for one gold chunk: its shared concept words, its own topic
/// words, page theme words, and domain cue words that need not occur in the
/// chunk at all. Missing concept words are made up with topic words.
std::vector<std::string> chunk_words(const SyntheticCorpus& sc, const Chunk& c, QueryMix mix, Rng& rng) {
    const auto& concept_pool = sc.concepts.at(c.id);
    auto words = sample_distinct(concept_pool, mix.concept_words, rng);
    const auto topic_n = mix.topic_words + (mix.concept_words - words.size());
    for (auto& w : sample_distinct(sc.topics.at(c.id), topic_n, rng)) words.push_back(std::move(w));
    for (auto& w : sample_distinct(sc.themes.at(c.url), mix.theme_words, rng)) words.push_back(std::move(w));
    const auto& vocab = sc.vocabularies[c.domain];
    const std::vector<std::string> own(vocab.begin() + static_cast<std::ptrdiff_t>(sc.shared_pool.size()), vocab.end());
    for (std::size_t i = 0; i < mix.cue_words; ++i) words.push_back(pick(own, rng));
    rng.shuffle(words);
    return words;
}

constexpr QueryMix kUniMix{3, 0, 1, 2};
constexpr QueryMix kCrossMix{2, 1, 0, 1};

const Chunk& random_chunk(const SyntheticCorpus& sc, DomainId d, Rng& rng) {
    const auto& list = sc.corpus.by_domain[d];
    return list[rng.below(list.size())];
}

std::string prefix(Rng& rng) { return kQuestionPrefixes[rng.below(std::size(kQuestionPrefixes))]; }

}  // namespace

void SyntheticSpec::validate() const {
    if (domains == 0) throw UsageError("datagen: domains must be at least 1");
    if (vocab_size < 2 * kTopicWords) throw UsageError("datagen: vocab_size must be at least 20");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw UsageError("datagen: overlap must lie in [0, 1)");
    if (pages_per_domain == 0 || chunks_per_page == 0) throw UsageError("datagen: page and chunk counts must be >= 1");
    if (uni_queries_per_domain == 0) throw UsageError("datagen: uni_queries_per_domain must be >= 1");
    if (negatives_per_query == 0) throw UsageError("datagen: negatives_per_query must be >= 1");
    const std::size_t own = vocab_size - static_cast<std::size_t>(std::lround(overlap * static_cast<double>(vocab_size)));
    if (own < kDescriptionWords) throw UsageError("datagen: overlap leaves too few domain-specific words");
}

json SyntheticSpec::to_json() const {
    return {{"domains", domains},
            {"vocab_size", vocab_size},
            {"overlap", overlap},
            {"pages_per_domain", pages_per_domain},
            {"chunks_per_page", chunks_per_page},
            {"uni_queries_per_domain", uni_queries_per_domain},
            {"cross_queries_per_pair", cross_queries_per_pair},
            {"negatives_per_query", negatives_per_query},
            {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& doc) {
    SyntheticSpec s;
    try {
        s.domains = doc.value("domains", s.domains);
        s.vocab_size = doc.value("vocab_size", s.vocab_size);
        s.overlap = doc.value("overlap", s.overlap);
        s.pages_per_domain = doc.value("pages_per_domain", s.pages_per_domain);
        s.chunks_per_page = doc.value("chunks_per_page", s.chunks_per_page);
        s.uni_queries_per_domain = doc.value("uni_queries_per_domain", s.uni_queries_per_domain);
        s.cross_queries_per_pair = doc.value("cross_queries_per_pair", s.cross_queries_per_pair);
        s.negatives_per_query = doc.value("negatives_per_query", s.negatives_per_query);
        s.seed = doc.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw UsageError(std::string("datagen spec: ") + e.what());
    }
    s.validate();
    return s;
}

void SyntheticCorpus::write(const fs::path& dir) const {
    fs::create_directories(dir);
    corpus.domains.save(dir / "domains.json");
    for (const auto& page : pages) {
        const auto name = corpus.domains.at(page.domain).name + "-" + page.url.substr(page.url.rfind('/') + 1) + ".md";
        io::write_file_atomic(dir / name, format_page(page, corpus.domains));
    }
}

SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticCorpus sc;
    const auto shared_n = static_cast<std::size_t>(std::lround(spec.overlap * static_cast<double>(spec.vocab_size)));
    const auto own_n = spec.vocab_size - shared_n;

    Rng vocab_rng(Rng::derive(spec.seed, kVocabStream));
    std::unordered_set<std::string> used;
    auto fresh = [&] {
        for (;;) {
            auto w = pseudo_word(vocab_rng);
            if (used.insert(w).second) return w;
        }
    };
    for (std::size_t i = 0; i < shared_n; ++i) sc.shared_pool.push_back(fresh());
    std::vector<std::vector<std::string>> own(spec.domains);
    for (std::size_t j = 0; j < spec.domains; ++j) {
        for (std::size_t i = 0; i < own_n; ++i) own[j].push_back(fresh());
        sc.vocabularies.push_back(sc.shared_pool);
        sc.vocabularies.back().insert(sc.vocabularies.back().end(), own[j].begin(), own[j].end());
    }

    std::vector<Domain> domains;
    for (std::size_t j = 0; j < spec.domains; ++j) {
        Rng rng(Rng::derive(spec.seed, kCorpusStream + j));
        domains.push_back({j, domain_name(j), join(sample_distinct(own[j], kDescriptionWords, rng))});
    }
    DomainRegistry registry(domains);

    // Concepts are word sets from the shared pool. Every domain covers every
    // concept exactly once, so each chunk has one twin per other domain that
    // is written with the same shared terminology.
    const std::size_t per_domain = spec.pages_per_domain * spec.chunks_per_page;
    const auto concept_n = std::min(concept_size(spec), shared_n);
    std::vector<std::vector<std::string>> concepts(per_domain);
    if (concept_n > 0) {
        Rng rng(Rng::derive(spec.seed, kConceptStream));
        for (auto& c : concepts) c = sample_distinct(sc.shared_pool, concept_n, rng);
    }

    std::vector<Chunk> chunks;
    for (std::size_t j = 0; j < spec.domains; ++j) {
        Rng rng(Rng::derive(Rng::derive(spec.seed, kCorpusStream + j), 1));
        const auto& vocab = sc.vocabularies[j];
        std::vector<std::size_t> assignment(per_domain);
        for (std::size_t i = 0; i < per_domain; ++i) assignment[i] = i;
        rng.shuffle(assignment);
        for (std::size_t k = 0; k < spec.pages_per_domain; ++k) {
            SourcePage page;
            page.url = page_url(domains[j].name, k);
            page.domain = j;
            const auto theme = sample_distinct(vocab, kThemeWords, rng);
            page.title = domains[j].name + " guide: " + theme[0] + " " + theme[1];

            std::vector<std::string> rest;
            for (const auto& w : own[j]) {
                if (std::find(theme.begin(), theme.end(), w) == theme.end()) rest.push_back(w);
            }
            std::vector<std::vector<std::string>> topics;
            page.body = "# " + page.title;
            for (std::size_t c = 0; c < spec.chunks_per_page; ++c) {
                auto topic = concepts[assignment[k * spec.chunks_per_page + c]];
                for (auto& w : sample_distinct(rest, kTopicWords - topic.size(), rng)) topic.push_back(std::move(w));
                page.body += "\n## " + topic.back() + " " + topic[topic.size() - 2] + "\n" + paragraph(topic, theme, vocab, rng);
                topics.push_back(std::move(topic));
            }

            auto page_chunks = chunk_page(page);
            if (page_chunks.size() != spec.chunks_per_page) {
                throw DataError("datagen: page " + page.url + " did not chunk into one chunk per section");
            }
            for (std::size_t c = 0; c < page_chunks.size(); ++c) {
                const auto& topic = topics[c];
                sc.concepts[page_chunks[c].id].assign(topic.begin(), topic.begin() + static_cast<std::ptrdiff_t>(concept_n));
                sc.topics[page_chunks[c].id].assign(topic.begin() + static_cast<std::ptrdiff_t>(concept_n), topic.end());
            }
            sc.themes[page.url] = theme;
            std::move(page_chunks.begin(), page_chunks.end(), std::back_inserter(chunks));
            sc.pages.push_back(std::move(page));
        }
    }
    sc.corpus = make_corpus(std::move(registry), std::move(chunks));
    return sc;
}

std::vector<QueryDocPair> generate_queries(const SyntheticSpec& spec, const SyntheticCorpus& sc) {
    spec.validate();
    std::vector<QueryDocPair> out;
    std::unordered_set<std::string> seen;

    auto unique = [&](Rng& rng, auto make) {
        for (int attempt = 0; attempt < kMaxQueryAttempts; ++attempt) {
            auto q = make(rng);
            if (seen.insert(q.first).second) return q;
        }
        throw DataError("datagen: could not generate a unique query; increase vocab_size or pages");
    };

    for (std::size_t d = 0; d < spec.domains; ++d) {
        Rng rng(Rng::derive(spec.seed, kUniStream + d));
        for (std::size_t i = 0; i < spec.uni_queries_per_domain; ++i) {
            auto [text, gold] = unique(rng, [&](Rng& r) {
                const auto& c = random_chunk(sc, d, r);
                auto text = prefix(r) + " " + join(chunk_words(sc, c, kUniMix, r));
                return std::pair<std::string, const Chunk*>{std::move(text), &c};
            });
            out.push_back({text, gold->id, {d}, 1});
        }
    }

    std::uint64_t pair_index = 0;
    for (std::size_t a = 0; a < spec.domains; ++a) {
        for (std::size_t b = a + 1; b < spec.domains; ++b, ++pair_index) {
            Rng rng(Rng::derive(spec.seed, kCrossStream + pair_index));
            for (std::size_t i = 0; i < spec.cross_queries_per_pair; ++i) {
                auto [text, gold] = unique(rng, [&](Rng& r) {
                    const auto& ca = random_chunk(sc, a, r);
                    const auto& cb = random_chunk(sc, b, r);
                    auto text = prefix(r) + " " + join(chunk_words(sc, ca, kCrossMix, r)) + " and " +
                                join(chunk_words(sc, cb, kCrossMix, r));
                    return std::pair<std::string, std::pair<const Chunk*, const Chunk*>>{std::move(text), {&ca, &cb}};
                });
                out.push_back({text, gold.first->id, {a, b}, 1});
                out.push_back({text, gold.second->id, {a, b}, 1});
            }
        }
    }
    return out;
}

std::vector<QueryDocPair> generate_negatives(const SyntheticSpec& spec, const SyntheticCorpus& sc,
                                             std::span<const QueryDocPair> positives) {
    spec.validate();
    std::map<std::string, std::vector<const Chunk*>> by_page;
    for (const auto& list : sc.corpus.by_domain) {
        for (const auto& c : list) by_page[c.url].push_back(&c);
    }

    Rng rng(Rng::derive(spec.seed, kNegativeStream));
    std::vector<QueryDocPair> out;
    for (const auto& group : group_by_query(positives)) {
        std::set<std::string> gold(group.positives.begin(), group.positives.end());
        for (const auto& id : group.positives) out.push_back({group.text, id, group.domains, 1});

        std::vector<std::string> picked;
        auto take = [&](const Chunk* c) {
            if (picked.size() < spec.negatives_per_query && !gold.count(c->id) &&
                std::find(picked.begin(), picked.end(), c->id) == picked.end()) {
                picked.push_back(c->id);
            }
        };

        // Siblings of the golden pages, round-robin across pages.
        std::vector<std::string> golden_pages;
        for (const auto& id : group.positives) {
            const auto url = page_key(id);
            if (std::find(golden_pages.begin(), golden_pages.end(), url) == golden_pages.end()) {
                golden_pages.push_back(url);
            }
        }
        std::vector<std::vector<const Chunk*>> siblings;
        for (const auto& url : golden_pages) {
            auto list = by_page.at(url);
            rng.shuffle(list);
            siblings.push_back(std::move(list));
        }
        for (std::size_t i = 0; picked.size() < spec.negatives_per_query; ++i) {
            bool any = false;
            for (const auto& list : siblings) {
                if (i < list.size()) {
                    any = true;
                    take(list[i]);
                }
            }
            if (!any) break;
        }

        // Related pages in the golden domains, most shared theme words first.
        if (picked.size() < spec.negatives_per_query) {
            struct Related {
                std::size_t shared;
                std::string url;
            };
            std::vector<Related> related;
            for (const auto& g : golden_pages) {
                const auto domain = by_page.at(g).front()->domain;
                for (const auto& [url, list] : by_page) {
                    if (list.front()->domain != domain ||
                        std::find(golden_pages.begin(), golden_pages.end(), url) != golden_pages.end()) {
                        continue;
                    }
                    related.push_back({shared_count(sc.themes.at(g), sc.themes.at(url)), url});
                }
            }
            std::stable_sort(related.begin(), related.end(), [](const Related& a, const Related& b) {
                return a.shared != b.shared ? a.shared > b.shared : a.url < b.url;
            });
            for (const auto& r : related) {
                for (const auto* c : by_page.at(r.url)) take(c);
            }
        }
        for (const auto& id : picked) out.push_back({group.text, id, group.domains, 0});
    }
    return out;
}

std::vector<QueryDocPair> generate_dataset(const SyntheticSpec& spec, const SyntheticCorpus& corpus) {
    return generate_negatives(spec, corpus, generate_queries(spec, corpus));
}

json pair_to_json(const QueryDocPair& p) {
    return {{"query", p.query}, {"chunk_id", p.chunk_id}, {"domains", p.domains}, {"label", p.label}};
}

QueryDocPair pair_from_json(const json& r) {
    QueryDocPair p;
    try {
        p.query = r.at("query").get<std::string>();
        p.chunk_id = r.at("chunk_id").get<std::string>();
        p.domains = r.at("domains").get<std::vector<DomainId>>();
        p.label = r.at("label").get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("dataset record: ") + e.what());
    }
    if (p.label != 0 && p.label != 1) throw DataError("dataset record: label must be 0 or 1");
    if (p.domains.empty()) throw DataError("dataset record: domains must not be empty");
    if (p.query.empty()) throw DataError("dataset record: empty query");
    return p;
}

void export_dataset(std::span<const QueryDocPair> pairs, const fs::path& path) {
    std::vector<json> records;
    records.reserve(pairs.size());
    for (const auto& p : pairs) records.push_back(pair_to_json(p));
    io::write_jsonl_atomic(path, records);
}

std::vector<QueryDocPair> load_dataset(const fs::path& path) {
    std::vector<QueryDocPair> out;
    std::size_t line = 0;
    for (const auto& r : io::read_jsonl(path)) {
        ++line;
        try {
            out.push_back(pair_from_json(r));
        } catch (const DataError& e) {
            throw DataError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

double positive_ratio(std::span<const QueryDocPair> pairs) {
    if (pairs.empty()) throw DataError("positive_ratio: no pairs");
    std::size_t pos = 0;
    for (const auto& p : pairs) pos += p.label == 1;
    return static_cast<double>(pos) / static_cast<double>(pairs.size());
}

std::vector<QueryRecord> group_by_query(std::span<const QueryDocPair> pairs) {
    std::vector<QueryRecord> out;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& p : pairs) {
        auto [it, inserted] = index.emplace(p.query, out.size());
        if (inserted) out.push_back({p.query, p.domains, {}, {}});
        auto& rec = out[it->second];
        if (rec.domains != p.domains) throw DataError("query '" + p.query + "' has inconsistent domain lists");
        (p.label == 1 ? rec.positives : rec.negatives).push_back(p.chunk_id);
    }
    return out;
}

}  // namespace fedrag
