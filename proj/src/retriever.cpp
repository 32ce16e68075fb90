#include "fedrag/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "fedrag/random.hpp"
#include "matrix_json.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

constexpr int kModelVersion = 1;

/// Projected, normalized batch vectors plus what backprop needs.
struct Forward {
    Eigen::MatrixXd inputs;  // d x n, queries first
    Eigen::MatrixXd unit;    // d' x n
    Eigen::VectorXd norms;   // n
    std::size_t queries = 0;
    Eigen::MatrixXd scores;  // queries x documents
};

Forward forward(const ContrastiveBatch& batch, const ProjectionModel& model) {
    Forward f;
    f.queries = batch.queries.size();
    const auto n = static_cast<Eigen::Index>(batch.queries.size() + batch.documents.size());
    const auto d = static_cast<Eigen::Index>(model.input_dimension());
    f.inputs.resize(d, n);
    Eigen::Index col = 0;
    for (const auto* side : {&batch.queries, &batch.documents}) {
        for (const auto& v : *side) {
            if (v.size() != d) throw DataError("retriever: base embedding dimension does not match projection");
            f.inputs.col(col++) = v;
        }
    }
    f.unit.noalias() = model.projection * f.inputs;
    f.norms = f.unit.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (f.norms[j] > 0.0) f.unit.col(j) /= f.norms[j];
    }
    const auto nq = static_cast<Eigen::Index>(f.queries);
    f.scores.noalias() = f.unit.leftCols(nq).transpose() * f.unit.rightCols(n - nq);
    return f;
}

/// Accumulates one InfoNCE term: anchor/positive similarity against the
/// negatives' similarities. Returns the term's loss and adds d(loss)/d(score)
/// (scaled by `weight`) into `grad` at the given score coordinates.
struct ScoreRef {
    Eigen::Index query, document;
};

double infonce_term(const Eigen::MatrixXd& scores, ScoreRef positive, const std::vector<ScoreRef>& negatives,
                    double temperature, double weight, Eigen::MatrixXd* grad) {
    const double pos = scores(positive.query, positive.document) / temperature;
    double top = pos;
    for (const auto& r : negatives) top = std::max(top, scores(r.query, r.document) / temperature);
    double denom = std::exp(pos - top);
    for (const auto& r : negatives) denom += std::exp(scores(r.query, r.document) / temperature - top);
    const double lse = top + std::log(denom);

    if (grad) {
        const double wp = std::exp(pos - lse);
        (*grad)(positive.query, positive.document) += weight * (wp - 1.0) / temperature;
        for (const auto& r : negatives) {
            const double wn = std::exp(scores(r.query, r.document) / temperature - lse);
            (*grad)(r.query, r.document) += weight * wn / temperature;
        }
    }
    return lse - pos;
}

struct Term {
    ScoreRef positive;
    std::vector<ScoreRef> negatives;
};

std::vector<Term> collect_terms(const ContrastiveBatch& batch, Direction direction, bool in_batch_negatives) {
    std::vector<Term> terms;
    const auto nq = batch.queries.size();
    if (direction == Direction::query_to_document) {
        for (std::size_t i = 0; i < nq; ++i) {
            for (auto p : batch.positives[i]) {
                Term t{{static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)}, {}};
                for (auto n : batch.negatives[i]) {
                    t.negatives.push_back({static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)});
                }
                if (!t.negatives.empty()) terms.push_back(std::move(t));
            }
        }
        return terms;
    }
    auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    for (std::size_t i = 0; i < nq; ++i) {
        for (auto p : batch.positives[i]) {
            Term t{{static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)}, {}};
            for (std::size_t other = 0; other < nq; ++other) {
                if (other == i) continue;
                const bool negative = in_batch_negatives ? !contains(batch.positives[other], p)
                                                         : contains(batch.negatives[other], p);
                if (negative) t.negatives.push_back({static_cast<Eigen::Index>(other), static_cast<Eigen::Index>(p)});
            }
            if (!t.negatives.empty()) terms.push_back(std::move(t));
        }
    }
    return terms;
}

/// Mean loss over terms; gradient w.r.t. scores scaled by `weight` / |terms|.
double direction_loss(const Forward& f, const std::vector<Term>& terms, double temperature, double weight,
                      Eigen::MatrixXd* grad) {
    if (terms.empty()) return 0.0;
    const double per_term = weight / static_cast<double>(terms.size());
    double total = 0.0;
    for (const auto& t : terms) total += infonce_term(f.scores, t.positive, t.negatives, temperature, per_term, grad);
    return total / static_cast<double>(terms.size());
}

void check_temperature(double temperature) {
    if (!(temperature > 0.0)) throw UsageError("retriever: temperature must be positive");
}

}  // namespace

// ---------------------------------------------------------------------------

ProjectionModel ProjectionModel::identity(std::size_t dimension, std::string fingerprint) {
    const auto d = static_cast<Eigen::Index>(dimension);
    return {Eigen::MatrixXd::Identity(d, d), std::move(fingerprint)};
}

std::string ProjectionModel::fingerprint() const {
    std::string bytes = embedder_fingerprint;
    bytes += ':' + std::to_string(projection.rows()) + 'x' + std::to_string(projection.cols()) + ':';
    bytes.append(reinterpret_cast<const char*>(projection.data()),
                 static_cast<std::size_t>(projection.size()) * sizeof(double));
    return io::hex_digest(bytes);
}

json ProjectionModel::to_json() const {
    return {{"version", kModelVersion},
            {"d", input_dimension()},
            {"d_prime", output_dimension()},
            {"embedder_fingerprint", embedder_fingerprint},
            {"P", matrix_to_json(projection)}};
}

ProjectionModel ProjectionModel::from_json(const json& doc) {
    try {
        if (doc.at("version").get<int>() != kModelVersion) throw DataError("retriever model: unsupported version");
        const auto d = doc.at("d").get<std::size_t>();
        const auto dp = doc.at("d_prime").get<std::size_t>();
        return {matrix_from_json(doc.at("P"), dp, d, "retriever P"), doc.at("embedder_fingerprint").get<std::string>()};
    } catch (const json::exception& e) {
        throw DataError(std::string("retriever model: ") + e.what());
    }
}

void RetrieverTrainConfig::validate() const {
    if (!(temperature > 0.0)) throw UsageError("retriever temperature must be positive");
    if (!(learning_rate > 0.0)) throw UsageError("retriever learning_rate must be positive");
    if (batch_size == 0) throw UsageError("retriever batch_size must be positive");
    if (init_noise < 0.0) throw UsageError("retriever init_noise must be non-negative");
}

json RetrieverTrainConfig::to_json() const {
    return {{"temperature", temperature},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"include_in_batch_negatives", include_in_batch_negatives},
            {"output_dimension", output_dimension},
            {"init_noise", init_noise}};
}

RetrieverTrainConfig RetrieverTrainConfig::from_json(const json& doc) {
    RetrieverTrainConfig c;
    c.temperature = doc.value("temperature", c.temperature);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.seed = doc.value("seed", c.seed);
    c.include_in_batch_negatives = doc.value("include_in_batch_negatives", c.include_in_batch_negatives);
    c.output_dimension = doc.value("output_dimension", c.output_dimension);
    c.init_noise = doc.value("init_noise", c.init_noise);
    c.validate();
    return c;
}

void ContrastiveBatch::validate() const {
    if (queries.empty()) throw DataError("contrastive batch: no queries");
    if (positives.size() != queries.size() || negatives.size() != queries.size()) {
        throw DataError("contrastive batch: positive/negative lists must match the query count");
    }
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (positives[i].empty()) throw DataError("contrastive batch: query " + std::to_string(i) + " has no positive");
        if (negatives[i].empty()) {
            throw DataError("contrastive batch: query " + std::to_string(i) + " has no negative in batch");
        }
        for (const auto* list : {&positives[i], &negatives[i]}) {
            for (auto idx : *list) {
                if (idx >= documents.size()) throw DataError("contrastive batch: document index out of range");
            }
        }
    }
}

EmbeddingVector encode(const ProjectionModel& model, const EmbeddingVector& base) {
    if (static_cast<std::size_t>(base.size()) != model.input_dimension()) {
        throw DataError("retriever: base embedding dimension " + std::to_string(base.size()) +
                        " does not match projection input " + std::to_string(model.input_dimension()));
    }
    EmbeddingVector out = model.projection * base;
    normalize_l2(out);
    return out;
}

double infonce_directional(const ContrastiveBatch& batch, const ProjectionModel& model, double temperature,
                           Direction direction, bool in_batch_negatives) {
    check_temperature(temperature);
    batch.validate();
    const auto f = forward(batch, model);
    return direction_loss(f, collect_terms(batch, direction, in_batch_negatives), temperature, 1.0, nullptr);
}

double symmetric_loss(const ContrastiveBatch& batch, const ProjectionModel& model, double temperature,
                      bool in_batch_negatives) {
    return symmetric_loss_gradient(batch, model, temperature, in_batch_negatives).loss;
}

LossAndGradient symmetric_loss_gradient(const ContrastiveBatch& batch, const ProjectionModel& model,
                                        double temperature, bool in_batch_negatives) {
    check_temperature(temperature);
    batch.validate();
    const auto f = forward(batch, model);
    const auto q2d = collect_terms(batch, Direction::query_to_document, in_batch_negatives);
    const auto d2q = collect_terms(batch, Direction::document_to_query, in_batch_negatives);
    const double directions = (q2d.empty() ? 0.0 : 1.0) + (d2q.empty() ? 0.0 : 1.0);

    LossAndGradient out;
    out.gradient = Eigen::MatrixXd::Zero(model.projection.rows(), model.projection.cols());
    if (directions == 0.0) return out;

    Eigen::MatrixXd dscores = Eigen::MatrixXd::Zero(f.scores.rows(), f.scores.cols());
    const double w = 1.0 / directions;
    out.loss = w * (direction_loss(f, q2d, temperature, w, &dscores) + direction_loss(f, d2q, temperature, w, &dscores));

    // scores = Zq^T Zd
    const auto nq = static_cast<Eigen::Index>(f.queries);
    const auto n = f.unit.cols();
    Eigen::MatrixXd dunit(f.unit.rows(), n);
    dunit.leftCols(nq).noalias() = f.unit.rightCols(n - nq) * dscores.transpose();
    dunit.rightCols(n - nq).noalias() = f.unit.leftCols(nq) * dscores;

    // Through z = y / |y|: dy = (dz - z (z . dz)) / |y|
    for (Eigen::Index j = 0; j < n; ++j) {
        if (f.norms[j] == 0.0) {
            dunit.col(j).setZero();
            continue;
        }
        const double along = f.unit.col(j).dot(dunit.col(j));
        dunit.col(j) = (dunit.col(j) - along * f.unit.col(j)) / f.norms[j];
    }
    out.gradient.noalias() = dunit * f.inputs.transpose();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct PreparedGroups {
    std::vector<EmbeddingVector> query_vectors;           // one per group
    std::vector<std::vector<std::size_t>> positive_docs;  // indices into doc_vectors
    std::vector<std::vector<std::size_t>> negative_docs;
    std::vector<EmbeddingVector> doc_vectors;
    std::vector<std::string> page_keys;  // page of the first positive
};

PreparedGroups prepare(std::span<const QueryGroup> groups,
                       const std::unordered_map<std::string, std::string>& chunk_text, const Embedder& embedder,
                       bool require_both) {
    PreparedGroups out;
    std::map<std::string, std::size_t> doc_index;
    std::vector<std::string> doc_texts;
    std::vector<std::string> query_texts;

    auto doc_id = [&](const std::string& id) {
        auto it = doc_index.find(id);
        if (it != doc_index.end()) return it->second;
        auto text = chunk_text.find(id);
        if (text == chunk_text.end()) throw DataError("retriever: unknown chunk id '" + id + "'");
        doc_index.emplace(id, doc_texts.size());
        doc_texts.push_back(text->second);
        return doc_texts.size() - 1;
    };

    for (const auto& g : groups) {
        if (require_both && (g.positives.empty() || g.negatives.empty())) continue;
        std::vector<std::size_t> pos, neg;
        for (const auto& id : g.positives) pos.push_back(doc_id(id));
        for (const auto& id : g.negatives) neg.push_back(doc_id(id));
        query_texts.push_back(g.query);
        out.positive_docs.push_back(std::move(pos));
        out.negative_docs.push_back(std::move(neg));
        const auto& first = g.positives.empty() ? g.query : g.positives.front();
        out.page_keys.push_back(first.substr(0, first.rfind('#')));
    }
    out.query_vectors = embedder.embed_batch(query_texts);
    out.doc_vectors = embedder.embed_batch(doc_texts);
    return out;
}

/// Queries grouped by the page of their first positive so sibling negatives
/// tend to share a batch; page order and member order are shuffled.
std::vector<std::size_t> epoch_order(const PreparedGroups& groups, Rng& rng) {
    std::map<std::string, std::vector<std::size_t>> by_page;
    for (std::size_t i = 0; i < groups.page_keys.size(); ++i) by_page[groups.page_keys[i]].push_back(i);
    std::vector<std::vector<std::size_t>> buckets;
    buckets.reserve(by_page.size());
    for (auto& [key, members] : by_page) buckets.push_back(std::move(members));
    rng.shuffle(buckets);
    std::vector<std::size_t> order;
    order.reserve(groups.page_keys.size());
    for (auto& b : buckets) {
        rng.shuffle(b);
        order.insert(order.end(), b.begin(), b.end());
    }
    return order;
}

ContrastiveBatch make_batch(const PreparedGroups& groups, std::span<const std::size_t> members) {
    ContrastiveBatch batch;
    std::map<std::size_t, std::size_t> local;
    auto local_doc = [&](std::size_t global) {
        auto [it, fresh] = local.emplace(global, batch.documents.size());
        if (fresh) batch.documents.push_back(groups.doc_vectors[global]);
        return it->second;
    };
    for (auto g : members) {
        batch.queries.push_back(groups.query_vectors[g]);
        std::vector<std::size_t> pos, neg;
        for (auto d : groups.positive_docs[g]) pos.push_back(local_doc(d));
        for (auto d : groups.negative_docs[g]) neg.push_back(local_doc(d));
        batch.positives.push_back(std::move(pos));
        batch.negatives.push_back(std::move(neg));
    }
    return batch;
}

}  // namespace

ProjectionModel initial_projection(std::size_t input_dimension, const std::string& fingerprint,
                                   const RetrieverTrainConfig& cfg) {
    const auto d = static_cast<Eigen::Index>(input_dimension);
    const auto dp = static_cast<Eigen::Index>(cfg.output_dimension == 0 ? input_dimension : cfg.output_dimension);
    ProjectionModel model{Eigen::MatrixXd::Identity(dp, d), fingerprint};
    Rng rng(Rng::derive(cfg.seed, 0x1a17));
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < dp; ++i) model.projection(i, j) += cfg.init_noise * rng.normal();
    }
    return model;
}

RetrieverTrainResult train_retriever(std::span<const QueryGroup> groups,
                                     const std::unordered_map<std::string, std::string>& chunk_text,
                                     const Embedder& embedder, const RetrieverTrainConfig& cfg) {
    cfg.validate();
    const auto prepared = prepare(groups, chunk_text, embedder, true);
    if (prepared.query_vectors.empty()) throw DataError("train_retriever: no query has both a positive and a negative");

    RetrieverTrainResult result{initial_projection(embedder.dimension(), embedder.fingerprint(), cfg), {}};
    auto& model = result.model;
    Rng rng(cfg.seed);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(prepared, rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto len = std::min(cfg.batch_size, order.size() - start);
            const auto batch = make_batch(prepared, std::span<const std::size_t>(order).subspan(start, len));
            const auto step = symmetric_loss_gradient(batch, model, cfg.temperature, cfg.include_in_batch_negatives);
            model.projection -= cfg.learning_rate * step.gradient;
            total += step.loss;
            ++batches;
        }
        result.loss_trace.push_back(total / static_cast<double>(batches));
    }
    return result;
}

double similarity_margin(const ProjectionModel& model, std::span<const QueryGroup> groups,
                         const std::unordered_map<std::string, std::string>& chunk_text, const Embedder& embedder) {
    const auto prepared = prepare(groups, chunk_text, embedder, false);
    std::vector<EmbeddingVector> docs;
    docs.reserve(prepared.doc_vectors.size());
    for (const auto& v : prepared.doc_vectors) docs.push_back(encode(model, v));

    double pos_sum = 0.0, neg_sum = 0.0;
    std::size_t pos_n = 0, neg_n = 0;
    for (std::size_t i = 0; i < prepared.query_vectors.size(); ++i) {
        const auto q = encode(model, prepared.query_vectors[i]);
        for (auto d : prepared.positive_docs[i]) {
            pos_sum += similarity(q, docs[d]);
            ++pos_n;
        }
        for (auto d : prepared.negative_docs[i]) {
            neg_sum += similarity(q, docs[d]);
            ++neg_n;
        }
    }
    if (pos_n == 0 || neg_n == 0) throw DataError("similarity_margin: need positive and negative pairs");
    return pos_sum / static_cast<double>(pos_n) - neg_sum / static_cast<double>(neg_n);
}

void save_retriever(const ProjectionModel& model, const std::filesystem::path& path) {
    io::write_json_atomic(path, model.to_json());
}

ProjectionModel load_retriever(const std::filesystem::path& path, const std::string& expected_fingerprint) {
    auto model = ProjectionModel::from_json(io::read_json(path));
    if (!expected_fingerprint.empty() && model.embedder_fingerprint != expected_fingerprint) {
        throw DataError(path.string() + ": retriever was trained for embedder '" + model.embedder_fingerprint +
                        "', not '" + expected_fingerprint + "'");
    }
    return model;
}

}  // namespace fedrag
