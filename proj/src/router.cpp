#include "fedrag/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedrag/error.hpp"
#include "fedrag/io.hpp"
#include "fedrag/random.hpp"
#include "matrix_json.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

constexpr int kModelVersion = 1;

void check_batch(const RouterModel& model, std::span<const RouterExample> batch) {
    if (batch.empty()) throw DataError("router loss: empty batch");
    for (const auto& ex : batch) {
        if (static_cast<std::size_t>(ex.embedding.size()) != model.dimension()) {
            throw DataError("router: embedding dimension " + std::to_string(ex.embedding.size()) +
                            " does not match model dimension " + std::to_string(model.dimension()));
        }
        if (static_cast<std::size_t>(ex.labels.size()) != model.domains()) {
            throw DataError("router: label vector length does not match domain count");
        }
        for (Eigen::Index j = 0; j < ex.labels.size(); ++j) {
            if (ex.labels[j] != 0.0 && ex.labels[j] != 1.0) throw DataError("router: labels must be 0 or 1");
        }
    }
}

}  // namespace

std::size_t DomainProbs::argmax() const {
    std::size_t best = 0;
    for (std::size_t j = 1; j < size(); ++j) {
        if ((*this)[j] > (*this)[best]) best = j;
    }
    return best;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

RouterModel RouterModel::zeros(std::size_t domains, std::size_t dimension, std::string fingerprint) {
    if (domains == 0) throw UsageError("router needs at least one domain");
    RouterModel m;
    m.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(domains), static_cast<Eigen::Index>(dimension));
    m.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domains));
    m.embedder_fingerprint = std::move(fingerprint);
    return m;
}

json RouterModel::to_json() const {
    json b = json::array();
    for (Eigen::Index j = 0; j < bias.size(); ++j) b.push_back(bias[j]);
    return {{"version", kModelVersion}, {"m", domains()},         {"d", dimension()},
            {"embedder_fingerprint", embedder_fingerprint},      {"W", matrix_to_json(weights)},
            {"b", b}};
}

RouterModel RouterModel::from_json(const json& doc) {
    try {
        if (doc.at("version").get<int>() != kModelVersion) throw DataError("router model: unsupported version");
        const auto m = doc.at("m").get<std::size_t>();
        const auto d = doc.at("d").get<std::size_t>();
        if (m == 0) throw DataError("router model: m must be at least 1");
        RouterModel model;
        model.embedder_fingerprint = doc.at("embedder_fingerprint").get<std::string>();
        model.weights = matrix_from_json(doc.at("W"), m, d, "router W");
        const auto& b = doc.at("b");
        if (!b.is_array() || b.size() != m) throw DataError("router model: b has wrong length");
        model.bias.resize(static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j) model.bias[static_cast<Eigen::Index>(j)] = b[j].get<double>();
        if (!model.bias.allFinite()) throw DataError("router model: non-finite bias");
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("router model: ") + e.what());
    }
}

void RouterTrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("router learning_rate must be positive");
    if (batch_size == 0) throw UsageError("router batch_size must be positive");
    if (l2_penalty < 0.0) throw UsageError("router l2_penalty must be non-negative");
}

json RouterTrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"epochs", epochs}, {"batch_size", batch_size},
            {"seed", seed},                   {"l2_penalty", l2_penalty}};
}

RouterTrainConfig RouterTrainConfig::from_json(const json& doc) {
    RouterTrainConfig c;
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.seed = doc.value("seed", c.seed);
    c.l2_penalty = doc.value("l2_penalty", c.l2_penalty);
    c.validate();
    return c;
}

DomainProbs predict(const RouterModel& model, const EmbeddingVector& e) {
    if (static_cast<std::size_t>(e.size()) != model.dimension()) {
        throw DataError("router: embedding dimension " + std::to_string(e.size()) + " does not match model dimension " +
                        std::to_string(model.dimension()));
    }
    const Eigen::VectorXd logits = model.weights * e + model.bias;
    DomainProbs out{Eigen::VectorXd(logits.size())};
    for (Eigen::Index j = 0; j < logits.size(); ++j) out.p[j] = sigmoid(logits[j]);
    return out;
}

double bce_loss(const RouterModel& model, std::span<const RouterExample> batch) {
    check_batch(model, batch);
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto probs = predict(model, ex.embedding);
        for (Eigen::Index j = 0; j < probs.p.size(); ++j) {
            const double p = std::clamp(probs.p[j], kBceEpsilon, 1.0 - kBceEpsilon);
            const double y = ex.labels[j];
            total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
    }
    return total / static_cast<double>(batch.size());
}

RouterGradient bce_gradient(const RouterModel& model, std::span<const RouterExample> batch) {
    check_batch(model, batch);
    RouterGradient g{Eigen::MatrixXd::Zero(model.weights.rows(), model.weights.cols()),
                     Eigen::VectorXd::Zero(model.bias.size())};
    for (const auto& ex : batch) {
        const auto probs = predict(model, ex.embedding);
        Eigen::VectorXd residual(probs.p.size());
        for (Eigen::Index j = 0; j < probs.p.size(); ++j) {
            const double p = probs.p[j];
            // Flat region of the clamp has zero slope.
            residual[j] = (p < kBceEpsilon || p > 1.0 - kBceEpsilon) ? 0.0 : p - ex.labels[j];
        }
        g.weights.noalias() += residual * ex.embedding.transpose();
        g.bias += residual;
    }
    const double n = static_cast<double>(batch.size());
    g.weights /= n;
    g.bias /= n;
    return g;
}

RouterTrainResult train_router(std::span<const RouterExample> examples, std::size_t domains, std::size_t dimension,
                               const std::string& embedder_fingerprint, const RouterTrainConfig& cfg) {
    cfg.validate();
    if (examples.empty()) throw DataError("train_router: empty dataset");

    RouterTrainResult result{RouterModel::zeros(domains, dimension, embedder_fingerprint), {}, {}};
    auto& model = result.model;
    check_batch(model, examples);

    Eigen::VectorXd positives = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domains));
    for (const auto& ex : examples) positives += ex.labels;
    for (std::size_t j = 0; j < domains; ++j) {
        if (positives[static_cast<Eigen::Index>(j)] == 0.0) {
            result.warnings.push_back("domain " + std::to_string(j) + " has no positive training example");
        }
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<RouterExample> batch;
    batch.reserve(cfg.batch_size);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            const auto end = std::min(order.size(), start + cfg.batch_size);
            for (auto i = start; i < end; ++i) batch.push_back(examples[order[i]]);
            const auto g = bce_gradient(model, batch);
            model.weights -= cfg.learning_rate * (g.weights + 2.0 * cfg.l2_penalty * model.weights);
            model.bias -= cfg.learning_rate * g.bias;
        }
        result.loss_trace.push_back(bce_loss(model, examples));
    }
    return result;
}

RouterTrainResult train_router(std::span<const LabeledQuery> dataset, const Embedder& embedder, std::size_t domains,
                               const RouterTrainConfig& cfg) {
    if (dataset.empty()) throw DataError("train_router: empty dataset");
    std::vector<std::string> texts;
    texts.reserve(dataset.size());
    for (const auto& q : dataset) texts.push_back(q.text);
    auto vectors = embedder.embed_batch(texts);

    std::vector<RouterExample> examples;
    examples.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domains));
        for (auto d : dataset[i].domains) {
            if (d >= domains) throw DataError("query '" + dataset[i].text + "' references unknown domain");
            y[static_cast<Eigen::Index>(d)] = 1.0;
        }
        examples.push_back({std::move(vectors[i]), std::move(y)});
    }
    return train_router(examples, domains, embedder.dimension(), embedder.fingerprint(), cfg);
}

void save_router(const RouterModel& model, const std::filesystem::path& path) {
    io::write_json_atomic(path, model.to_json());
}

RouterModel load_router(const std::filesystem::path& path, const std::string& expected_fingerprint) {
    auto model = RouterModel::from_json(io::read_json(path));
    if (!expected_fingerprint.empty() && model.embedder_fingerprint != expected_fingerprint) {
        throw DataError(path.string() + ": router was trained for embedder '" + model.embedder_fingerprint +
                        "', not '" + expected_fingerprint + "'");
    }
    return model;
}

}  // namespace fedrag
