#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>
#include <algorithm>

#include <unistd.h>

#include <Eigen/Dense>

#include "fedrag/corpus.hpp"
#include "fedrag/random.hpp"

namespace fedrag::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("fedrag-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// `n` words "w0 w1 ..." separated by single spaces, no punctuation.
inline std::string words(std::size_t n, const std::string& stem = "w") {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

inline Eigen::VectorXd random_vector(Rng& rng, std::size_t d) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    return v;
}

inline Eigen::VectorXd random_unit(Rng& rng, std::size_t d) {
    Eigen::VectorXd v = random_vector(rng, d);
    return v / v.norm();
}

inline DomainRegistry registry(const std::vector<std::string>& names) {
    std::vector<Domain> ds;
    for (const auto& n : names) ds.push_back({0, n, n + " documentation"});
    return DomainRegistry(std::move(ds));
}

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

}  // namespace fedrag::testing
