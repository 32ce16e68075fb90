#include "matrix_json.hpp"

#include <cmath>
#include <string>

#include "fedrag/error.hpp"

namespace fedrag {

using json = nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows, std::size_t r, std::size_t c, const char* what) {
    if (!rows.is_array() || rows.size() != r) throw DataError(std::string(what) + ": wrong row count");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < r; ++i) {
        if (!rows[i].is_array() || rows[i].size() != c) throw DataError(std::string(what) + ": wrong column count");
        for (std::size_t j = 0; j < c; ++j) {
            const double x = rows[i][j].get<double>();
            if (!std::isfinite(x)) throw DataError(std::string(what) + ": non-finite entry");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
        }
    }
    return m;
}

}  // namespace fedrag
