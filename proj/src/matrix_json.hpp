#pragma once

#include <cstddef>

#include <Eigen/Dense>
#include <json.hpp>

namespace fedrag {

/// Row-major nested arrays.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);

/// Parses nested arrays of exactly r x c finite numbers; `what` prefixes errors.
Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, std::size_t r, std::size_t c, const char* what);

}  // namespace fedrag
