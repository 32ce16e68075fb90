#pragma once

#include <string>

#include <json.hpp>

namespace fedrag::remote {

/// POSTs `body` as JSON to `base_url` + `path` and parses the JSON reply.
/// Throws RemoteError carrying the HTTP status on non-200 replies, and
/// status 0 on connection failures and timeouts.
nlohmann::json post_json(const std::string& base_url, const std::string& path, const nlohmann::json& body,
                         int timeout_ms);

}  // namespace fedrag::remote
