#include "fedrag/remote.hpp"

#include <httplib.h>

#include "fedrag/error.hpp"

namespace fedrag::remote {

nlohmann::json post_json(const std::string& base_url, const std::string& path, const nlohmann::json& body,
                         int timeout_ms) {
    if (base_url.empty()) throw UsageError("no remote endpoint configured for " + path);
    httplib::Client client(base_url);
    const auto sec = timeout_ms / 1000;
    const auto usec = (timeout_ms % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);

    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
        throw RemoteError(base_url + path + ": request failed (" + httplib::to_string(res.error()) + ")", 0);
    }
    if (res->status != 200) {
        throw RemoteError(base_url + path + ": HTTP " + std::to_string(res->status), res->status);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw RemoteError(base_url + path + ": reply is not JSON", res->status);
    }
}

}  // namespace fedrag::remote
