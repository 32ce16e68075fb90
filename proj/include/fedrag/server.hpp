#pragma once

#include <memory>
#include <string>

#include "fedrag/app.hpp"

namespace fedrag {

/// HTTP front end over a SearchService:
///   GET  /healthz    -> 200 "ok"
///   POST /v1/route   {"query", "seed"?, "deterministic"?}
///   POST /v1/search  {"query", "k"?, "mode"?, "deterministic"?, "seed"?}
/// Errors reply {"error", "message"} with 400 (usage), 422 (data) or 502 (remote).
class HttpService {
public:
    explicit HttpService(const SearchService& service);
    ~HttpService();

    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Binds without serving; returns the bound port (useful with port 0).
    int bind(const std::string& host, int port);
    /// Serves on the bound socket until stop() is called.
    void serve();
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fedrag
