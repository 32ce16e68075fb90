#include "fedrag/server.hpp"

#include <httplib.h>

#include "fedrag/error.hpp"

namespace fedrag {

using json = nlohmann::json;

namespace {

int status_for(const std::exception& e) {
    if (const auto* fe = dynamic_cast<const Error*>(&e)) {
        switch (fe->kind()) {
            case ErrorKind::usage: return 400;
            case ErrorKind::data: return 422;
            case ErrorKind::remote: return 502;
        }
    }
    return 500;
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("request body is not valid JSON: ") + e.what());
    }
}

template <class F>
void guarded(httplib::Response& res, F&& handler) {
    try {
        res.set_content(handler().dump(), "application/json");
    } catch (const std::exception& e) {
        res.status = status_for(e);
        res.set_content(error_line(e), "application/json");
    }
}

}  // namespace

struct HttpService::Impl {
    explicit Impl(const SearchService& s) : service(s) {}

    const SearchService& service;
    httplib::Server server;
};

HttpService::HttpService(const SearchService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& s = impl_->server;
    const auto& svc = impl_->service;

    s.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

    s.Post("/v1/route", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = parse_body(req);
            if (!body.is_object() || !body.contains("query") || !body["query"].is_string()) {
                throw UsageError("request needs a 'query' string");
            }
            std::optional<std::uint64_t> seed;
            if (body.contains("seed") && !body["seed"].is_null()) seed = body["seed"].get<std::uint64_t>();
            return svc.route(body["query"].get<std::string>(), seed, body.value("deterministic", false));
        });
    });

    s.Post("/v1/search", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto request = SearchRequest::from_json(parse_body(req), 5);
            return svc.result_json(svc.search(request));
        });
    });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw UsageError("could not bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw UsageError("could not bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpService::serve() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpService::running() const { return impl_->server.is_running(); }

}  // namespace fedrag
