#pragma once

#include <functional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace fedrag::testing {

/// Local JSON endpoint for exercising remote clients. The handler receives the
/// parsed request body and returns (status, reply body).
class MockServer {
public:
    using Handler = std::function<std::pair<int, nlohmann::json>(const nlohmann::json&)>;

    MockServer(const std::string& path, Handler handler) : handler_(std::move(handler)) {
        server_.Post(path, [this](const httplib::Request& req, httplib::Response& res) {
            ++calls_;
            auto [status, body] = handler_(nlohmann::json::parse(req.body));
            res.status = status;
            res.set_content(body.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int calls() const { return calls_; }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> calls_{0};
};

}  // namespace fedrag::testing
