#pragma once

#include <stdexcept>
#include <string>

namespace fedrag {

enum class ErrorKind { usage, data, remote };

/// Base of every error raised by the library. The kind selects the CLI exit
/// code: usage -> 2, data -> 3, remote -> 4.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
            case ErrorKind::usage: return 2;
            case ErrorKind::data: return 3;
            case ErrorKind::remote: return 4;
        }
        return 1;
    }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& message) : Error(ErrorKind::usage, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class RemoteError : public Error {
public:
    RemoteError(const std::string& message, int http_status = 0)
        : Error(ErrorKind::remote, message), http_status_(http_status) {}

    /// 0 when the request never produced a response (connect failure, timeout).
    int http_status() const noexcept { return http_status_; }

private:
    int http_status_;
};

}  // namespace fedrag
