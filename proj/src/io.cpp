#include "fedrag/io.hpp"

#include <fstream>
#include <sstream>

#include <unistd.h>

#include "fedrag/error.hpp"

namespace fedrag::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

fs::path staging_path(const fs::path& target) {
    auto name = target.filename().string();
    if (name.empty()) name = target.parent_path().filename().string();
    return target.parent_path() / ("." + name + ".tmp-" + std::to_string(::getpid()));
}

void write_file_atomic(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = staging_path(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("cannot rename into " + path.string() + ": " + ec.message());
    }
}

json read_json(const fs::path& path) {
    const auto text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": malformed JSON: " + e.what());
    }
}

void write_json_atomic(const fs::path& path, const json& doc) {
    write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<json> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
        }
    }
    return records;
}

void write_jsonl_atomic(const fs::path& path, const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

void replace_directory(const fs::path& staged, const fs::path& target) {
    std::error_code ec;
    fs::path retired;
    if (fs::exists(target)) {
        retired = target.parent_path() / ("." + target.filename().string() + ".old-" + std::to_string(::getpid()));
        fs::remove_all(retired, ec);
        fs::rename(target, retired, ec);
        if (ec) throw DataError("cannot move aside " + target.string() + ": " + ec.message());
    }
    fs::rename(staged, target, ec);
    if (ec) {
        if (!retired.empty()) fs::rename(retired, target);
        throw DataError("cannot rename into " + target.string() + ": " + ec.message());
    }
    if (!retired.empty()) fs::remove_all(retired, ec);
}

std::string hex_digest(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace fedrag::io
