#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fedrag::io {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

json read_json(const std::filesystem::path& path);
void write_json_atomic(const std::filesystem::path& path, const json& doc);

/// One parsed object per non-blank line. Errors name the file and line.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<json>& records);

/// Replaces directory `target` with `staged` (a fully written sibling
/// directory) using renames only.
void replace_directory(const std::filesystem::path& staged, const std::filesystem::path& target);

/// Sibling path used for staging writes to `target`.
std::filesystem::path staging_path(const std::filesystem::path& target);

/// FNV-1a 64 of the bytes, as 16 lowercase hex digits.
std::string hex_digest(std::string_view bytes);

}  // namespace fedrag::io
