#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace enggraph::io {

/// Shortest text that reads back to the same double.
std::string num(double v);

std::string read_text(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

std::string sha256_hex(const std::string& bytes);
/// Hash over the relative paths and contents of every regular file below
/// `root`, visited in sorted order.
std::string hash_tree(const std::filesystem::path& root);

/// Throws ConfigError when `j` is not an object or has a key outside `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& what);

}  // namespace enggraph::io
