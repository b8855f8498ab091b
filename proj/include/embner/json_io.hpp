#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "embner/data.hpp"

namespace embner {

/// Row-major nested arrays.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

/// Pretty-printed with a trailing newline; the parent directory must exist.
void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace embner
