#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "percflow/velocity_model.hpp"

namespace percflow {

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

// Parameter dump with a shape manifest. Doubles are written in shortest
// round-trip form so a reload is bit-exact.
nlohmann::json model_to_json(const VelocityModel& model,
                             const std::vector<std::string>& condition_names);
VelocityModel model_from_json(const nlohmann::json& j,
                              std::vector<std::string>* condition_names = nullptr);

void save_checkpoint(const std::filesystem::path& path,
                     const VelocityModel& model,
                     const std::vector<std::string>& condition_names);
VelocityModel load_checkpoint(const std::filesystem::path& path,
                              std::vector<std::string>* condition_names = nullptr);

// Hex digest of a file's bytes (FNV-1a, 64 bit).
std::string file_digest(const std::filesystem::path& path);

// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents);

}  // namespace percflow
