#pragma once

#include <string>

#include "attnlimits/transformer.hpp"

namespace attnlimits::tf {

inline constexpr int kModelFormatVersion = 1;

// JSON text with shape metadata and row-major arrays. Doubles are written with
// 17 significant digits so that load(save(m)) is bit-identical.
std::string model_to_json(const Model& model);
Model model_from_json(const std::string& text);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace attnlimits::tf
