#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vidguide/guidance.hpp"
#include "vidguide/toy_model.hpp"

namespace vidguide {

// Everything a run needs besides its inputs and seed. The model's weight seed
// is not a setting: runs derive it from the run seed.
struct RunSettings {
    GuidanceConfig guidance;
    ToyModelConfig model;
};

// Registered keys in canonical order, e.g. "t1", "lambda_sp", "model.capture".
const std::vector<std::string>& setting_keys();
bool is_setting_key(std::string_view key);

// Throws InputError for unknown keys or unparsable values.
void apply_setting(RunSettings& settings, std::string_view key, std::string_view value);
std::string get_setting(const RunSettings& settings, std::string_view key);

// "key = value" lines; '#' starts a comment. Errors carry the line number.
RunSettings parse_settings(std::string_view text, RunSettings base = {});
RunSettings load_settings_file(const std::string& path, RunSettings base = {});
std::string serialize_settings(const RunSettings& settings);

std::vector<std::pair<std::string, std::string>> settings_entries(const RunSettings& settings);

// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace vidguide
