#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "transmat/train.hpp"

namespace transmat::cli {

// One experiment setting: a key in a config file section and a --key flag.
struct Setting {
    std::string section;
    std::string key;
    std::string help;
    bool boolean = false;
    std::function<std::string(const train::ExperimentConfig&)> get;
    std::function<void(train::ExperimentConfig&, const std::string&)> set;
};

const std::vector<Setting>& settings();
const Setting* find_setting(const std::string& key);

/// Applies "key = value" lines grouped in [section]s. '#' and ';' start comments.
/// Unknown sections, unknown keys and keys in the wrong section throw ConfigError.
void apply_config_text(const std::string& text, train::ExperimentConfig& cfg, const std::string& origin = "config");
void apply_config_file(const std::filesystem::path& path, train::ExperimentConfig& cfg);

/// Every setting, grouped by section, in a form apply_config_text reads back.
std::string to_config_text(const train::ExperimentConfig& cfg);

}  // namespace transmat::cli
