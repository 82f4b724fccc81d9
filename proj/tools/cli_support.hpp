#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vidguide/settings.hpp"

namespace vidguide::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;
inline constexpr int kExitGradcheck = 5;

int exit_code_for(std::string_view error_kind);

// The last line of every failure: "error: kind=<kind> exit=<code> message=<text>".
std::string failure_line(std::string_view kind, int code, std::string_view message);

std::string sha256_hex(std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
void ensure_directory(const std::filesystem::path& dir);

std::string utc_timestamp();

struct ManifestFile {
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    unsigned long long seed = 0;
    std::vector<unsigned long long> seeds;  // ablations only
    bool unguided = false;
    bool complete = false;
    std::vector<std::pair<std::string, std::string>> settings;
    std::vector<ManifestFile> inputs;
    std::vector<ManifestFile> outputs;
    std::string started_at;
    std::string finished_at;

    std::string to_json() const;
};

ManifestFile digest_file(const std::filesystem::path& path, const std::string& label);

}  // namespace vidguide::cli
