#include "cli_support.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vidguide/errors.hpp"

namespace vidguide::cli {

int exit_code_for(std::string_view kind) {
    if (kind == "numeric" || kind == "degenerate") return kExitNumeric;
    if (kind == "io") return kExitIo;
    if (kind == "gradcheck") return kExitGradcheck;
    return kExitInput;
}

std::string failure_line(std::string_view kind, int code, std::string_view message) {
    std::string flat(message);
    for (char& c : flat) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return "error: kind=" + std::string(kind) + " exit=" + std::to_string(code) + " message=" + flat;
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("SHA-256 computation failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
    }
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ManifestFile digest_file(const std::filesystem::path& path, const std::string& label) {
    return {label, sha256_hex(read_file(path))};
}

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "vidguide";
    j["version"] = VIDGUIDE_VERSION;
    j["command"] = command;
    j["arguments"] = arguments;
    j["seed"] = seed;
    if (!seeds.empty()) j["seeds"] = seeds;
    j["unguided"] = unguided;
    j["complete"] = complete;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : settings) cfg[k] = v;
    j["settings"] = std::move(cfg);
    auto files = [](const std::vector<ManifestFile>& list) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const ManifestFile& f : list) arr.push_back({{"path", f.path}, {"sha256", f.sha256}});
        return arr;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j.dump(2) + "\n";
}

}  // namespace vidguide::cli
