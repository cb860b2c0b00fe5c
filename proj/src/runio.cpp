#include "molmix/runio.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace molmix {

std::string sha256_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("sha256_file: cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("sha256_file: EVP context allocation failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buffer[1 << 16];
    while (is) {
        is.read(buffer, sizeof(buffer));
        if (is.gcount() > 0) EVP_DigestUpdate(ctx, buffer, std::size_t(is.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx, digest, &length);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) {
        static const char* digits = "0123456789abcdef";
        hex << digits[digest[i] >> 4] << digits[digest[i] & 0xf];
    }
    return hex.str();
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error("cannot create directory " + path + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << content;
    if (!os) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void RunManifest::write(const std::string& path) const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["dataset_path"] = dataset_path;
    j["dataset_hash"] = dataset_hash;
    j["model_config"] = model_config_json.empty()
                            ? nlohmann::ordered_json()
                            : nlohmann::ordered_json::parse(model_config_json);
    j["train_config"] = train_config_json.empty()
                            ? nlohmann::ordered_json()
                            : nlohmann::ordered_json::parse(train_config_json);
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    write_text_file(path, j.dump(2) + "\n");
}

RunManifest RunManifest::load(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.dataset_path = j.at("dataset_path").get<std::string>();
    m.dataset_hash = j.at("dataset_hash").get<std::string>();
    if (!j.at("model_config").is_null()) m.model_config_json = j.at("model_config").dump();
    if (!j.at("train_config").is_null()) m.train_config_json = j.at("train_config").dump();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.out_dir = j.at("out_dir").get<std::string>();
    return m;
}

}  // namespace molmix
