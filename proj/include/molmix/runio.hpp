#pragma once

// Run manifests and small file helpers shared by the CLI commands. A
// manifest is written before a run starts and carries everything needed to
// re-execute it: the resolved configs, the dataset content hash and the
// original argument vector.

#include <cstdint>
#include <string>
#include <vector>

namespace molmix {

std::string sha256_file(const std::string& path);

void ensure_directory(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

struct RunManifest {
    std::string command;
    std::vector<std::string> argv;         // resolved arguments, --out included
    std::string dataset_path;
    std::string dataset_hash;
    std::string model_config_json;         // resolved, empty for data-only commands
    std::string train_config_json;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;

    void write(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

}  // namespace molmix
