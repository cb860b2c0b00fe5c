// End-to-end CLI tests driving run_cli the way the binary would be invoked:
// generation determinism, training outputs, eval reproduction, manifest
// replay, gradcheck exit codes, attention benchmarks and score dumps.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "molmix/cli.hpp"
#include "molmix/config.hpp"
#include "molmix/runio.hpp"

using namespace molmix;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& leaf) const { return (path / leaf).string(); }
};

int cli(std::initializer_list<std::string> args) { return run_cli(std::vector<std::string>(args)); }

std::vector<std::string> small_model_flags() {
    return {"--d-enc", "16",  "--d-model", "32", "--smiles-layers", "1", "--smiles-heads", "2",
            "--gine-layers", "2", "--schnet-blocks", "1", "--schnet-rbf", "8",
            "--downstream-layers", "2", "--downstream-heads", "4", "--ffn-mult", "2",
            "--attn-block", "8"};
}

int cli_train_small(const std::string& data, const std::string& out,
                    std::initializer_list<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--data", data, "--out", out, "--max-steps", "12",
                                  "--eval-every", "4", "--batch-tokens", "512", "--target",
                                  "mix", "--seed", "3"};
    for (const auto& flag : small_model_flags()) args.push_back(flag);
    for (const auto& e : extra) args.push_back(e);
    return run_cli(args);
}

}  // namespace

TEST_CASE("gen is byte-deterministic and honors --target") {
    TempDir dir("molmix_cli_gen");
    CHECK(cli({"gen", "--out", dir.sub("a"), "--count", "12", "--seed", "5"}) == 0);
    CHECK(cli({"gen", "--out", dir.sub("b"), "--count", "12", "--seed", "5"}) == 0);
    CHECK(read_text_file(dir.sub("a") + "/dataset.jsonl") ==
          read_text_file(dir.sub("b") + "/dataset.jsonl"));

    CHECK(cli({"gen", "--out", dir.sub("mix"), "--count", "4", "--seed", "1", "--target",
               "mix"}) == 0);
    auto meta = nlohmann::json::parse(read_text_file(dir.sub("mix") + "/dataset.jsonl.meta.json"));
    CHECK(meta.at("target_names") == nlohmann::json::array({"mix"}));
}

TEST_CASE("unknown flags are usage errors") {
    CHECK(cli({"gen", "--out", "/tmp/x", "--no-such-flag"}) != 0);
    CHECK(cli({"definitely-not-a-command"}) != 0);
}

TEST_CASE("train writes manifest, metrics, checkpoint and report; eval reproduces the metric") {
    TempDir dir("molmix_cli_train");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "16", "--atoms-min", "4",
                 "--atoms-max", "7", "--seed", "2"}) == 0);
    const std::string data = dir.sub("data") + "/dataset.jsonl";
    REQUIRE(cli_train_small(data, dir.sub("run")) == 0);

    for (const char* name : {"manifest.json", "model.json", "vocab.txt", "split.json",
                             "metrics.csv", "checkpoint.bin", "report.json"})
        CHECK(fs::exists(fs::path(dir.sub("run")) / name));

    auto report = nlohmann::json::parse(read_text_file(dir.sub("run") + "/report.json"));
    const double stored = report.at("best_val").get<double>();

    REQUIRE(cli({"eval", "--run", dir.sub("run"), "--split", "val", "--out",
                 dir.sub("eval")}) == 0);
    auto eval = nlohmann::json::parse(read_text_file(dir.sub("eval") + "/eval.json"));
    CHECK(eval.at("value").get<double>() == stored);
}

TEST_CASE("default train dims follow the reference setup (128 enc, 512 model)") {
    TempDir dir("molmix_cli_defaults");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "6", "--atoms-min", "3",
                 "--atoms-max", "4", "--seed", "4"}) == 0);
    REQUIRE(cli({"train", "--data", dir.sub("data") + "/dataset.jsonl", "--out", dir.sub("run"),
                 "--max-steps", "1", "--eval-every", "1", "--split-fracs", "0.5,0.25,0.25",
                 "--target", "mix", "--modalities", "1d,2d,3d", "--seed", "0"}) == 0);
    auto manifest = RunManifest::load(dir.sub("run") + "/manifest.json");
    ModelConfig cfg = ModelConfig::from_json_string(manifest.model_config_json);
    CHECK(cfg.d_enc == 128);
    CHECK(cfg.d_model == 512);
    CHECK(cfg.downstream_layers == 6);
    CHECK(cfg.downstream_heads == 8);
    CHECK(cfg.modalities.label() == "1d+2d+3d");
}

TEST_CASE("a manifest alone re-executes the run identically") {
    TempDir dir("molmix_cli_replay");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "14", "--atoms-min", "4",
                 "--atoms-max", "6", "--seed", "8"}) == 0);
    const std::string data = dir.sub("data") + "/dataset.jsonl";
    REQUIRE(cli_train_small(data, dir.sub("run1")) == 0);

    auto manifest = RunManifest::load(dir.sub("run1") + "/manifest.json");
    CHECK(manifest.dataset_hash == sha256_file(data));

    // rebuild the argument vector from the manifest, pointing at a new --out
    std::vector<std::string> argv = manifest.argv;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i)
        if (argv[i] == "--out") argv[i + 1] = dir.sub("run2");
    REQUIRE(run_cli(argv) == 0);

    CHECK(read_text_file(dir.sub("run1") + "/metrics.csv") ==
          read_text_file(dir.sub("run2") + "/metrics.csv"));
    std::ifstream a(dir.sub("run1") + "/checkpoint.bin", std::ios::binary);
    std::ifstream b(dir.sub("run2") + "/checkpoint.bin", std::ios::binary);
    std::ostringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

TEST_CASE("training with 3d enabled on a conformer-free dataset is a clear data error") {
    TempDir dir("molmix_cli_noconf");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "8", "--k-conformers", "0",
                 "--seed", "6"}) == 0);
    CHECK(cli_train_small(dir.sub("data") + "/dataset.jsonl", dir.sub("run")) != 0);
    // the same dataset trains fine without the 3d modality
    CHECK(cli_train_small(dir.sub("data") + "/dataset.jsonl", dir.sub("run2"),
                          {"--modalities", "1d+2d"}) == 0);
}

TEST_CASE("ablate emits one table row per mask and seed") {
    TempDir dir("molmix_cli_ablate");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "12", "--atoms-min", "4",
                 "--atoms-max", "6", "--seed", "9"}) == 0);
    std::vector<std::string> args{"ablate", "--data", dir.sub("data") + "/dataset.jsonl",
                                  "--out", dir.sub("run"), "--masks", "3d", "--seeds", "0,1",
                                  "--max-steps", "6", "--eval-every", "3", "--batch-tokens",
                                  "512", "--target", "geom", "--seed", "0"};
    for (const auto& flag : small_model_flags()) args.push_back(flag);
    REQUIRE(run_cli(args) == 0);
    std::istringstream csv(read_text_file(dir.sub("run") + "/ablation.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "mask,seed,best_val,test_metric");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("gradcheck passes by default and fails on a corrupted group") {
    CHECK(cli({"gradcheck", "--atoms", "5", "--max-entries", "8", "--seed", "12"}) == 0);
    CHECK(cli({"gradcheck", "--atoms", "5", "--max-entries", "8", "--seed", "12",
               "--corrupt-group", "fusion.readout_w2"}) == 1);
    CHECK(cli({"gradcheck", "--atoms", "20"}) != 0);  // too large for the forced small config
}

TEST_CASE("attnbench reports the quadratic versus linear scratch laws") {
    TempDir dir("molmix_cli_attnbench");
    REQUIRE(cli({"attnbench", "--lengths", "64,128", "--segments", "1", "--heads", "4",
                 "--block", "16", "--d", "32", "--out", dir.sub("bench")}) == 0);
    std::istringstream csv(read_text_file(dir.sub("bench") + "/attnbench.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "impl,length,segments,peak_scratch_elements,flops_estimate");
    std::map<std::pair<std::string, std::string>, double> peaks;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string impl, length, segments, peak, flops;
        std::getline(row, impl, ',');
        std::getline(row, length, ',');
        std::getline(row, segments, ',');
        std::getline(row, peak, ',');
        std::getline(row, flops, ',');
        peaks[{impl, length}] = std::stod(peak);
    }
    CHECK(peaks.at({"tiled", "64"}) < peaks.at({"naive", "64"}));
    const double naive_ratio = peaks.at({"naive", "128"}) / peaks.at({"naive", "64"});
    const double tiled_ratio = peaks.at({"tiled", "128"}) / peaks.at({"tiled", "64"});
    CHECK(naive_ratio > 3.0);   // quadratic law
    CHECK(tiled_ratio < 2.3);   // linear law
}

TEST_CASE("attndump writes layers x heads clipped matrices with SEP boundaries") {
    TempDir dir("molmix_cli_attndump");
    REQUIRE(cli({"gen", "--out", dir.sub("data"), "--count", "10", "--atoms-min", "4",
                 "--atoms-max", "6", "--seed", "14"}) == 0);
    const std::string data = dir.sub("data") + "/dataset.jsonl";
    REQUIRE(cli_train_small(data, dir.sub("run")) == 0);
    REQUIRE(cli({"attndump", "--run", dir.sub("run"), "--molecule", "mol000001", "--out",
                 dir.sub("dump")}) == 0);

    // 2 downstream layers x 4 heads in the small training config
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dir.sub("dump"))) {
        ++files;
        std::ifstream is(entry.path());
        std::string header;
        std::getline(is, header);
        CHECK(header.rfind("# ", 0) == 0);
        CHECK(header.find("boundaries=") != std::string::npos);
        double value;
        while (is >> value) {
            CHECK(value <= 10.0);
            CHECK(value >= -10.0);
        }
    }
    CHECK(files == 8);
}
