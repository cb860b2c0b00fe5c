// Data module tests: generator determinism and targets, JSONL round-trips,
// loader validation and deterministic splits.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "molmix/data.hpp"
#include "molmix/runio.hpp"

using namespace molmix;

namespace {

namespace fs = std::filesystem;

std::string temp_file(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("two-atom geometry target is the bond distance") {
    Conformer conf;
    conf.coords = {{0, 0, 0}, {1.5, 0, 0}};
    CHECK(mean_pairwise_distance(conf) == doctest::Approx(1.5));
}

TEST_CASE("wiener index of a 3-path is 4") {
    MolGraph g;
    g.num_atoms = 3;
    g.atom_features = {{6, 1, 5}, {6, 2, 5}, {6, 1, 5}};
    g.add_bond(0, 1, {1});
    g.add_bond(1, 2, {1});
    CHECK(wiener_index(g) == 4);
}

TEST_CASE("generator is byte-deterministic for a fixed seed") {
    GenConfig cfg;
    cfg.count = 20;
    cfg.seed = 42;
    cfg.k_conformers = 2;
    Dataset a = gen_synthetic(cfg);
    Dataset b = gen_synthetic(cfg);
    const std::string pa = temp_file("molmix_gen_a.jsonl");
    const std::string pb = temp_file("molmix_gen_b.jsonl");
    save_jsonl(a, pa);
    save_jsonl(b, pb);
    CHECK(read_text_file(pa) == read_text_file(pb));
    fs::remove(pa);
    fs::remove(pb);
}

TEST_CASE("every generated molecule passes validation and target definitions") {
    GenConfig cfg;
    cfg.count = 40;
    cfg.seed = 7;
    cfg.k_conformers = 3;
    Dataset ds = gen_synthetic(cfg);
    REQUIRE(ds.target_names == std::vector<std::string>{"geom", "topo", "str", "mix"});
    for (const auto& mol : ds.molecules) {
        mol.validate();
        CHECK(mol.conformers.size() == 3);
        CHECK(mol.targets[0] == doctest::Approx(mean_pairwise_distance(mol.conformers[0])));
        const double pairs =
            double(mol.graph.num_atoms) * double(mol.graph.num_atoms - 1) / 2.0;
        CHECK(mol.targets[1] == doctest::Approx(double(wiener_index(mol.graph)) / pairs));
        double marked = 0;
        for (char c : mol.smiles)
            if (c == 'N') marked += 1;
        CHECK(mol.targets[2] == doctest::Approx(marked / double(mol.smiles.size())));
        CHECK(mol.targets[3] ==
              doctest::Approx((mol.targets[0] + mol.targets[1] + mol.targets[2]) / 3.0));
    }
}

TEST_CASE("geometry target is invariant under rigid motions") {
    GenConfig cfg;
    cfg.count = 5;
    cfg.seed = 11;
    Dataset ds = gen_synthetic(cfg);
    std::mt19937_64 rng(3);
    for (const auto& mol : ds.molecules) {
        auto moved = apply_rigid_motion(mol.conformers[0], random_rotation(rng), {3.0, -1.0, 9.0});
        CHECK(mean_pairwise_distance(moved) ==
              doctest::Approx(mol.targets[0]).epsilon(1e-12));
    }
}

TEST_CASE("JSONL round-trip of 50 molecules is lossless") {
    GenConfig cfg;
    cfg.count = 50;
    cfg.seed = 13;
    cfg.k_conformers = 2;
    Dataset ds = gen_synthetic(cfg);
    const std::string path = temp_file("molmix_roundtrip.jsonl");
    save_jsonl(ds, path);
    save_dataset_meta(ds, path, cfg.to_json_string());
    Dataset loaded = load_jsonl(path);
    REQUIRE(loaded.size() == ds.size());
    CHECK(loaded.target_names == ds.target_names);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& a = ds.molecules[i];
        const auto& b = loaded.molecules[i];
        CHECK(a.id == b.id);
        CHECK(a.smiles == b.smiles);
        CHECK(a.graph.atom_features == b.graph.atom_features);
        CHECK(a.graph.edge_src == b.graph.edge_src);
        CHECK(a.graph.edge_dst == b.graph.edge_dst);
        CHECK(a.graph.edge_features == b.graph.edge_features);
        CHECK(a.targets == b.targets);
        REQUIRE(a.conformers.size() == b.conformers.size());
        for (std::size_t c = 0; c < a.conformers.size(); ++c)
            CHECK(a.conformers[c].coords == b.conformers[c].coords);
    }
    // saving the loaded dataset again reproduces the file byte for byte
    const std::string path2 = temp_file("molmix_roundtrip2.jsonl");
    save_jsonl(loaded, path2);
    CHECK(read_text_file(path) == read_text_file(path2));
    fs::remove(path);
    fs::remove(path + ".meta.json");
    fs::remove(path2);
}

TEST_CASE("loader rejects malformed inputs with line numbers and ids") {
    const std::string path = temp_file("molmix_bad.jsonl");

    write_text_file(path, "");
    CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("no molecules"),
                         std::runtime_error);

    write_text_file(path, "{not json\n");
    CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("line 1"), std::runtime_error);

    // unknown bond type
    write_text_file(path,
                    R"({"id":"m0","smiles":"CC","atoms":[[6,1,5],[6,1,5]],"bonds":[[0,1,9]],)"
                    R"("conformers":[],"targets":[0.0]})"
                    "\n");
    CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("unknown bond type"),
                         std::runtime_error);

    // conformer size mismatch names the molecule
    write_text_file(path,
                    R"({"id":"mol_x","smiles":"CC","atoms":[[6,1,5],[6,1,5]],"bonds":[[0,1,1]],)"
                    R"("conformers":[[[0,0,0]]],"targets":[0.0]})"
                    "\n");
    CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("mol_x"), std::runtime_error);

    // a record with zero conformers loads fine
    write_text_file(path,
                    R"({"id":"m0","smiles":"CC","atoms":[[6,1,5],[6,1,5]],"bonds":[[0,1,1]],)"
                    R"("conformers":[],"targets":[0.5]})"
                    "\n");
    Dataset ds = load_jsonl(path);
    CHECK(ds.molecules[0].conformers.empty());
    fs::remove(path);
}

TEST_CASE("deterministic split fractions and byte-identical split files") {
    GenConfig cfg;
    cfg.count = 100;
    cfg.seed = 17;
    Dataset ds = gen_synthetic(cfg);

    Dataset all_train = split_deterministic(ds, {1.0, 0.0, 0.0}, 5);
    CHECK(all_train.indices_of(Split::Train).size() == 100);

    Dataset split = split_deterministic(ds, {0.8, 0.1, 0.1}, 5);
    CHECK(split.indices_of(Split::Train).size() == 80);
    CHECK(split.indices_of(Split::Val).size() == 10);
    CHECK(split.indices_of(Split::Test).size() == 10);

    const std::string pa = temp_file("molmix_split_a.json");
    const std::string pb = temp_file("molmix_split_b.json");
    save_split(split, pa);
    save_split(split_deterministic(ds, {0.8, 0.1, 0.1}, 5), pb);
    CHECK(read_text_file(pa) == read_text_file(pb));

    // split files round-trip through apply_split_file
    Dataset reloaded = gen_synthetic(cfg);
    apply_split_file(reloaded, pa);
    CHECK(reloaded.indices_of(Split::Val) == split.indices_of(Split::Val));
    fs::remove(pa);
    fs::remove(pb);

    CHECK_THROWS_AS(split_deterministic(ds, {0.5, 0.1, 0.1}, 5), std::invalid_argument);
}

TEST_CASE("normalization uses train-split statistics only") {
    GenConfig cfg;
    cfg.count = 50;
    cfg.seed = 23;
    Dataset ds = split_deterministic(gen_synthetic(cfg), {0.6, 0.2, 0.2}, 1);
    ds.compute_normalization();
    auto train = ds.indices_of(Split::Train);
    double mean = 0;
    for (std::size_t i : train) mean += ds.molecules[i].targets[0];
    mean /= double(train.size());
    CHECK(ds.target_mean[0] == doctest::Approx(mean));
    CHECK(ds.denormalize(ds.normalize(3.7, 0), 0) == doctest::Approx(3.7));
}

TEST_CASE("generator config round-trips through JSON") {
    GenConfig cfg;
    cfg.count = 9;
    cfg.atoms_min = 3;
    cfg.atoms_max = 5;
    cfg.noise_sigma = 0.4;
    cfg.targets = {"geom", "mix"};
    cfg.seed = 77;
    GenConfig parsed = GenConfig::from_json_string(cfg.to_json_string());
    CHECK(parsed.count == 9);
    CHECK(parsed.atoms_min == 3);
    CHECK(parsed.noise_sigma == 0.4);
    CHECK(parsed.targets == std::vector<std::string>{"geom", "mix"});
    CHECK(parsed.seed == 77);
}
