#pragma once

// Molecule data model, JSONL ingestion, deterministic splits and a synthetic
// molecule generator with targets of controllable modality dependence.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "molmix/conf3d.hpp"
#include "molmix/graph2d.hpp"

namespace molmix {

struct Molecule {
    std::string id;
    std::string smiles;
    MolGraph graph;
    std::vector<Conformer> conformers;
    std::vector<double> targets;

    void validate() const;
};

enum class Split { Train, Val, Test };

const char* split_name(Split s);

struct Dataset {
    std::vector<Molecule> molecules;
    std::vector<std::string> target_names;
    std::vector<Split> split;            // parallel to molecules
    std::vector<double> target_mean;     // train-split statistics
    std::vector<double> target_std;

    std::size_t size() const { return molecules.size(); }
    std::vector<std::size_t> indices_of(Split s) const;
    // z-score statistics from the train split only
    void compute_normalization();
    double normalize(double value, std::size_t target) const;
    double denormalize(double value, std::size_t target) const;
};

// One molecule per line:
// {"id": str, "smiles": str, "atoms": [[ints]], "bonds": [[u, v, type]],
//  "conformers": [[[x,y,z],...],...], "targets": [floats]}
// Coordinates in Angstrom; bonds listed once, the loader mirrors them.
Dataset load_jsonl(const std::string& path);
void save_jsonl(const Dataset& ds, const std::string& path);

// Sidecar next to the dataset ("<path>.meta.json") naming the target columns
// and echoing the generator config; load_jsonl picks it up when present.
void save_dataset_meta(const Dataset& ds, const std::string& dataset_path,
                       const std::string& generator_config_json);

// Seeded shuffle then partition. Fractions must sum to 1.
Dataset split_deterministic(Dataset ds, std::array<double, 3> fractions, std::uint64_t seed);

// {"train": [ids], "val": [ids], "test": [ids]}
void save_split(const Dataset& ds, const std::string& path);
void apply_split_file(Dataset& ds, const std::string& path);

// ---- synthetic generator ----

struct GenConfig {
    std::size_t count = 100;
    std::size_t atoms_min = 4;
    std::size_t atoms_max = 12;
    std::size_t k_conformers = 1;
    double noise_sigma = 0.25;      // per-conformer coordinate jitter, Angstrom
    double ring_probability = 0.3;  // chance of closing one ring
    char marked_char = 'N';         // the character counted by the str target
    std::vector<std::string> targets = {"geom", "topo", "str", "mix"};
    std::uint64_t seed = 0;

    std::string to_json_string() const;
    static GenConfig from_json_string(const std::string& text);
};

// Random chemically-plausible trees or single-ring graphs with a consistent
// SMILES string, spring-relaxed base coordinates, k jittered conformers and
// targets: geom (mean pairwise distance of conformer 1, 3D-recoverable),
// topo (Wiener index over pair count, 2D-recoverable), str (marked-character
// fraction of the SMILES, 1D-recoverable), mix (their mean).
Dataset gen_synthetic(const GenConfig& cfg);

// Exposed for tests: sum of shortest-path distances over unordered pairs.
std::size_t wiener_index(const MolGraph& graph);
double mean_pairwise_distance(const Conformer& conf);

// ---- rigid motions (shared by the generator and invariance tests) ----

using Rotation = std::array<std::array<double, 3>, 3>;

// Uniform-ish random rotation from the QR factorization of a Gaussian
// matrix, determinant fixed to +1.
Rotation random_rotation(std::mt19937_64& rng);
Conformer apply_rigid_motion(const Conformer& conf, const Rotation& rot,
                             const std::array<double, 3>& translation);

}  // namespace molmix
