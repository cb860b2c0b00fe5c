#pragma once

// SchNet-style E(3)-invariant conformer encoder: continuous-filter
// convolutions over interatomic distances inside a smooth radial cutoff.
// Coordinates enter only through pairwise distances, which are computed in
// double precision regardless of the working scalar type.

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "molmix/config.hpp"
#include "molmix/graph2d.hpp"
#include "molmix/tensor.hpp"

namespace molmix {

// One 3D arrangement of a molecule's atoms, coordinates in Angstrom, atom
// order identical to the parent graph.
struct Conformer {
    std::vector<std::array<double, 3>> coords;

    std::size_t num_atoms() const { return coords.size(); }
};

// Gaussian radial basis with evenly spaced centers in [0, cutoff].
struct RadialBasis {
    std::size_t count = 0;
    double cutoff = 0;
    double gamma = 0;
    std::vector<double> centers;

    static RadialBasis make(std::size_t count, double cutoff, double gamma);
    void expand(double r, double* out) const;  // out[count]
};

// 0.5 (cos(pi r / r_cut) + 1) below the cutoff, 0 beyond; C1 at r_cut.
double cosine_cutoff(double r, double r_cut);

template <typename S>
struct SchnetBlockParams {
    Tensor<S> in_w, in_b;                          // atomwise d -> d
    Tensor<S> filt_w1, filt_b1, filt_w2, filt_b2;  // filter net: G -> d -> d
    Tensor<S> out_w1, out_b1, out_w2, out_b2;      // atomwise MLP d -> d
};

template <typename S>
struct Conf3dEncoderParams {
    FeatureEmbedding<S> atom_embed;
    std::vector<SchnetBlockParams<S>> blocks;
    RadialBasis rbf;

    static Conf3dEncoderParams init(const ModelConfig& cfg, std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

// Precomputed neighbor pairs of one conformer within the cutoff.
struct DistanceTable {
    std::vector<std::size_t> src, dst;   // ordered pairs, src != dst
    std::vector<double> distances;
    std::vector<double> cutoff_weights;
};

DistanceTable build_distance_table(const Conformer& conf, double cutoff);

// Continuous-filter convolution block: messages (W_in h_u) ⊙ filter(RBF(r))
// · cutoff(r) scatter-summed into each atom, then an atomwise MLP with a
// residual connection.
template <typename S>
Tensor<S> interaction_block(const Tensor<S>& h, const DistanceTable& table,
                            const RadialBasis& rbf, const SchnetBlockParams<S>& params);

// Embeds atom features and runs every interaction block.
template <typename S>
Tensor<S> encode_conformer(const MolGraph& graph, const Conformer& conf,
                           const Conf3dEncoderParams<S>& params);

}  // namespace molmix
