#pragma once

// GINE message-passing encoder over the bond graph. Emits per-atom
// embeddings at every layer so the fusion sequence can use all of them.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "molmix/config.hpp"
#include "molmix/tensor.hpp"
#include "molmix/transformer.hpp"

namespace molmix {

// Attributed bond graph. Categorical feature columns per atom and per
// directed edge; every bond is stored in both directions with identical
// features.
struct MolGraph {
    std::size_t num_atoms = 0;
    std::vector<std::vector<int>> atom_features;   // [V][f_a]
    std::vector<std::size_t> edge_src, edge_dst;   // directed, both copies
    std::vector<std::vector<int>> edge_features;   // [E][f_e]

    std::size_t num_edges() const { return edge_src.size(); }
    // Checks index ranges, bans self-loops and verifies that every directed
    // edge has its reverse with identical features.
    void validate() const;
    // Mirrors a once-listed undirected bond into both directions.
    void add_bond(std::size_t u, std::size_t v, std::vector<int> features);
};

// Sum of one learned lookup table per categorical feature column.
template <typename S>
struct FeatureEmbedding {
    std::vector<Tensor<S>> tables;  // per column: [cardinality x d]

    static FeatureEmbedding init(const std::vector<std::size_t>& cardinalities, std::size_t d,
                                 std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
    Tensor<S> embed(const std::vector<std::vector<int>>& features) const;
};

template <typename S>
struct GineLayerParams {
    Tensor<S> eps;                       // learned scalar, initialized to 0
    Tensor<S> edge_w, edge_b;            // edge feature projection d -> d
    Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // d -> 2d -> d
    LayerNormParams<S> ln;               // applied by the encoder block
};

template <typename S>
struct GineEncoderParams {
    FeatureEmbedding<S> atom_embed;
    FeatureEmbedding<S> bond_embed;
    std::vector<GineLayerParams<S>> layers;

    static GineEncoderParams init(const ModelConfig& cfg, std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

// Per-atom embeddings after each message-passing layer.
template <typename S>
struct LayerEmbeddings {
    std::vector<Tensor<S>> per_layer;  // J tensors of [V x d]
};

// One GINE update: MLP((1 + eps) * h_v + sum_u ReLU(h_u + W_e e_uv)).
// edge_embed holds the embedded bond features, one row per directed edge.
template <typename S>
Tensor<S> gine_layer(const Tensor<S>& h, const MolGraph& graph, const Tensor<S>& edge_embed,
                     const GineLayerParams<S>& params);

// Runs the full stack; each block adds a residual connection and layer norm
// around the GINE update. Returns all post-block embeddings, layers 1..J.
template <typename S>
LayerEmbeddings<S> encode_graph(const MolGraph& graph, const GineEncoderParams<S>& params);

}  // namespace molmix
