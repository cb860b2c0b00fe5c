#pragma once

// Pre-layer-norm transformer stack over packed variable-length sequences,
// shared by the SMILES encoder and the downstream multimodal transformer.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "molmix/attention.hpp"
#include "molmix/tensor.hpp"

namespace molmix {

constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct LayerNormParams {
    Tensor<S> gamma, beta;

    static LayerNormParams init(std::size_t d);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

template <typename S>
struct TransformerLayerParams {
    LayerNormParams<S> ln1, ln2;
    AttentionParams<S> attn;
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename S>
struct TransformerStackParams {
    std::vector<TransformerLayerParams<S>> layers;
    LayerNormParams<S> final_ln;
    std::size_t heads = 1;

    static TransformerStackParams init(std::size_t num_layers, std::size_t d, std::size_t heads,
                                       std::size_t ffn_mult, std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

// Runs the stack over packed segments. When attn_inputs is non-null it
// receives, per layer, the normalized tokens that feed that layer's
// attention (used to recompute scores for dumps).
template <typename S>
Tensor<S> transformer_forward(const TransformerStackParams<S>& stack, const Tensor<S>& tokens,
                              const std::vector<std::size_t>& seq_offsets, AttentionImpl impl,
                              std::size_t block, std::vector<Tensor<S>>* attn_inputs = nullptr);

// Fixed sinusoidal positional encodings, one row per position.
template <typename S>
Tensor<S> sinusoidal_positional_encoding(std::size_t length, std::size_t d);

}  // namespace molmix
