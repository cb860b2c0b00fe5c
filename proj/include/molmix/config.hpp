#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "molmix/attention.hpp"

namespace molmix {

// Which token modalities feed the downstream transformer.
struct ModalityMask {
    bool use_1d = true;
    bool use_2d = true;
    bool use_3d = true;

    bool any() const { return use_1d || use_2d || use_3d; }
    std::string label() const;
    // Parses labels like "1d", "3d", "1d+2d+3d" (case-insensitive).
    static ModalityMask parse(const std::string& label);

    bool operator==(const ModalityMask&) const = default;
};

// All architecture hyperparameters. Defaults follow the reference setup:
// encoders at hidden dimension 128 (SMILES transformer with two layers and
// four heads, six GINE layers), tokens projected to a 512-dimensional space,
// downstream transformer with eight heads and six layers.
struct ModelConfig {
    std::size_t d_enc = 128;
    std::size_t d_model = 512;

    std::size_t smiles_layers = 2;
    std::size_t smiles_heads = 4;

    std::size_t gine_layers = 6;

    std::size_t schnet_blocks = 3;
    std::size_t schnet_rbf = 50;
    double schnet_cutoff = 5.0;   // Angstrom
    double schnet_gamma = 10.0;   // 1/Angstrom^2

    std::size_t downstream_layers = 6;
    std::size_t downstream_heads = 8;
    std::size_t ffn_mult = 4;

    AttentionImpl attn_impl = AttentionImpl::Tiled;
    std::size_t attn_block = kDefaultAttentionBlock;

    ModalityMask modalities;
    std::size_t targets = 1;

    // Cardinality of each categorical feature column in the molecule files.
    std::vector<std::size_t> atom_feature_sizes = {119, 8, 11};
    std::vector<std::size_t> bond_feature_sizes = {5};

    void validate() const;
    std::string to_json_string() const;
    static ModelConfig from_json_string(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

std::string attention_impl_name(AttentionImpl impl);
AttentionImpl attention_impl_parse(const std::string& name);

}  // namespace molmix
