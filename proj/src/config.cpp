#include "molmix/config.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace molmix {

std::string ModalityMask::label() const {
    std::string out;
    auto append = [&](const char* part) {
        if (!out.empty()) out += '+';
        out += part;
    };
    if (use_1d) append("1d");
    if (use_2d) append("2d");
    if (use_3d) append("3d");
    return out;
}

ModalityMask ModalityMask::parse(const std::string& label) {
    ModalityMask mask{false, false, false};
    std::string lowered = label;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    // table rows are written 1d+2d+3d; the CLI also accepts commas
    std::replace(lowered.begin(), lowered.end(), ',', '+');
    std::stringstream ss(lowered);
    std::string part;
    while (std::getline(ss, part, '+')) {
        if (part == "1d")
            mask.use_1d = true;
        else if (part == "2d")
            mask.use_2d = true;
        else if (part == "3d")
            mask.use_3d = true;
        else
            throw std::invalid_argument("unknown modality '" + part + "' in mask '" + label +
                                        "' (expected combinations of 1d, 2d, 3d)");
    }
    if (!mask.any())
        throw std::invalid_argument("modality mask '" + label + "' enables nothing");
    return mask;
}

std::string attention_impl_name(AttentionImpl impl) {
    return impl == AttentionImpl::Tiled ? "tiled" : "naive";
}

AttentionImpl attention_impl_parse(const std::string& name) {
    if (name == "tiled") return AttentionImpl::Tiled;
    if (name == "naive") return AttentionImpl::Naive;
    throw std::invalid_argument("unknown attention implementation '" + name +
                                "' (expected naive or tiled)");
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& message) {
        if (!ok) throw std::invalid_argument("model config: " + message);
    };
    require(d_enc > 0 && d_model > 0, "dimensions must be positive");
    require(smiles_heads > 0 && d_enc % smiles_heads == 0,
            "d_enc must be divisible by smiles_heads");
    require(downstream_heads > 0 && d_model % downstream_heads == 0,
            "d_model must be divisible by downstream_heads");
    require(gine_layers > 0, "gine_layers must be positive");
    require(schnet_blocks > 0, "schnet_blocks must be positive");
    require(schnet_rbf >= 2, "schnet_rbf must be at least 2");
    require(schnet_cutoff > 0, "schnet_cutoff must be positive");
    require(schnet_gamma > 0, "schnet_gamma must be positive");
    require(attn_block >= 1, "attn_block must be at least 1");
    require(targets >= 1, "targets must be at least 1");
    require(modalities.any(), "at least one modality must be enabled");
    require(!atom_feature_sizes.empty(), "atom_feature_sizes must not be empty");
    require(!bond_feature_sizes.empty(), "bond_feature_sizes must not be empty");
}

std::string ModelConfig::to_json_string() const {
    nlohmann::json j;
    j["d_enc"] = d_enc;
    j["d_model"] = d_model;
    j["smiles_layers"] = smiles_layers;
    j["smiles_heads"] = smiles_heads;
    j["gine_layers"] = gine_layers;
    j["schnet_blocks"] = schnet_blocks;
    j["schnet_rbf"] = schnet_rbf;
    j["schnet_cutoff"] = schnet_cutoff;
    j["schnet_gamma"] = schnet_gamma;
    j["downstream_layers"] = downstream_layers;
    j["downstream_heads"] = downstream_heads;
    j["ffn_mult"] = ffn_mult;
    j["attn_impl"] = attention_impl_name(attn_impl);
    j["attn_block"] = attn_block;
    j["modalities"] = modalities.label();
    j["targets"] = targets;
    j["atom_feature_sizes"] = atom_feature_sizes;
    j["bond_feature_sizes"] = bond_feature_sizes;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    auto set = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    set("d_enc", cfg.d_enc);
    set("d_model", cfg.d_model);
    set("smiles_layers", cfg.smiles_layers);
    set("smiles_heads", cfg.smiles_heads);
    set("gine_layers", cfg.gine_layers);
    set("schnet_blocks", cfg.schnet_blocks);
    set("schnet_rbf", cfg.schnet_rbf);
    set("schnet_cutoff", cfg.schnet_cutoff);
    set("schnet_gamma", cfg.schnet_gamma);
    set("downstream_layers", cfg.downstream_layers);
    set("downstream_heads", cfg.downstream_heads);
    set("ffn_mult", cfg.ffn_mult);
    if (j.contains("attn_impl")) cfg.attn_impl = attention_impl_parse(j.at("attn_impl"));
    set("attn_block", cfg.attn_block);
    if (j.contains("modalities")) cfg.modalities = ModalityMask::parse(j.at("modalities"));
    set("targets", cfg.targets);
    set("atom_feature_sizes", cfg.atom_feature_sizes);
    set("bond_feature_sizes", cfg.bond_feature_sizes);
    cfg.validate();
    return cfg;
}

}  // namespace molmix
