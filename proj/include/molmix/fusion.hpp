#pragma once

// Assembles the unified multimodal token sequence (CLS + per-modality token
// blocks separated by SEP tokens, each block carrying its learned modality
// encoding), runs the downstream transformer and applies the MLP readout.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "molmix/attention.hpp"
#include "molmix/config.hpp"
#include "molmix/conf3d.hpp"
#include "molmix/data.hpp"
#include "molmix/graph2d.hpp"
#include "molmix/smiles.hpp"
#include "molmix/tensor.hpp"
#include "molmix/transformer.hpp"

namespace molmix {

enum class TokenKind { Cls, Sep, Smiles1d, Graph2d, Conf3d };

struct TokenInfo {
    TokenKind kind;
    int position = -1;   // character index for 1D tokens
    int atom = -1;       // atom id for 2D/3D tokens
    int layer = -1;      // message-passing layer for 2D tokens
    int conformer = -1;  // conformer id for 3D tokens
};

template <typename S>
struct FusionSequence {
    Tensor<S> tokens;  // [L x d_model]
    std::vector<TokenInfo> info;
    std::vector<std::size_t> sep_positions;

    std::size_t length() const { return info.size(); }
};

template <typename S>
struct FusionParams {
    Tensor<S> proj_1d_w, proj_1d_b;  // d_enc -> d_model, one per modality
    Tensor<S> proj_2d_w, proj_2d_b;
    Tensor<S> proj_3d_w, proj_3d_b;
    Tensor<S> modality_1d, modality_2d, modality_3d;  // [d_model]
    Tensor<S> cls, sep;                               // [1 x d_model]
    TransformerStackParams<S> stack;
    Tensor<S> readout_w1, readout_b1, readout_w2, readout_b2;

    static FusionParams init(const ModelConfig& cfg, std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

// Projects each present-and-enabled modality to d_model, adds its modality
// encoding, and concatenates [CLS, 1D..., SEP, 2D..., SEP, 3D..., SEP],
// dropping disabled modalities together with their SEP. No positional
// encoding is added to 2D/3D tokens.
template <typename S>
FusionSequence<S> build_sequence(const Tensor<S>* h1d, const LayerEmbeddings<S>* h2d,
                                 const std::vector<Tensor<S>>* h3d, const ModalityMask& mask,
                                 const FusionParams<S>& params);

// Downstream transformer over the sequence; the CLS row feeds the readout
// MLP. Returns [1 x targets].
template <typename S>
Tensor<S> fusion_forward(const FusionSequence<S>& seq, const FusionParams<S>& params,
                         const ModelConfig& cfg);

// ---- whole model ----

template <typename S>
struct MolMixModel {
    ModelConfig config;
    SmilesVocab vocab;
    SmilesEncoderParams<S> smiles;
    GineEncoderParams<S> graph2d;
    Conf3dEncoderParams<S> conf3d;
    FusionParams<S> fusion;

    static MolMixModel init(ModelConfig cfg, SmilesVocab vocab, std::uint64_t seed);

    // Stable registry used by the optimizer and the checkpoint container.
    std::vector<NamedTensor<S>> named_params();
    void set_all_trainable(bool trainable);
    void zero_grads();

    // Runs the enabled encoders and assembles the fusion sequence.
    FusionSequence<S> sequence_for(const Molecule& mol, const ModalityMask& mask) const;

    // f_theta: encoders -> sequence -> downstream transformer -> readout.
    std::vector<double> predict(const Molecule& mol, const ModalityMask& mask) const;

    // Packed-batch forward over several molecules; returns [B x targets].
    Tensor<S> predict_batch(const std::vector<const Molecule*>& mols,
                            const ModalityMask& mask) const;

    void save(const std::string& checkpoint_path) const;
    void load(const std::string& checkpoint_path);
};

// Pre-softmax attention scores of one (layer, head) of the downstream
// transformer over a molecule's fusion sequence, clipped to [-clip, clip],
// with the SEP positions as modality boundaries.
template <typename S>
ScoreDump fusion_attention_scores(const MolMixModel<S>& model, const Molecule& mol,
                                  const ModalityMask& mask, std::size_t layer, std::size_t head,
                                  double clip = 10.0);

}  // namespace molmix
