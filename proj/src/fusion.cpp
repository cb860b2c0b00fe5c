#include "molmix/fusion.hpp"

#include <stdexcept>

namespace molmix {

template <typename S>
FusionParams<S> FusionParams<S>::init(const ModelConfig& cfg, std::mt19937_64& rng) {
    FusionParams<S> p;
    const std::size_t de = cfg.d_enc, dm = cfg.d_model;
    // modality encodings and special tokens are single Glorot rows
    auto glorot_vec = [&rng](std::size_t dim) {
        Tensor<S> row = glorot_uniform<S>(1, dim, rng);
        return Tensor<S>::from_data({dim}, {row.data().begin(), row.data().end()}, true);
    };
    p.proj_1d_w = glorot_uniform<S>(de, dm, rng);
    p.proj_1d_b = Tensor<S>::zeros({dm}, true);
    p.proj_2d_w = glorot_uniform<S>(de, dm, rng);
    p.proj_2d_b = Tensor<S>::zeros({dm}, true);
    p.proj_3d_w = glorot_uniform<S>(de, dm, rng);
    p.proj_3d_b = Tensor<S>::zeros({dm}, true);
    p.modality_1d = glorot_vec(dm);
    p.modality_2d = glorot_vec(dm);
    p.modality_3d = glorot_vec(dm);
    p.cls = glorot_uniform<S>(1, dm, rng);
    p.sep = glorot_uniform<S>(1, dm, rng);
    p.stack = TransformerStackParams<S>::init(cfg.downstream_layers, dm, cfg.downstream_heads,
                                              cfg.ffn_mult, rng);
    p.readout_w1 = glorot_uniform<S>(dm, dm, rng);
    p.readout_b1 = Tensor<S>::zeros({dm}, true);
    p.readout_w2 = glorot_uniform<S>(dm, cfg.targets, rng);
    p.readout_b2 = Tensor<S>::zeros({cfg.targets}, true);
    return p;
}

template <typename S>
void FusionParams<S>::register_params(const std::string& prefix,
                                      std::vector<NamedTensor<S>>& out) {
    out.push_back({prefix + ".proj_1d_w", proj_1d_w});
    out.push_back({prefix + ".proj_1d_b", proj_1d_b});
    out.push_back({prefix + ".proj_2d_w", proj_2d_w});
    out.push_back({prefix + ".proj_2d_b", proj_2d_b});
    out.push_back({prefix + ".proj_3d_w", proj_3d_w});
    out.push_back({prefix + ".proj_3d_b", proj_3d_b});
    out.push_back({prefix + ".modality_1d", modality_1d});
    out.push_back({prefix + ".modality_2d", modality_2d});
    out.push_back({prefix + ".modality_3d", modality_3d});
    out.push_back({prefix + ".cls", cls});
    out.push_back({prefix + ".sep", sep});
    stack.register_params(prefix + ".stack", out);
    out.push_back({prefix + ".readout_w1", readout_w1});
    out.push_back({prefix + ".readout_b1", readout_b1});
    out.push_back({prefix + ".readout_w2", readout_w2});
    out.push_back({prefix + ".readout_b2", readout_b2});
}

template <typename S>
FusionSequence<S> build_sequence(const Tensor<S>* h1d, const LayerEmbeddings<S>* h2d,
                                 const std::vector<Tensor<S>>* h3d, const ModalityMask& mask,
                                 const FusionParams<S>& params) {
    if (!mask.any()) throw std::invalid_argument("build_sequence: all modalities disabled");
    const std::size_t d_enc = params.proj_1d_w.dim(0);
    auto check_width = [&](const Tensor<S>& t, const char* what) {
        if (t.row_width() != d_enc)
            throw std::invalid_argument(std::string("build_sequence: ") + what + " width " +
                                        std::to_string(t.row_width()) + " does not match d_enc " +
                                        std::to_string(d_enc));
    };

    FusionSequence<S> seq;
    std::vector<Tensor<S>> parts;
    parts.push_back(params.cls);
    seq.info.push_back({TokenKind::Cls});

    auto append_sep = [&] {
        seq.sep_positions.push_back(seq.info.size());
        parts.push_back(params.sep);
        seq.info.push_back({TokenKind::Sep});
    };

    if (mask.use_1d) {
        if (!h1d || !h1d->defined())
            throw std::runtime_error("build_sequence: 1d enabled but no SMILES embeddings given");
        check_width(*h1d, "1d tokens");
        Tensor<S> projected = add_bias(matmul(*h1d, params.proj_1d_w), params.proj_1d_b);
        parts.push_back(add_bias(projected, params.modality_1d));
        for (std::size_t i = 0; i < h1d->dim(0); ++i) {
            TokenInfo info{TokenKind::Smiles1d};
            info.position = int(i);
            seq.info.push_back(info);
        }
        append_sep();
    }
    if (mask.use_2d) {
        if (!h2d || h2d->per_layer.empty())
            throw std::runtime_error("build_sequence: 2d enabled but no graph embeddings given");
        for (const auto& layer : h2d->per_layer) check_width(layer, "2d tokens");
        Tensor<S> stacked = concat_rows(std::span<const Tensor<S>>(h2d->per_layer));
        Tensor<S> projected = add_bias(matmul(stacked, params.proj_2d_w), params.proj_2d_b);
        parts.push_back(add_bias(projected, params.modality_2d));
        const std::size_t atoms = h2d->per_layer[0].dim(0);
        for (std::size_t j = 0; j < h2d->per_layer.size(); ++j) {
            for (std::size_t v = 0; v < atoms; ++v) {
                TokenInfo info{TokenKind::Graph2d};
                info.atom = int(v);
                info.layer = int(j + 1);  // layers are 1-based; layer 0 is the raw input
                seq.info.push_back(info);
            }
        }
        append_sep();
    }
    if (mask.use_3d) {
        if (!h3d || h3d->empty())
            throw std::runtime_error("build_sequence: 3d enabled but no conformer embeddings given");
        for (const auto& conf : *h3d) check_width(conf, "3d tokens");
        Tensor<S> stacked = concat_rows(std::span<const Tensor<S>>(*h3d));
        Tensor<S> projected = add_bias(matmul(stacked, params.proj_3d_w), params.proj_3d_b);
        parts.push_back(add_bias(projected, params.modality_3d));
        for (std::size_t c = 0; c < h3d->size(); ++c) {
            const std::size_t atoms = (*h3d)[c].dim(0);
            for (std::size_t v = 0; v < atoms; ++v) {
                TokenInfo info{TokenKind::Conf3d};
                info.atom = int(v);
                info.conformer = int(c);
                seq.info.push_back(info);
            }
        }
        append_sep();
    }

    seq.tokens = concat_rows(std::span<const Tensor<S>>(parts));
    return seq;
}

namespace {

template <typename S>
Tensor<S> readout(const Tensor<S>& cls_rows, const FusionParams<S>& params) {
    Tensor<S> hidden = relu(add_bias(matmul(cls_rows, params.readout_w1), params.readout_b1));
    return add_bias(matmul(hidden, params.readout_w2), params.readout_b2);
}

}  // namespace

template <typename S>
Tensor<S> fusion_forward(const FusionSequence<S>& seq, const FusionParams<S>& params,
                         const ModelConfig& cfg) {
    std::vector<std::size_t> offsets{0, seq.length()};
    Tensor<S> out =
        transformer_forward(params.stack, seq.tokens, offsets, cfg.attn_impl, cfg.attn_block);
    return readout(slice_rows(out, 0, 1), params);
}

// ---------------------------------------------------------------------------
// whole model

template <typename S>
MolMixModel<S> MolMixModel<S>::init(ModelConfig cfg, SmilesVocab vocab, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    MolMixModel<S> model;
    model.config = cfg;
    model.vocab = std::move(vocab);
    model.smiles = SmilesEncoderParams<S>::init(model.vocab.size(), cfg, rng);
    model.graph2d = GineEncoderParams<S>::init(cfg, rng);
    model.conf3d = Conf3dEncoderParams<S>::init(cfg, rng);
    model.fusion = FusionParams<S>::init(cfg, rng);
    return model;
}

template <typename S>
std::vector<NamedTensor<S>> MolMixModel<S>::named_params() {
    std::vector<NamedTensor<S>> out;
    smiles.register_params("smiles", out);
    graph2d.register_params("graph2d", out);
    conf3d.register_params("conf3d", out);
    fusion.register_params("fusion", out);
    return out;
}

template <typename S>
void MolMixModel<S>::set_all_trainable(bool trainable) {
    for (auto& p : named_params()) p.tensor.set_requires_grad(trainable);
}

template <typename S>
void MolMixModel<S>::zero_grads() {
    for (auto& p : named_params()) p.tensor.zero_grad();
}

template <typename S>
FusionSequence<S> MolMixModel<S>::sequence_for(const Molecule& mol,
                                               const ModalityMask& mask) const {
    if (!mask.any()) throw std::invalid_argument("predict: all modalities disabled");
    Tensor<S> h1d;
    LayerEmbeddings<S> h2d;
    std::vector<Tensor<S>> h3d;
    if (mask.use_1d) {
        if (mol.smiles.empty())
            throw std::runtime_error("molecule " + mol.id + ": 1d enabled but SMILES is empty");
        h1d = encode_smiles(tokenize(mol.smiles, vocab), smiles, config);
    }
    if (mask.use_2d) h2d = encode_graph(mol.graph, graph2d);
    if (mask.use_3d) {
        if (mol.conformers.empty())
            throw std::runtime_error("molecule " + mol.id + ": 3d enabled but no conformers");
        for (const auto& conf : mol.conformers)
            h3d.push_back(encode_conformer(mol.graph, conf, conf3d));
    }
    return build_sequence(mask.use_1d ? &h1d : nullptr, mask.use_2d ? &h2d : nullptr,
                          mask.use_3d ? &h3d : nullptr, mask, fusion);
}

template <typename S>
std::vector<double> MolMixModel<S>::predict(const Molecule& mol, const ModalityMask& mask) const {
    Tensor<S> out = fusion_forward(sequence_for(mol, mask), fusion, config);
    std::vector<double> values;
    for (S v : out.data()) values.push_back(double(v));
    return values;
}

template <typename S>
Tensor<S> MolMixModel<S>::predict_batch(const std::vector<const Molecule*>& mols,
                                        const ModalityMask& mask) const {
    if (mols.empty()) throw std::invalid_argument("predict_batch: no molecules");
    std::vector<Tensor<S>> all_tokens;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> cls_positions;
    for (const Molecule* mol : mols) {
        FusionSequence<S> seq = sequence_for(*mol, mask);
        cls_positions.push_back(offsets.back());
        offsets.push_back(offsets.back() + seq.length());
        all_tokens.push_back(std::move(seq.tokens));
    }
    Tensor<S> packed = concat_rows(std::span<const Tensor<S>>(all_tokens));
    Tensor<S> out =
        transformer_forward(fusion.stack, packed, offsets, config.attn_impl, config.attn_block);
    Tensor<S> cls_rows = gather_rows(out, std::move(cls_positions));
    return readout(cls_rows, fusion);
}

template <typename S>
void MolMixModel<S>::save(const std::string& checkpoint_path) const {
    auto params = const_cast<MolMixModel<S>*>(this)->named_params();
    save_checkpoint<S>(checkpoint_path, params);
}

template <typename S>
void MolMixModel<S>::load(const std::string& checkpoint_path) {
    auto arrays = load_checkpoint_arrays<S>(checkpoint_path);
    auto params = named_params();
    if (arrays.size() != params.size())
        throw std::runtime_error("checkpoint " + checkpoint_path + " holds " +
                                 std::to_string(arrays.size()) + " arrays, model expects " +
                                 std::to_string(params.size()));
    for (auto& p : params) {
        auto it = arrays.find(p.name);
        if (it == arrays.end())
            throw std::runtime_error("checkpoint " + checkpoint_path + " is missing '" + p.name +
                                     "'");
        if (it->second.size() != p.tensor.numel())
            throw std::runtime_error("checkpoint array '" + p.name + "' has " +
                                     std::to_string(it->second.size()) + " elements, model needs " +
                                     std::to_string(p.tensor.numel()));
        std::copy(it->second.begin(), it->second.end(), p.tensor.mutable_data().begin());
    }
}

template <typename S>
ScoreDump fusion_attention_scores(const MolMixModel<S>& model, const Molecule& mol,
                                  const ModalityMask& mask, std::size_t layer, std::size_t head,
                                  double clip) {
    if (layer >= model.config.downstream_layers)
        throw std::out_of_range("attention scores: layer " + std::to_string(layer) + " >= " +
                                std::to_string(model.config.downstream_layers));
    if (head >= model.config.downstream_heads)
        throw std::out_of_range("attention scores: head " + std::to_string(head) + " >= " +
                                std::to_string(model.config.downstream_heads));
    FusionSequence<S> seq = model.sequence_for(mol, mask);
    std::vector<std::size_t> offsets{0, seq.length()};
    std::vector<Tensor<S>> attn_inputs;
    transformer_forward(model.fusion.stack, seq.tokens, offsets, model.config.attn_impl,
                        model.config.attn_block, &attn_inputs);
    const auto& attn = model.fusion.stack.layers[layer].attn;
    Tensor<S> qp = add_bias(matmul(attn_inputs[layer], attn.wq), attn.bq);
    Tensor<S> kp = add_bias(matmul(attn_inputs[layer], attn.wk), attn.bk);
    return dump_scores(qp, kp, offsets, 0, model.config.downstream_heads, head, clip,
                       seq.sep_positions);
}

#define MOLMIX_INSTANTIATE_FUSION(S)                                                              \
    template struct FusionParams<S>;                                                              \
    template struct FusionSequence<S>;                                                            \
    template struct MolMixModel<S>;                                                               \
    template FusionSequence<S> build_sequence(const Tensor<S>*, const LayerEmbeddings<S>*,        \
                                              const std::vector<Tensor<S>>*,                      \
                                              const ModalityMask&, const FusionParams<S>&);       \
    template Tensor<S> fusion_forward(const FusionSequence<S>&, const FusionParams<S>&,           \
                                      const ModelConfig&);                                        \
    template ScoreDump fusion_attention_scores(const MolMixModel<S>&, const Molecule&,            \
                                               const ModalityMask&, std::size_t, std::size_t,     \
                                               double);

MOLMIX_INSTANTIATE_FUSION(float)
MOLMIX_INSTANTIATE_FUSION(double)

#undef MOLMIX_INSTANTIATE_FUSION

}  // namespace molmix
