#include "molmix/graph2d.hpp"

#include <map>
#include <stdexcept>

namespace molmix {

void MolGraph::validate() const {
    if (atom_features.size() != num_atoms)
        throw std::invalid_argument("graph: " + std::to_string(atom_features.size()) +
                                    " atom feature rows for " + std::to_string(num_atoms) +
                                    " atoms");
    if (edge_src.size() != edge_dst.size() || edge_src.size() != edge_features.size())
        throw std::invalid_argument("graph: edge arrays disagree in length");
    std::map<std::pair<std::size_t, std::size_t>, std::vector<int>> seen;
    for (std::size_t e = 0; e < edge_src.size(); ++e) {
        const std::size_t u = edge_src[e], v = edge_dst[e];
        if (u >= num_atoms || v >= num_atoms)
            throw std::invalid_argument("graph: edge " + std::to_string(e) +
                                        " references atom outside [0, " +
                                        std::to_string(num_atoms) + ")");
        if (u == v)
            throw std::invalid_argument("graph: self-loop on atom " + std::to_string(u));
        seen[{u, v}] = edge_features[e];
    }
    for (const auto& [key, features] : seen) {
        auto rev = seen.find({key.second, key.first});
        if (rev == seen.end())
            throw std::invalid_argument("graph: edge (" + std::to_string(key.first) + ", " +
                                        std::to_string(key.second) + ") lacks its reverse");
        if (rev->second != features)
            throw std::invalid_argument("graph: edge (" + std::to_string(key.first) + ", " +
                                        std::to_string(key.second) +
                                        ") and its reverse carry different features");
    }
}

void MolGraph::add_bond(std::size_t u, std::size_t v, std::vector<int> features) {
    edge_src.push_back(u);
    edge_dst.push_back(v);
    edge_features.push_back(features);
    edge_src.push_back(v);
    edge_dst.push_back(u);
    edge_features.push_back(std::move(features));
}

template <typename S>
FeatureEmbedding<S> FeatureEmbedding<S>::init(const std::vector<std::size_t>& cardinalities,
                                              std::size_t d, std::mt19937_64& rng) {
    FeatureEmbedding<S> fe;
    for (std::size_t card : cardinalities) fe.tables.push_back(glorot_uniform<S>(card, d, rng));
    return fe;
}

template <typename S>
void FeatureEmbedding<S>::register_params(const std::string& prefix,
                                          std::vector<NamedTensor<S>>& out) {
    for (std::size_t i = 0; i < tables.size(); ++i)
        out.push_back({prefix + ".table" + std::to_string(i), tables[i]});
}

template <typename S>
Tensor<S> FeatureEmbedding<S>::embed(const std::vector<std::vector<int>>& features) const {
    const std::size_t rows = features.size();
    const std::size_t d = tables.empty() ? 0 : tables[0].dim(1);
    Tensor<S> out;
    for (std::size_t f = 0; f < tables.size(); ++f) {
        std::vector<std::size_t> index(rows);
        const std::size_t card = tables[f].dim(0);
        for (std::size_t r = 0; r < rows; ++r) {
            if (features[r].size() != tables.size())
                throw std::invalid_argument("feature row " + std::to_string(r) + " has " +
                                            std::to_string(features[r].size()) +
                                            " columns, embedding expects " +
                                            std::to_string(tables.size()));
            const int value = features[r][f];
            if (value < 0 || std::size_t(value) >= card)
                throw std::out_of_range("feature column " + std::to_string(f) + " value " +
                                        std::to_string(value) + " outside [0, " +
                                        std::to_string(card) + ")");
            index[r] = std::size_t(value);
        }
        Tensor<S> gathered = gather_rows(tables[f], std::move(index));
        out = f == 0 ? gathered : add(out, gathered);
    }
    if (rows == 0) return Tensor<S>::zeros({0, d});
    return out;
}

template <typename S>
GineEncoderParams<S> GineEncoderParams<S>::init(const ModelConfig& cfg, std::mt19937_64& rng) {
    GineEncoderParams<S> p;
    p.atom_embed = FeatureEmbedding<S>::init(cfg.atom_feature_sizes, cfg.d_enc, rng);
    p.bond_embed = FeatureEmbedding<S>::init(cfg.bond_feature_sizes, cfg.d_enc, rng);
    const std::size_t d = cfg.d_enc;
    for (std::size_t j = 0; j < cfg.gine_layers; ++j) {
        GineLayerParams<S> layer;
        layer.eps = Tensor<S>::zeros({1}, true);
        layer.edge_w = glorot_uniform<S>(d, d, rng);
        layer.edge_b = Tensor<S>::zeros({d}, true);
        layer.mlp_w1 = glorot_uniform<S>(d, 2 * d, rng);
        layer.mlp_b1 = Tensor<S>::zeros({2 * d}, true);
        layer.mlp_w2 = glorot_uniform<S>(2 * d, d, rng);
        layer.mlp_b2 = Tensor<S>::zeros({d}, true);
        layer.ln = LayerNormParams<S>::init(d);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

template <typename S>
void GineEncoderParams<S>::register_params(const std::string& prefix,
                                           std::vector<NamedTensor<S>>& out) {
    atom_embed.register_params(prefix + ".atom_embed", out);
    bond_embed.register_params(prefix + ".bond_embed", out);
    for (std::size_t j = 0; j < layers.size(); ++j) {
        const std::string lp = prefix + ".layer" + std::to_string(j);
        auto& layer = layers[j];
        out.push_back({lp + ".eps", layer.eps});
        out.push_back({lp + ".edge_w", layer.edge_w});
        out.push_back({lp + ".edge_b", layer.edge_b});
        out.push_back({lp + ".mlp_w1", layer.mlp_w1});
        out.push_back({lp + ".mlp_b1", layer.mlp_b1});
        out.push_back({lp + ".mlp_w2", layer.mlp_w2});
        out.push_back({lp + ".mlp_b2", layer.mlp_b2});
        layer.ln.register_params(lp + ".ln", out);
    }
}

template <typename S>
Tensor<S> gine_layer(const Tensor<S>& h, const MolGraph& graph, const Tensor<S>& edge_embed,
                     const GineLayerParams<S>& params) {
    if (h.dim(1) != params.edge_w.dim(1))
        throw std::invalid_argument("gine_layer: projected edge width " +
                                    std::to_string(params.edge_w.dim(1)) +
                                    " does not match hidden width " + std::to_string(h.dim(1)));
    Tensor<S> self_term = scalar_mul(h, add_scalar(params.eps, S(1)));
    Tensor<S> aggregated;
    if (graph.num_edges() > 0) {
        Tensor<S> neighbor = gather_rows(h, std::vector<std::size_t>(graph.edge_src));
        Tensor<S> edge_term = add_bias(matmul(edge_embed, params.edge_w), params.edge_b);
        Tensor<S> messages = relu(add(neighbor, edge_term));
        Tensor<S> summed =
            scatter_sum(messages, std::vector<std::size_t>(graph.edge_dst), graph.num_atoms);
        aggregated = add(self_term, summed);
    } else {
        aggregated = self_term;
    }
    Tensor<S> hidden = relu(add_bias(matmul(aggregated, params.mlp_w1), params.mlp_b1));
    return add_bias(matmul(hidden, params.mlp_w2), params.mlp_b2);
}

template <typename S>
LayerEmbeddings<S> encode_graph(const MolGraph& graph, const GineEncoderParams<S>& params) {
    if (graph.num_atoms == 0) throw std::invalid_argument("encode_graph: empty graph");
    Tensor<S> h = params.atom_embed.embed(graph.atom_features);
    Tensor<S> edge_embed = params.bond_embed.embed(graph.edge_features);
    LayerEmbeddings<S> out;
    for (const auto& layer : params.layers) {
        Tensor<S> updated = gine_layer(h, graph, edge_embed, layer);
        h = layer_norm(add(h, updated), layer.ln.gamma, layer.ln.beta, S(kLayerNormEps));
        out.per_layer.push_back(h);
    }
    return out;
}

#define MOLMIX_INSTANTIATE_GRAPH2D(S)                                                             \
    template struct FeatureEmbedding<S>;                                                          \
    template struct GineLayerParams<S>;                                                           \
    template struct GineEncoderParams<S>;                                                         \
    template struct LayerEmbeddings<S>;                                                           \
    template Tensor<S> gine_layer(const Tensor<S>&, const MolGraph&, const Tensor<S>&,            \
                                  const GineLayerParams<S>&);                                     \
    template LayerEmbeddings<S> encode_graph(const MolGraph&, const GineEncoderParams<S>&);

MOLMIX_INSTANTIATE_GRAPH2D(float)
MOLMIX_INSTANTIATE_GRAPH2D(double)

#undef MOLMIX_INSTANTIATE_GRAPH2D

}  // namespace molmix
