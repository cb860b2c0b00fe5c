#include "molmix/conf3d.hpp"

#include <cmath>
#include <stdexcept>

namespace molmix {

RadialBasis RadialBasis::make(std::size_t count, double cutoff, double gamma) {
    if (count < 2) throw std::invalid_argument("radial basis needs at least 2 centers");
    if (cutoff <= 0 || gamma <= 0)
        throw std::invalid_argument("radial basis needs positive cutoff and gamma");
    RadialBasis rbf;
    rbf.count = count;
    rbf.cutoff = cutoff;
    rbf.gamma = gamma;
    rbf.centers.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        rbf.centers[i] = cutoff * double(i) / double(count - 1);
    return rbf;
}

void RadialBasis::expand(double r, double* out) const {
    for (std::size_t i = 0; i < count; ++i) {
        const double delta = r - centers[i];
        out[i] = std::exp(-gamma * delta * delta);
    }
}

double cosine_cutoff(double r, double r_cut) {
    if (r < 0) throw std::invalid_argument("cosine_cutoff: negative distance " + std::to_string(r));
    if (r >= r_cut) return 0.0;
    return 0.5 * (std::cos(M_PI * r / r_cut) + 1.0);
}

DistanceTable build_distance_table(const Conformer& conf, double cutoff) {
    DistanceTable table;
    const std::size_t n = conf.num_atoms();
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            if (u == v) continue;
            const double dx = conf.coords[u][0] - conf.coords[v][0];
            const double dy = conf.coords[u][1] - conf.coords[v][1];
            const double dz = conf.coords[u][2] - conf.coords[v][2];
            const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (r >= cutoff) continue;
            table.src.push_back(u);
            table.dst.push_back(v);
            table.distances.push_back(r);
            table.cutoff_weights.push_back(cosine_cutoff(r, cutoff));
        }
    }
    return table;
}

template <typename S>
Conf3dEncoderParams<S> Conf3dEncoderParams<S>::init(const ModelConfig& cfg,
                                                    std::mt19937_64& rng) {
    Conf3dEncoderParams<S> p;
    p.atom_embed = FeatureEmbedding<S>::init(cfg.atom_feature_sizes, cfg.d_enc, rng);
    p.rbf = RadialBasis::make(cfg.schnet_rbf, cfg.schnet_cutoff, cfg.schnet_gamma);
    const std::size_t d = cfg.d_enc;
    for (std::size_t b = 0; b < cfg.schnet_blocks; ++b) {
        SchnetBlockParams<S> block;
        block.in_w = glorot_uniform<S>(d, d, rng);
        block.in_b = Tensor<S>::zeros({d}, true);
        block.filt_w1 = glorot_uniform<S>(cfg.schnet_rbf, d, rng);
        block.filt_b1 = Tensor<S>::zeros({d}, true);
        block.filt_w2 = glorot_uniform<S>(d, d, rng);
        block.filt_b2 = Tensor<S>::zeros({d}, true);
        block.out_w1 = glorot_uniform<S>(d, d, rng);
        block.out_b1 = Tensor<S>::zeros({d}, true);
        block.out_w2 = glorot_uniform<S>(d, d, rng);
        block.out_b2 = Tensor<S>::zeros({d}, true);
        p.blocks.push_back(std::move(block));
    }
    return p;
}

template <typename S>
void Conf3dEncoderParams<S>::register_params(const std::string& prefix,
                                             std::vector<NamedTensor<S>>& out) {
    atom_embed.register_params(prefix + ".atom_embed", out);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        auto& block = blocks[b];
        out.push_back({bp + ".in_w", block.in_w});
        out.push_back({bp + ".in_b", block.in_b});
        out.push_back({bp + ".filt_w1", block.filt_w1});
        out.push_back({bp + ".filt_b1", block.filt_b1});
        out.push_back({bp + ".filt_w2", block.filt_w2});
        out.push_back({bp + ".filt_b2", block.filt_b2});
        out.push_back({bp + ".out_w1", block.out_w1});
        out.push_back({bp + ".out_b1", block.out_b1});
        out.push_back({bp + ".out_w2", block.out_w2});
        out.push_back({bp + ".out_b2", block.out_b2});
    }
}

template <typename S>
Tensor<S> interaction_block(const Tensor<S>& h, const DistanceTable& table,
                            const RadialBasis& rbf, const SchnetBlockParams<S>& params) {
    const std::size_t num_atoms = h.dim(0);
    Tensor<S> aggregated;
    if (!table.src.empty()) {
        const std::size_t pairs = table.src.size();
        // Distance featurization is data, not parameters: expanded in double
        // and entered into the graph as constants.
        std::vector<S> rbf_data(pairs * rbf.count);
        std::vector<double> expanded(rbf.count);
        std::vector<S> weights(pairs);
        for (std::size_t p = 0; p < pairs; ++p) {
            rbf.expand(table.distances[p], expanded.data());
            for (std::size_t g = 0; g < rbf.count; ++g)
                rbf_data[p * rbf.count + g] = S(expanded[g]);
            weights[p] = S(table.cutoff_weights[p]);
        }
        Tensor<S> rbf_feats = Tensor<S>::from_data({pairs, rbf.count}, std::move(rbf_data));
        Tensor<S> filt =
            softplus_shifted(add_bias(matmul(rbf_feats, params.filt_w1), params.filt_b1));
        filt = softplus_shifted(add_bias(matmul(filt, params.filt_w2), params.filt_b2));
        filt = scale_rows(filt, std::move(weights));

        Tensor<S> projected = add_bias(matmul(h, params.in_w), params.in_b);
        Tensor<S> source = gather_rows(projected, std::vector<std::size_t>(table.src));
        Tensor<S> messages = mul(source, filt);
        aggregated = scatter_sum(messages, std::vector<std::size_t>(table.dst), num_atoms);
    } else {
        aggregated = Tensor<S>::zeros({num_atoms, h.dim(1)});
    }
    Tensor<S> hidden =
        softplus_shifted(add_bias(matmul(aggregated, params.out_w1), params.out_b1));
    Tensor<S> update = add_bias(matmul(hidden, params.out_w2), params.out_b2);
    return add(h, update);
}

template <typename S>
Tensor<S> encode_conformer(const MolGraph& graph, const Conformer& conf,
                           const Conf3dEncoderParams<S>& params) {
    if (conf.num_atoms() != graph.num_atoms)
        throw std::invalid_argument("encode_conformer: conformer has " +
                                    std::to_string(conf.num_atoms()) + " atoms, graph has " +
                                    std::to_string(graph.num_atoms));
    for (const auto& coord : conf.coords)
        for (double c : coord)
            if (!std::isfinite(c))
                throw std::invalid_argument("encode_conformer: non-finite coordinate");
    Tensor<S> h = params.atom_embed.embed(graph.atom_features);
    DistanceTable table = build_distance_table(conf, params.rbf.cutoff);
    for (const auto& block : params.blocks) h = interaction_block(h, table, params.rbf, block);
    return h;
}

#define MOLMIX_INSTANTIATE_CONF3D(S)                                                              \
    template struct SchnetBlockParams<S>;                                                         \
    template struct Conf3dEncoderParams<S>;                                                       \
    template Tensor<S> interaction_block(const Tensor<S>&, const DistanceTable&,                  \
                                         const RadialBasis&, const SchnetBlockParams<S>&);        \
    template Tensor<S> encode_conformer(const MolGraph&, const Conformer&,                        \
                                        const Conf3dEncoderParams<S>&);

MOLMIX_INSTANTIATE_CONF3D(float)
MOLMIX_INSTANTIATE_CONF3D(double)

#undef MOLMIX_INSTANTIATE_CONF3D

}  // namespace molmix
