#include "molmix/transformer.hpp"

#include <cmath>

namespace molmix {

template <typename S>
LayerNormParams<S> LayerNormParams<S>::init(std::size_t d) {
    LayerNormParams<S> p;
    p.gamma = Tensor<S>::full({d}, S(1), true);
    p.beta = Tensor<S>::zeros({d}, true);
    return p;
}

template <typename S>
void LayerNormParams<S>::register_params(const std::string& prefix,
                                         std::vector<NamedTensor<S>>& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

template <typename S>
TransformerStackParams<S> TransformerStackParams<S>::init(std::size_t num_layers, std::size_t d,
                                                          std::size_t heads, std::size_t ffn_mult,
                                                          std::mt19937_64& rng) {
    if (heads == 0 || d % heads != 0)
        throw std::invalid_argument("transformer: width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    TransformerStackParams<S> stack;
    stack.heads = heads;
    const std::size_t hidden = d * ffn_mult;
    for (std::size_t i = 0; i < num_layers; ++i) {
        TransformerLayerParams<S> layer;
        layer.ln1 = LayerNormParams<S>::init(d);
        layer.attn = init_attention_params<S>(d, rng);
        layer.ln2 = LayerNormParams<S>::init(d);
        layer.ffn_w1 = glorot_uniform<S>(d, hidden, rng);
        layer.ffn_b1 = Tensor<S>::zeros({hidden}, true);
        layer.ffn_w2 = glorot_uniform<S>(hidden, d, rng);
        layer.ffn_b2 = Tensor<S>::zeros({d}, true);
        stack.layers.push_back(std::move(layer));
    }
    stack.final_ln = LayerNormParams<S>::init(d);
    return stack;
}

template <typename S>
void TransformerStackParams<S>::register_params(const std::string& prefix,
                                                std::vector<NamedTensor<S>>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        auto& layer = layers[i];
        layer.ln1.register_params(lp + ".ln1", out);
        layer.attn.register_params(lp + ".attn", out);
        layer.ln2.register_params(lp + ".ln2", out);
        out.push_back({lp + ".ffn_w1", layer.ffn_w1});
        out.push_back({lp + ".ffn_b1", layer.ffn_b1});
        out.push_back({lp + ".ffn_w2", layer.ffn_w2});
        out.push_back({lp + ".ffn_b2", layer.ffn_b2});
    }
    final_ln.register_params(prefix + ".final_ln", out);
}

template <typename S>
Tensor<S> transformer_forward(const TransformerStackParams<S>& stack, const Tensor<S>& tokens,
                              const std::vector<std::size_t>& seq_offsets, AttentionImpl impl,
                              std::size_t block, std::vector<Tensor<S>>* attn_inputs) {
    if (attn_inputs) attn_inputs->clear();
    Tensor<S> x = tokens;
    const S eps = S(kLayerNormEps);
    for (const auto& layer : stack.layers) {
        Tensor<S> normed = layer_norm(x, layer.ln1.gamma, layer.ln1.beta, eps);
        if (attn_inputs) attn_inputs->push_back(normed);
        Tensor<S> attended = mha_packed(impl, normed, seq_offsets, stack.heads, block, layer.attn);
        x = add(x, attended);
        Tensor<S> normed2 = layer_norm(x, layer.ln2.gamma, layer.ln2.beta, eps);
        Tensor<S> hidden = relu(add_bias(matmul(normed2, layer.ffn_w1), layer.ffn_b1));
        Tensor<S> ffn_out = add_bias(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
        x = add(x, ffn_out);
    }
    return layer_norm(x, stack.final_ln.gamma, stack.final_ln.beta, eps);
}

template <typename S>
Tensor<S> sinusoidal_positional_encoding(std::size_t length, std::size_t d) {
    std::vector<S> data(length * d);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle = double(pos) / std::pow(10000.0, double(i) / double(d));
            data[pos * d + i] = S(std::sin(angle));
            if (i + 1 < d) data[pos * d + i + 1] = S(std::cos(angle));
        }
    }
    return Tensor<S>::from_data({length, d}, std::move(data));
}

#define MOLMIX_INSTANTIATE_TRANSFORMER(S)                                                         \
    template struct LayerNormParams<S>;                                                           \
    template struct TransformerLayerParams<S>;                                                    \
    template struct TransformerStackParams<S>;                                                    \
    template Tensor<S> transformer_forward(const TransformerStackParams<S>&, const Tensor<S>&,    \
                                           const std::vector<std::size_t>&, AttentionImpl,        \
                                           std::size_t, std::vector<Tensor<S>>*);                 \
    template Tensor<S> sinusoidal_positional_encoding(std::size_t, std::size_t);

MOLMIX_INSTANTIATE_TRANSFORMER(float)
MOLMIX_INSTANTIATE_TRANSFORMER(double)

#undef MOLMIX_INSTANTIATE_TRANSFORMER

}  // namespace molmix
