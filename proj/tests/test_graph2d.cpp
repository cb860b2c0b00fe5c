// GINE encoder tests: loop oracle, automorphism symmetry, permutation
// equivariance and component independence.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "molmix/graph2d.hpp"
#include "test_util.hpp"

using namespace molmix;

namespace {

ModelConfig small_config(std::size_t layers = 2, std::size_t d = 8) {
    ModelConfig cfg;
    cfg.d_enc = d;
    cfg.d_model = 2 * d;
    cfg.smiles_layers = 1;
    cfg.smiles_heads = 2;
    cfg.gine_layers = layers;
    cfg.schnet_blocks = 1;
    cfg.schnet_rbf = 4;
    cfg.downstream_layers = 1;
    cfg.downstream_heads = 2;
    cfg.ffn_mult = 2;
    return cfg;
}

MolGraph path_graph(std::size_t n) {
    MolGraph g;
    g.num_atoms = n;
    for (std::size_t i = 0; i < n; ++i) g.atom_features.push_back({6, int(i == 0 ? 1 : 2), 5});
    for (std::size_t i = 0; i + 1 < n; ++i) g.add_bond(i, i + 1, {1});
    return g;
}

// per-node loop reimplementation of the GINE update, mirroring the op's
// accumulation order so F64 comparisons stay exact
std::vector<double> gine_oracle(const Tensor<double>& h, const MolGraph& graph,
                                const Tensor<double>& edge_embed,
                                const GineLayerParams<double>& p) {
    const std::size_t n = graph.num_atoms, d = h.dim(1);
    const double eps = p.eps.data()[0];
    std::vector<double> agg(n * d, 0.0);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t j = 0; j < d; ++j) agg[v * d + j] = (1.0 + eps) * h.data()[v * d + j];
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        const std::size_t u = graph.edge_src[e], v = graph.edge_dst[e];
        for (std::size_t j = 0; j < d; ++j) {
            double projected = 0;
            for (std::size_t t = 0; t < d; ++t)
                projected += edge_embed.data()[e * d + t] * p.edge_w.data()[t * d + j];
            projected += p.edge_b.data()[j];
            const double msg = h.data()[u * d + j] + projected;
            agg[v * d + j] += msg > 0 ? msg : 0.0;
        }
    }
    const std::size_t hidden = p.mlp_w1.dim(1);
    std::vector<double> out(n * d);
    for (std::size_t v = 0; v < n; ++v) {
        std::vector<double> mid(hidden);
        for (std::size_t j = 0; j < hidden; ++j) {
            double acc = 0;
            for (std::size_t t = 0; t < d; ++t)
                acc += agg[v * d + t] * p.mlp_w1.data()[t * hidden + j];
            acc += p.mlp_b1.data()[j];
            mid[j] = acc > 0 ? acc : 0.0;
        }
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0;
            for (std::size_t t = 0; t < hidden; ++t)
                acc += mid[t] * p.mlp_w2.data()[t * d + j];
            out[v * d + j] = acc + p.mlp_b2.data()[j];
        }
    }
    return out;
}

}  // namespace

TEST_CASE("graph validation catches broken inputs") {
    MolGraph g;
    g.num_atoms = 2;
    g.atom_features = {{6, 1, 5}, {6, 1, 5}};
    g.edge_src = {0};
    g.edge_dst = {1};
    g.edge_features = {{1}};
    CHECK_THROWS_WITH_AS(g.validate(), doctest::Contains("reverse"), std::invalid_argument);

    MolGraph loop;
    loop.num_atoms = 1;
    loop.atom_features = {{6, 0, 5}};
    loop.edge_src = {0};
    loop.edge_dst = {0};
    loop.edge_features = {{1}};
    CHECK_THROWS_WITH_AS(loop.validate(), doctest::Contains("self-loop"), std::invalid_argument);
}

TEST_CASE("isolated node reduces to MLP((1+eps)h)") {
    ModelConfig cfg = small_config();
    std::mt19937_64 rng(1);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    MolGraph g;
    g.num_atoms = 1;
    g.atom_features = {{6, 0, 5}};
    auto h = molmix::test::rand_tensor<double>({1, cfg.d_enc}, rng);
    auto edge_embed = Tensor<double>::zeros({0, cfg.d_enc});
    auto out = gine_layer(h, g, edge_embed, params.layers[0]);
    auto expected = gine_oracle(h, g, edge_embed, params.layers[0]);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(out.data()[i] == expected[i]);
}

TEST_CASE("two symmetric nodes produce identical outputs") {
    ModelConfig cfg = small_config();
    std::mt19937_64 rng(2);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    MolGraph g;
    g.num_atoms = 2;
    g.atom_features = {{6, 1, 5}, {6, 1, 5}};
    g.add_bond(0, 1, {1});
    auto emb = encode_graph(g, params);
    for (const auto& layer : emb.per_layer)
        for (std::size_t j = 0; j < cfg.d_enc; ++j)
            CHECK(layer.data()[j] ==
                  doctest::Approx(layer.data()[cfg.d_enc + j]).epsilon(1e-12));
}

TEST_CASE("random graph matches the per-node loop oracle exactly") {
    ModelConfig cfg = small_config();
    std::mt19937_64 rng(3);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    MolGraph g;
    g.num_atoms = 6;
    for (int i = 0; i < 6; ++i) g.atom_features.push_back({6, 2, 5});
    g.add_bond(0, 1, {1});
    g.add_bond(1, 2, {2});
    g.add_bond(2, 3, {1});
    g.add_bond(3, 4, {1});
    g.add_bond(4, 5, {2});
    g.add_bond(5, 0, {1});
    g.add_bond(1, 4, {1});
    auto h = molmix::test::rand_tensor<double>({6, cfg.d_enc}, rng);
    auto edge_embed = params.bond_embed.embed(g.edge_features);
    auto out = gine_layer(h, g, edge_embed, params.layers[0]);
    auto expected = gine_oracle(h, g, edge_embed, params.layers[0]);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(out.data()[i] == expected[i]);
}

TEST_CASE("encoder emits one tensor per layer at the configured width") {
    ModelConfig cfg;  // defaults: six layers, hidden dimension 128
    std::mt19937_64 rng(4);
    auto params = GineEncoderParams<float>::init(cfg, rng);
    auto g = path_graph(5);
    auto emb = encode_graph(g, params);
    REQUIRE(emb.per_layer.size() == 6);
    for (const auto& layer : emb.per_layer) {
        CHECK(layer.dim(0) == 5);
        CHECK(layer.dim(1) == 128);
    }
}

TEST_CASE("layer count equals the configured depth for random graphs") {
    std::mt19937_64 rng(5);
    for (std::size_t layers : {1, 3, 4}) {
        ModelConfig cfg = small_config(layers);
        auto params = GineEncoderParams<float>::init(cfg, rng);
        std::uniform_int_distribution<std::size_t> size_dist(1, 7);
        auto g = path_graph(size_dist(rng));
        CHECK(encode_graph(g, params).per_layer.size() == layers);
    }
}

TEST_CASE("relabeling atoms permutes every layer's rows") {
    ModelConfig cfg = small_config(3, 16);
    std::mt19937_64 rng(6);
    auto params = GineEncoderParams<float>::init(cfg, rng);

    MolGraph g;
    g.num_atoms = 5;
    g.atom_features = {{6, 1, 5}, {7, 2, 5}, {6, 3, 5}, {8, 1, 5}, {6, 1, 5}};
    g.add_bond(0, 1, {1});
    g.add_bond(1, 2, {2});
    g.add_bond(2, 3, {1});
    g.add_bond(2, 4, {1});

    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};  // new index of each old atom
    MolGraph pg;
    pg.num_atoms = 5;
    pg.atom_features.resize(5);
    for (std::size_t v = 0; v < 5; ++v) pg.atom_features[perm[v]] = g.atom_features[v];
    for (std::size_t e = 0; e < g.num_edges(); e += 2)
        pg.add_bond(perm[g.edge_src[e]], perm[g.edge_dst[e]], g.edge_features[e]);

    auto emb = encode_graph(g, params);
    auto pemb = encode_graph(pg, params);
    REQUIRE(emb.per_layer.size() == pemb.per_layer.size());
    for (std::size_t j = 0; j < emb.per_layer.size(); ++j)
        for (std::size_t v = 0; v < 5; ++v)
            for (std::size_t t = 0; t < cfg.d_enc; ++t)
                CHECK(std::abs(emb.per_layer[j].data()[v * cfg.d_enc + t] -
                               pemb.per_layer[j].data()[perm[v] * cfg.d_enc + t]) < 1e-6);
}

TEST_CASE("swapping a bond's two directed copies changes nothing") {
    ModelConfig cfg = small_config(2, 8);
    std::mt19937_64 rng(7);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    auto g = path_graph(4);
    auto emb = encode_graph(g, params);

    MolGraph swapped = g;
    std::swap(swapped.edge_src[2], swapped.edge_src[3]);
    std::swap(swapped.edge_dst[2], swapped.edge_dst[3]);
    std::swap(swapped.edge_features[2], swapped.edge_features[3]);
    auto semb = encode_graph(swapped, params);
    for (std::size_t j = 0; j < emb.per_layer.size(); ++j)
        for (std::size_t i = 0; i < emb.per_layer[j].numel(); ++i)
            CHECK(emb.per_layer[j].data()[i] == semb.per_layer[j].data()[i]);
}

TEST_CASE("disconnected components evolve independently") {
    ModelConfig cfg = small_config(3, 8);
    std::mt19937_64 rng(8);
    auto params = GineEncoderParams<double>::init(cfg, rng);

    auto build = [&](int b_element) {
        MolGraph g;
        g.num_atoms = 5;
        g.atom_features = {{6, 1, 5}, {6, 1, 5}, {b_element, 1, 5}, {b_element, 2, 5},
                           {b_element, 1, 5}};
        g.add_bond(0, 1, {1});   // component A
        g.add_bond(2, 3, {1});   // component B
        g.add_bond(3, 4, {1});
        return g;
    };
    auto emb_a = encode_graph(build(7), params);
    auto emb_b = encode_graph(build(8), params);  // change component B's features only
    for (std::size_t j = 0; j < emb_a.per_layer.size(); ++j)
        for (std::size_t v = 0; v < 2; ++v)
            for (std::size_t t = 0; t < cfg.d_enc; ++t)
                CHECK(emb_a.per_layer[j].data()[v * cfg.d_enc + t] ==
                      emb_b.per_layer[j].data()[v * cfg.d_enc + t]);
}

TEST_CASE("edge projection width mismatch is a config error") {
    ModelConfig cfg = small_config();
    std::mt19937_64 rng(9);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    auto g = path_graph(3);
    auto h = molmix::test::rand_tensor<double>({3, cfg.d_enc + 1}, rng);
    auto edge_embed = params.bond_embed.embed(g.edge_features);
    CHECK_THROWS_AS(gine_layer(h, g, edge_embed, params.layers[0]), std::invalid_argument);
}

TEST_CASE("gine gradients pass finite differences") {
    ModelConfig cfg = small_config(2, 6);
    std::mt19937_64 rng(10);
    auto params = GineEncoderParams<double>::init(cfg, rng);
    auto g = path_graph(4);
    auto loss_fn = [&] {
        auto emb = encode_graph(g, params);
        return mean(emb.per_layer.back());
    };
    CHECK(molmix::test::gradcheck_param(params.layers[0].eps, loss_fn, 1e-5) < 1e-4);
    CHECK(molmix::test::gradcheck_param(params.layers[0].edge_w, loss_fn, 1e-5, 20) < 1e-4);
    CHECK(molmix::test::gradcheck_param(params.layers[1].mlp_w1, loss_fn, 1e-5, 20) < 1e-4);
    CHECK(molmix::test::gradcheck_param(params.atom_embed.tables[0], loss_fn, 1e-5, 20) < 1e-4);
}
