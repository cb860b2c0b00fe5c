// Tensor library tests: hand-checked values, brute-force oracles and
// finite-difference gradient verification for every differentiable op.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "molmix/tensor.hpp"
#include "test_util.hpp"

using namespace molmix;
using test::gradcheck_param;
using test::rand_tensor;

namespace {

// Independent scalar triple-loop product used as the matmul oracle.
template <typename S>
std::vector<S> matmul_oracle(const Tensor<S>& a, const Tensor<S>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n, S(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p)
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
    return out;
}

}  // namespace

TEST_CASE("matmul identity and orthogonal pick") {
    auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto prod = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod.data()[i] == doctest::Approx(m.data()[i]));

    auto a = Tensor<double>::from_data({1, 2}, {1, 0});
    auto b = Tensor<double>::from_data({2, 1}, {0, 5});
    CHECK(matmul(a, b).item() == doctest::Approx(0.0));
}

TEST_CASE("matmul random case matches triple-loop oracle") {
    std::mt19937_64 rng(7);
    auto a = rand_tensor<double>({3, 4}, rng);
    auto b = rand_tensor<double>({4, 2}, rng);
    auto c = matmul(a, b);
    auto expected = matmul_oracle(a, b);
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::abs(c.data()[i] - expected[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("layer_norm hand cases") {
    auto gamma = Tensor<double>::from_data({3}, {1, 1, 1});
    auto beta = Tensor<double>::zeros({3});
    auto constant = Tensor<double>::from_data({1, 3}, {5, 5, 5});
    auto out = layer_norm(constant, gamma, beta, 1e-5);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.0));

    auto g2 = Tensor<double>::from_data({2}, {1, 1});
    auto b2 = Tensor<double>::zeros({2});
    auto row = Tensor<double>::from_data({1, 2}, {1, -1});
    auto out2 = layer_norm(row, g2, b2, 1e-12);
    CHECK(out2.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out2.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    std::mt19937_64 rng(11);
    auto x = rand_tensor<double>({2, 5}, rng, -2.0, 2.0, true);
    auto gamma = rand_tensor<double>({5}, rng, 0.5, 1.5, true);
    auto beta = rand_tensor<double>({5}, rng, -0.5, 0.5, true);
    auto weights = rand_tensor<double>({2, 5}, rng);
    auto loss_fn = [&] { return sum(mul(layer_norm(x, gamma, beta, 1e-5), weights)); };
    CHECK(gradcheck_param(x, loss_fn) < 1e-6);
    CHECK(gradcheck_param(gamma, loss_fn) < 1e-6);
    CHECK(gradcheck_param(beta, loss_fn) < 1e-6);
}

TEST_CASE("softmax_rowwise hand cases and row sums") {
    auto uniform = softmax_rowwise(Tensor<double>::from_data({1, 3}, {0, 0, 0}));
    for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    CHECK(softmax_rowwise(Tensor<double>::from_data({1, 1}, {42.0})).item() ==
          doctest::Approx(1.0));

    std::mt19937_64 rng(3);
    auto x = rand_tensor<float>({8, 8}, rng, -5.0, 5.0);
    auto p = softmax_rowwise(x);
    for (std::size_t r = 0; r < 8; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 8; ++j) s += p.data()[r * 8 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax rows sum to one for extreme logits") {
    std::mt19937_64 rng(5);
    auto x64 = rand_tensor<double>({16, 7}, rng, -100.0, 100.0);
    auto p64 = softmax_rowwise(x64);
    for (std::size_t r = 0; r < 16; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 7; ++j) s += p64.data()[r * 7 + j];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    auto x32 = rand_tensor<float>({16, 7}, rng, -100.0, 100.0);
    auto p32 = softmax_rowwise(x32);
    for (std::size_t r = 0; r < 16; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 7; ++j) s += p32.data()[r * 7 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("scatter_sum hand cases and loop oracle") {
    auto values = Tensor<double>::from_data({3, 1}, {1, 2, 3});
    auto out = scatter_sum(values, {0, 0, 1}, 2);
    CHECK(out.data()[0] == doctest::Approx(3.0));
    CHECK(out.data()[1] == doctest::Approx(3.0));

    auto out2 = scatter_sum(values, {0, 0, 0}, 2);
    CHECK(out2.data()[1] == doctest::Approx(0.0));  // empty destination row

    std::mt19937_64 rng(9);
    auto v = rand_tensor<double>({10, 4}, rng);
    std::uniform_int_distribution<std::size_t> pick(0, 5);
    std::vector<std::size_t> index(10);
    for (auto& i : index) i = pick(rng);
    auto scattered = scatter_sum(v, std::vector<std::size_t>(index), 6);
    std::vector<double> oracle(6 * 4, 0.0);
    for (std::size_t e = 0; e < 10; ++e)
        for (std::size_t j = 0; j < 4; ++j) oracle[index[e] * 4 + j] += v.data()[e * 4 + j];
    for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(scattered.data()[i] == oracle[i]);  // exact in F64
}

TEST_CASE("scatter_sum rejects out-of-range index with position") {
    auto values = Tensor<double>::zeros({3, 2});
    CHECK_THROWS_WITH_AS(scatter_sum(values, {0, 5, 1}, 2), doctest::Contains("position 1"),
                         std::out_of_range);
}

TEST_CASE("backward on linear and quadratic maps") {
    std::mt19937_64 rng(1);
    auto x = rand_tensor<double>({2, 3}, rng, -1, 1, true);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

    auto w = Tensor<double>::from_data({1}, {3.0}, true);
    mul(w, w).backward();
    CHECK(w.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires scalar loss") {
    auto x = Tensor<double>::zeros({2, 2}, true);
    CHECK_THROWS_AS(add(x, x).backward(), std::invalid_argument);
}

TEST_CASE("two identical backward runs are bit-identical") {
    std::mt19937_64 rng(21);
    auto x = rand_tensor<double>({4, 4}, rng, -1, 1, true);
    auto w = rand_tensor<double>({4, 4}, rng, -1, 1, true);
    mean(relu(matmul(x, w))).backward();
    std::vector<double> first(x.grad().begin(), x.grad().end());
    std::vector<double> firstw(w.grad().begin(), w.grad().end());
    x.zero_grad();
    w.zero_grad();
    mean(relu(matmul(x, w))).backward();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == first[i]);
    for (std::size_t i = 0; i < firstw.size(); ++i) CHECK(w.grad()[i] == firstw[i]);
}

TEST_CASE("finite-difference gradients for every differentiable op") {
    std::mt19937_64 rng(33);
    auto x = rand_tensor<double>({3, 4}, rng, -1.5, 1.5, true);
    auto y = rand_tensor<double>({3, 4}, rng, -1.5, 1.5, true);
    auto w = rand_tensor<double>({4, 3}, rng, -1.0, 1.0, true);
    auto bias = rand_tensor<double>({4}, rng, -0.5, 0.5, true);
    auto probe = rand_tensor<double>({3, 4}, rng);
    auto probe_mm = rand_tensor<double>({3, 3}, rng);
    auto eps_param = Tensor<double>::from_data({1}, {0.25}, true);

    struct Case {
        const char* name;
        std::function<Tensor<double>()> loss;
    };
    std::vector<Case> cases = {
        {"add", [&] { return sum(mul(add(x, y), probe)); }},
        {"sub", [&] { return sum(mul(sub(x, y), probe)); }},
        {"mul", [&] { return sum(mul(mul(x, y), probe)); }},
        {"scale", [&] { return sum(mul(scale(x, 2.5), probe)); }},
        {"relu", [&] { return sum(mul(relu(x), probe)); }},
        {"softplus_shifted", [&] { return sum(mul(softplus_shifted(x), probe)); }},
        {"abs", [&] { return sum(mul(abs_val(x), probe)); }},
        {"scalar_mul", [&] { return sum(mul(scalar_mul(x, eps_param), probe)); }},
        {"matmul", [&] { return sum(mul(matmul(x, w), probe_mm)); }},
        {"matmul_nt", [&] { return sum(mul(matmul_nt(x, y, 0.7), probe_mm)); }},
        {"add_bias", [&] { return sum(mul(add_bias(x, bias), probe)); }},
        {"scale_rows", [&] { return sum(mul(scale_rows(x, {0.5, -1.5, 2.0}), probe)); }},
        {"softmax", [&] { return sum(mul(softmax_rowwise(x), probe)); }},
        {"gather", [&] { return sum(mul(gather_rows(x, {2, 0, 0, 1}),
                                        Tensor<double>::full({4, 4}, 0.3))); }},
        {"scatter", [&] { return sum(mul(scatter_sum(x, {1, 0, 1}, 2),
                                         Tensor<double>::full({2, 4}, 0.7))); }},
        {"slice_rows", [&] { return sum(mul(slice_rows(x, 1, 2),
                                            Tensor<double>::full({2, 4}, 1.1))); }},
        {"slice_cols", [&] { return sum(mul(slice_cols(x, 1, 2),
                                            Tensor<double>::full({3, 2}, 0.9))); }},
        {"mean", [&] { return mean(mul(x, y)); }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        CHECK(gradcheck_param(x, c.loss) < 1e-4);
    }
    // gradient w.r.t. the one-element scale of scalar_mul
    CHECK(gradcheck_param(eps_param, [&] { return sum(mul(scalar_mul(x, eps_param), probe)); }) <
          1e-4);
    // concat gradients
    auto concat_loss = [&] {
        std::vector<Tensor<double>> parts{x, y};
        return sum(mul(concat_rows(std::span<const Tensor<double>>(parts)),
                       Tensor<double>::full({6, 4}, 0.4)));
    };
    CHECK(gradcheck_param(x, concat_loss) < 1e-4);
    auto concat_col_loss = [&] {
        std::vector<Tensor<double>> parts{x, y};
        return sum(mul(concat_cols(std::span<const Tensor<double>>(parts)),
                       Tensor<double>::full({3, 8}, 0.4)));
    };
    CHECK(gradcheck_param(y, concat_col_loss) < 1e-4);
}

TEST_CASE("gradients flow through an MLP chain") {
    std::mt19937_64 rng(55);
    auto x = rand_tensor<double>({4, 6}, rng, -1, 1, true);
    auto w1 = rand_tensor<double>({6, 8}, rng, -0.5, 0.5, true);
    auto b1 = rand_tensor<double>({8}, rng, -0.1, 0.1, true);
    auto w2 = rand_tensor<double>({8, 2}, rng, -0.5, 0.5, true);
    auto loss_fn = [&] { return mean(matmul(relu(add_bias(matmul(x, w1), b1)), w2)); };
    CHECK(gradcheck_param(w1, loss_fn) < 1e-4);
    CHECK(gradcheck_param(b1, loss_fn) < 1e-4);
    CHECK(gradcheck_param(w2, loss_fn) < 1e-4);
}

TEST_CASE("checkpoint container round-trips named arrays") {
    std::mt19937_64 rng(77);
    auto a = rand_tensor<double>({3, 5}, rng);
    auto b = rand_tensor<double>({7}, rng);
    std::vector<NamedTensor<double>> params{{"encoder.w", a}, {"encoder.b", b}};
    const std::string path = (std::filesystem::temp_directory_path() / "molmix_ckpt_test.bin")
                                 .string();
    save_checkpoint<double>(path, params);
    auto loaded = load_checkpoint_arrays<double>(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded.at("encoder.w").size() == a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(loaded.at("encoder.w")[i] == a.data()[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(loaded.at("encoder.b")[i] == b.data()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects mismatched precision") {
    auto a = Tensor<float>::zeros({4});
    std::vector<NamedTensor<float>> params{{"w", a}};
    const std::string path = (std::filesystem::temp_directory_path() / "molmix_ckpt_f32.bin")
                                 .string();
    save_checkpoint<float>(path, params);
    CHECK_THROWS_AS(load_checkpoint_arrays<double>(path), std::runtime_error);
    std::filesystem::remove(path);
}
