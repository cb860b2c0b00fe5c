// Attention tests: loop-oracle checks for the naive core, tiled-vs-naive
// equivalence on random packed batches (values and gradients), cross-segment
// isolation, and the scratch-memory growth laws.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "molmix/attention.hpp"
#include "molmix/tensor.hpp"
#include "test_util.hpp"

using namespace molmix;
using test::rand_tensor;

namespace {

// Direct softmax(QK^T/sqrt(dh))V per head, written with plain loops.
template <typename S>
std::vector<S> attention_oracle(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                std::size_t heads) {
    const std::size_t L = q.dim(0), d = q.dim(1), dh = d / heads;
    std::vector<S> out(L * d, S(0));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * dh;
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<double> scores(L);
            double mx = -1e300;
            for (std::size_t j = 0; j < L; ++j) {
                double s = 0;
                for (std::size_t t = 0; t < dh; ++t)
                    s += double(q.data()[i * d + col + t]) * double(k.data()[j * d + col + t]);
                scores[j] = s / std::sqrt(double(dh));
                mx = std::max(mx, scores[j]);
            }
            double denom = 0;
            for (std::size_t j = 0; j < L; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                denom += scores[j];
            }
            for (std::size_t j = 0; j < L; ++j) {
                const double p = scores[j] / denom;
                for (std::size_t t = 0; t < dh; ++t)
                    out[i * d + col + t] += S(p * double(v.data()[j * d + col + t]));
            }
        }
    }
    return out;
}

template <typename S>
PackedBatch<S> random_packed(std::vector<std::size_t> lengths, std::size_t d,
                             std::mt19937_64& rng, bool requires_grad = false) {
    std::size_t total = 0;
    std::vector<std::size_t> offsets{0};
    for (std::size_t len : lengths) {
        total += len;
        offsets.push_back(total);
    }
    PackedBatch<S> packed;
    packed.tokens = rand_tensor<S>({total, d}, rng, -1.0, 1.0, requires_grad);
    packed.seq_offsets = std::move(offsets);
    return packed;
}

}  // namespace

TEST_CASE("single-token attention returns the projected value row") {
    std::mt19937_64 rng(1);
    auto params = init_attention_params<double>(8, rng);
    auto x = rand_tensor<double>({1, 8}, rng);
    auto out = mha_naive(x, x, x, 2, params);
    // softmax over one key is 1, so the core passes V through untouched
    auto vp = add_bias(matmul(x, params.wv), params.bv);
    auto expected = add_bias(matmul(vp, params.wo), params.bo);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("identical tokens produce identical attention outputs") {
    std::mt19937_64 rng(2);
    auto params = init_attention_params<double>(12, rng);
    std::vector<double> row(12);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (auto& v : row) v = dist(rng);
    std::vector<double> tokens;
    for (int i = 0; i < 5; ++i) tokens.insert(tokens.end(), row.begin(), row.end());
    auto x = Tensor<double>::from_data({5, 12}, std::move(tokens));
    auto out = mha_naive(x, x, x, 3, params);
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < 12; ++j)
            CHECK(out.data()[i * 12 + j] == doctest::Approx(out.data()[j]).epsilon(1e-12));
}

TEST_CASE("naive core matches the loop oracle") {
    std::mt19937_64 rng(3);
    const std::size_t L = 7, d = 16, heads = 4;
    auto q = rand_tensor<float>({L, d}, rng);
    auto k = rand_tensor<float>({L, d}, rng);
    auto v = rand_tensor<float>({L, d}, rng);
    std::vector<std::size_t> offsets{0, L};
    auto core = attention_core_naive(q, k, v, offsets, heads);
    auto expected = attention_oracle(q, k, v, heads);
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::abs(core.data()[i] - expected[i]) < 1e-5);
}

TEST_CASE("attention rejects width not divisible by heads") {
    std::mt19937_64 rng(4);
    auto q = rand_tensor<double>({4, 10}, rng);
    std::vector<std::size_t> offsets{0, 4};
    CHECK_THROWS_AS(attention_core_naive(q, q, q, offsets, 3), std::invalid_argument);
}

TEST_CASE("tiled core rejects empty segments and zero block") {
    std::mt19937_64 rng(5);
    auto q = rand_tensor<double>({4, 8}, rng);
    std::vector<std::size_t> empty_seg{0, 2, 2, 4};
    CHECK_THROWS_AS(attention_core_tiled(q, q, q, empty_seg, 2, 4), std::invalid_argument);
    std::vector<std::size_t> ok{0, 4};
    CHECK_THROWS_AS(attention_core_tiled(q, q, q, ok, 2, 0), std::invalid_argument);
}

TEST_CASE("single tile degenerates to the naive result") {
    std::mt19937_64 rng(6);
    const std::size_t L = 9, d = 16;
    auto q = rand_tensor<float>({L, d}, rng);
    auto k = rand_tensor<float>({L, d}, rng);
    auto v = rand_tensor<float>({L, d}, rng);
    std::vector<std::size_t> offsets{0, L};
    auto naive = attention_core_naive(q, k, v, offsets, 2);
    auto tiled = attention_core_tiled(q, k, v, offsets, 2, 64);  // block >= L
    for (std::size_t i = 0; i < naive.numel(); ++i)
        CHECK(std::abs(naive.data()[i] - tiled.data()[i]) < 1e-6);
}

TEST_CASE("tiled equals segment-wise naive over random packed batches") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<std::size_t> seg_count(1, 4), seg_len(1, 64);
        std::vector<std::size_t> lengths(seg_count(rng));
        for (auto& len : lengths) len = seg_len(rng);
        const std::size_t heads = std::vector<std::size_t>{1, 2, 4}[std::size_t(trial) % 3];
        const std::size_t d = 8 * heads;
        auto packed = random_packed<float>(lengths, d, rng);
        auto k = rand_tensor<float>({packed.tokens.dim(0), d}, rng);
        auto v = rand_tensor<float>({packed.tokens.dim(0), d}, rng);
        auto naive = attention_core_naive(packed.tokens, k, v, packed.seq_offsets, heads);
        auto tiled = attention_core_tiled(packed.tokens, k, v, packed.seq_offsets, heads, 2);
        for (std::size_t i = 0; i < naive.numel(); ++i)
            CHECK(std::abs(naive.data()[i] - tiled.data()[i]) < 1e-5);
    }
}

TEST_CASE("tiled equals naive in double precision") {
    std::mt19937_64 rng(8);
    auto packed = random_packed<double>({5, 13, 3}, 24, rng);
    auto k = rand_tensor<double>({packed.tokens.dim(0), 24}, rng);
    auto v = rand_tensor<double>({packed.tokens.dim(0), 24}, rng);
    auto naive = attention_core_naive(packed.tokens, k, v, packed.seq_offsets, 4);
    auto tiled = attention_core_tiled(packed.tokens, k, v, packed.seq_offsets, 4, 4);
    for (std::size_t i = 0; i < naive.numel(); ++i)
        CHECK(std::abs(naive.data()[i] - tiled.data()[i]) < 1e-10);
}

TEST_CASE("tiled gradients match naive gradients") {
    std::mt19937_64 rng(9);
    const std::size_t d = 16, heads = 2;
    auto make_inputs = [&](std::mt19937_64& r) {
        auto q = rand_tensor<double>({11, d}, r, -1, 1, true);
        auto k = rand_tensor<double>({11, d}, r, -1, 1, true);
        auto v = rand_tensor<double>({11, d}, r, -1, 1, true);
        return std::tuple{q, k, v};
    };
    std::mt19937_64 rng_a(123), rng_b(123);
    auto [qa, ka, va] = make_inputs(rng_a);
    auto [qb, kb, vb] = make_inputs(rng_b);
    std::vector<std::size_t> offsets{0, 4, 11};
    auto probe = rand_tensor<double>({11, d}, rng);

    auto naive_loss = sum(mul(attention_core_naive(qa, ka, va, offsets, heads), probe));
    naive_loss.backward();
    auto tiled_loss = sum(mul(attention_core_tiled(qb, kb, vb, offsets, heads, 3), probe));
    tiled_loss.backward();

    auto check = [](const Tensor<double>& a, const Tensor<double>& b) {
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d1 = a.grad()[i], d2 = b.grad()[i];
            CHECK(test::rel_err(d1, d2) < 1e-4);
        }
    };
    check(qa, qb);
    check(ka, kb);
    check(va, vb);
}

TEST_CASE("no cross-segment leakage") {
    std::mt19937_64 rng(10);
    const std::size_t d = 8;
    auto packed = random_packed<float>({3, 5}, d, rng);
    auto out = attention_core_tiled(packed.tokens, packed.tokens, packed.tokens,
                                    packed.seq_offsets, 2, 2);
    // perturb segment 2 only
    std::vector<float> data(packed.tokens.data().begin(), packed.tokens.data().end());
    for (std::size_t i = 3 * d; i < 8 * d; ++i) data[i] += 7.5f;
    auto perturbed = Tensor<float>::from_data({8, d}, std::move(data));
    auto out2 = attention_core_tiled(perturbed, perturbed, perturbed, packed.seq_offsets, 2, 2);
    for (std::size_t i = 0; i < 3 * d; ++i) CHECK(out.data()[i] == out2.data()[i]);  // exact
}

TEST_CASE("scratch accounting: naive lower bound, tiled upper bound") {
    std::mt19937_64 rng(11);
    const std::size_t L = 64, heads = 4, d = 32, block = 8;
    auto packed = random_packed<float>({L}, d, rng);
    auto naive = measure_stats(AttentionImpl::Naive, packed, heads, block);
    auto tiled = measure_stats(AttentionImpl::Tiled, packed, heads, block);
    CHECK(naive.peak_scratch_elements >= heads * L * L);
    CHECK(tiled.peak_scratch_elements <= heads * L * block + (heads + 4) * L);
    CHECK(tiled.peak_scratch_elements < naive.peak_scratch_elements);
}

TEST_CASE("scratch growth is quadratic for naive, linear for tiled") {
    std::mt19937_64 rng(12);
    const std::size_t heads = 8, d = 64, block = 32;
    std::vector<std::size_t> naive_peaks, tiled_peaks;
    for (std::size_t L : {64, 128, 256}) {
        auto packed = random_packed<float>({L}, d, rng);
        naive_peaks.push_back(
            measure_stats(AttentionImpl::Naive, packed, heads, block).peak_scratch_elements);
        tiled_peaks.push_back(
            measure_stats(AttentionImpl::Tiled, packed, heads, block).peak_scratch_elements);
    }
    for (std::size_t i = 1; i < naive_peaks.size(); ++i) {
        const double naive_ratio = double(naive_peaks[i]) / double(naive_peaks[i - 1]);
        const double tiled_ratio = double(tiled_peaks[i]) / double(tiled_peaks[i - 1]);
        CHECK(naive_ratio > 3.0);
        CHECK(naive_ratio < 4.6);
        CHECK(tiled_ratio > 1.7);
        CHECK(tiled_ratio < 2.3);
    }
}

TEST_CASE("L=512 H=8 block=32: tiled peak under a quarter of naive") {
    std::mt19937_64 rng(13);
    auto packed = random_packed<float>({512}, 64, rng);
    auto naive = measure_stats(AttentionImpl::Naive, packed, 8, 32);
    auto tiled = measure_stats(AttentionImpl::Tiled, packed, 8, 32);
    CHECK(tiled.peak_scratch_elements * 4 < naive.peak_scratch_elements);
}

TEST_CASE("score dump shape, clipping and file format") {
    std::mt19937_64 rng(14);
    auto q = rand_tensor<float>({6, 8}, rng, -40.0, 40.0);
    auto k = rand_tensor<float>({6, 8}, rng, -40.0, 40.0);
    std::vector<std::size_t> offsets{0, 2, 6};
    auto dump = dump_scores(q, k, offsets, 1, 2, 0, 10.0, {0, 3});
    CHECK(dump.rows == 4);
    CHECK(dump.cols == 4);
    for (double v : dump.values) {
        CHECK(v <= 10.0);
        CHECK(v >= -10.0);
    }
    const auto path = std::filesystem::temp_directory_path() / "molmix_scores.txt";
    write_score_matrix(path.string(), dump);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "# 4 4 boundaries=0,3");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(dump_scores(q, k, offsets, 5, 2, 0, 10.0, {}), std::out_of_range);
    CHECK_THROWS_AS(dump_scores(q, k, offsets, 0, 2, 7, 10.0, {}), std::out_of_range);
}

TEST_CASE("zero-weight scores dump to an all-zero matrix") {
    auto q = Tensor<float>::zeros({5, 8});
    auto k = Tensor<float>::zeros({5, 8});
    std::vector<std::size_t> offsets{0, 5};
    auto dump = dump_scores(q, k, offsets, 0, 2, 1, 10.0, {});
    for (double v : dump.values) CHECK(v == 0.0);
}
