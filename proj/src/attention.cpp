#include "molmix/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

namespace molmix {

void validate_seq_offsets(const std::vector<std::size_t>& seq_offsets, std::size_t total_tokens) {
    if (seq_offsets.size() < 2 || seq_offsets.front() != 0)
        throw std::invalid_argument("seq_offsets must start at 0 and contain a sentinel");
    for (std::size_t i = 1; i < seq_offsets.size(); ++i)
        if (seq_offsets[i] <= seq_offsets[i - 1])
            throw std::invalid_argument("seq_offsets must increase strictly (segment " +
                                        std::to_string(i - 1) + " is empty or negative)");
    if (seq_offsets.back() != total_tokens)
        throw std::invalid_argument("seq_offsets sentinel " + std::to_string(seq_offsets.back()) +
                                    " does not match token count " + std::to_string(total_tokens));
}

template <typename S>
void AttentionParams<S>::register_params(const std::string& prefix,
                                         std::vector<NamedTensor<S>>& out) {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".bq", bq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".bk", bk});
    out.push_back({prefix + ".wv", wv});
    out.push_back({prefix + ".bv", bv});
    out.push_back({prefix + ".wo", wo});
    out.push_back({prefix + ".bo", bo});
}

template <typename S>
AttentionParams<S> init_attention_params(std::size_t d, std::mt19937_64& rng) {
    AttentionParams<S> p;
    p.wq = glorot_uniform<S>(d, d, rng);
    p.wk = glorot_uniform<S>(d, d, rng);
    p.wv = glorot_uniform<S>(d, d, rng);
    p.wo = glorot_uniform<S>(d, d, rng);
    p.bq = Tensor<S>::zeros({d}, true);
    p.bk = Tensor<S>::zeros({d}, true);
    p.bv = Tensor<S>::zeros({d}, true);
    p.bo = Tensor<S>::zeros({d}, true);
    return p;
}

namespace {

template <typename S>
S dot(const S* a, const S* b, std::size_t n) {
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename S>
void axpy(S alpha, const S* x, S* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Scratch vector that reports its footprint to the active meter.
template <typename S>
struct MeteredVec {
    std::vector<S> v;
    std::shared_ptr<ScratchMeter> meter;

    explicit MeteredVec(std::size_t n, S init = S(0)) : v(n, init) {
        auto& m = detail::active_meter();
        if (m && !m->paused) {
            meter = m;
            meter->on_alloc(n);
        }
    }
    ~MeteredVec() {
        if (meter) meter->on_release(v.size());
    }
    MeteredVec(const MeteredVec&) = delete;
    MeteredVec& operator=(const MeteredVec&) = delete;
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }
};

template <typename S>
void check_core_inputs(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                       const std::vector<std::size_t>& seq_offsets, std::size_t heads) {
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw std::invalid_argument("attention core: q " + shape_to_string(q.shape()) + ", k " +
                                    shape_to_string(k.shape()) + ", v " +
                                    shape_to_string(v.shape()) + " must share one shape");
    if (q.ndim() != 2) throw std::invalid_argument("attention core: inputs must be rank 2");
    if (heads == 0 || q.dim(1) % heads != 0)
        throw std::invalid_argument("attention core: width " + std::to_string(q.dim(1)) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    validate_seq_offsets(seq_offsets, q.dim(0));
}

}  // namespace

// ---------------------------------------------------------------------------
// naive core: per-segment, per-head composition of graph primitives; every
// score and probability matrix stays live in the graph.

template <typename S>
Tensor<S> attention_core_naive(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const std::vector<std::size_t>& seq_offsets, std::size_t heads) {
    check_core_inputs(q, k, v, seq_offsets, heads);
    const std::size_t d = q.dim(1);
    const std::size_t dh = d / heads;
    const S inv_sqrt = S(1) / std::sqrt(S(dh));

    std::vector<Tensor<S>> segment_outputs;
    for (std::size_t s = 0; s + 1 < seq_offsets.size(); ++s) {
        const std::size_t begin = seq_offsets[s];
        const std::size_t len = seq_offsets[s + 1] - begin;
        Tensor<S> qs = slice_rows(q, begin, len);
        Tensor<S> ks = slice_rows(k, begin, len);
        Tensor<S> vs = slice_rows(v, begin, len);
        std::vector<Tensor<S>> head_outputs;
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(qs, h * dh, dh);
            Tensor<S> kh = slice_cols(ks, h * dh, dh);
            Tensor<S> vh = slice_cols(vs, h * dh, dh);
            Tensor<S> scores = matmul_nt(qh, kh, inv_sqrt);
            Tensor<S> probs = softmax_rowwise(scores);
            head_outputs.push_back(matmul(probs, vh));
        }
        segment_outputs.push_back(concat_cols(std::span<const Tensor<S>>(head_outputs)));
    }
    MeterPause pause;  // the concatenated result is the core output, not scratch
    return concat_rows(std::span<const Tensor<S>>(segment_outputs));
}

// ---------------------------------------------------------------------------
// tiled core: streams key/value blocks per query row with the online-softmax
// recurrence (running max m, running denominator l, rescaled accumulator).
// The backward pass recomputes probabilities per block from the saved
// log-sum-exp instead of storing score matrices.

template <typename S>
Tensor<S> attention_core_tiled(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const std::vector<std::size_t>& seq_offsets, std::size_t heads,
                               std::size_t block) {
    check_core_inputs(q, k, v, seq_offsets, heads);
    if (block == 0) throw std::invalid_argument("attention core: block size must be >= 1");
    const std::size_t total = q.dim(0);
    const std::size_t d = q.dim(1);
    const std::size_t dh = d / heads;
    const S inv_sqrt = S(1) / std::sqrt(S(dh));

    std::size_t max_len = 0;
    for (std::size_t s = 0; s + 1 < seq_offsets.size(); ++s)
        max_len = std::max(max_len, seq_offsets[s + 1] - seq_offsets[s]);
    const std::size_t eff_block = std::min(block, max_len);

    const bool needs_grad = q.requires_grad() || k.requires_grad() || v.requires_grad();
    const S* qd = q.data().data();
    const S* kd = k.data().data();
    const S* vd = v.data().data();

    std::vector<S> out(total * d);
    // log-sum-exp per (head, token), kept for the backward recomputation
    auto lse = needs_grad ? std::make_shared<MeteredVec<S>>(heads * total) : nullptr;
    {
        MeteredVec<S> panel(eff_block);
        for (std::size_t s = 0; s + 1 < seq_offsets.size(); ++s) {
            const std::size_t begin = seq_offsets[s];
            const std::size_t len = seq_offsets[s + 1] - begin;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t col = h * dh;
                for (std::size_t i = 0; i < len; ++i) {
                    const S* qrow = qd + (begin + i) * d + col;
                    S* orow = out.data() + (begin + i) * d + col;
                    std::fill(orow, orow + dh, S(0));
                    S m_run = -std::numeric_limits<S>::infinity();
                    S l_run = S(0);
                    for (std::size_t j0 = 0; j0 < len; j0 += eff_block) {
                        const std::size_t jb = std::min(eff_block, len - j0);
                        S block_max = -std::numeric_limits<S>::infinity();
                        for (std::size_t c = 0; c < jb; ++c) {
                            const S score =
                                inv_sqrt * dot(qrow, kd + (begin + j0 + c) * d + col, dh);
                            panel.data()[c] = score;
                            block_max = std::max(block_max, score);
                        }
                        const S m_new = std::max(m_run, block_max);
                        const S correction = std::exp(m_run - m_new);  // 0 on the first block
                        l_run *= correction;
                        for (std::size_t t = 0; t < dh; ++t) orow[t] *= correction;
                        for (std::size_t c = 0; c < jb; ++c) {
                            const S p = std::exp(panel.data()[c] - m_new);
                            l_run += p;
                            axpy(p, vd + (begin + j0 + c) * d + col, orow, dh);
                        }
                        m_run = m_new;
                    }
                    const S inv_l = S(1) / l_run;
                    for (std::size_t t = 0; t < dh; ++t) orow[t] *= inv_l;
                    if (lse) lse->data()[h * total + begin + i] = m_run + std::log(l_run);
                }
            }
        }
    }

    MeterPause pause;  // the result node is the core output, not scratch
    auto offsets_copy = seq_offsets;
    return make_custom_op<S>(
        {total, d}, std::move(out), {&q, &k, &v},
        [lse, offsets = std::move(offsets_copy), heads, dh, d, total, eff_block,
         inv_sqrt](TensorNode<S>& self) {
            auto& pq = self.parents[0];
            auto& pk = self.parents[1];
            auto& pv = self.parents[2];
            const S* qd = pq->data.data();
            const S* kd = pk->data.data();
            const S* vd = pv->data.data();
            const S* od = self.data.data();
            const S* god = self.grad.data();
            if (pq->requires_grad) pq->ensure_grad();
            if (pk->requires_grad) pk->ensure_grad();
            if (pv->requires_grad) pv->ensure_grad();
            std::vector<S> probs(eff_block);
            std::vector<S> dscores(eff_block);
            for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                const std::size_t begin = offsets[s];
                const std::size_t len = offsets[s + 1] - begin;
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t col = h * dh;
                    for (std::size_t i = 0; i < len; ++i) {
                        const S* qrow = qd + (begin + i) * d + col;
                        const S* orow = od + (begin + i) * d + col;
                        const S* gorow = god + (begin + i) * d + col;
                        const S row_lse = lse->data()[h * total + begin + i];
                        // D = dO . O for the softmax Jacobian contraction
                        const S drow = dot(gorow, orow, dh);
                        for (std::size_t j0 = 0; j0 < len; j0 += eff_block) {
                            const std::size_t jb = std::min(eff_block, len - j0);
                            for (std::size_t c = 0; c < jb; ++c) {
                                const std::size_t jrow = begin + j0 + c;
                                const S score = inv_sqrt * dot(qrow, kd + jrow * d + col, dh);
                                probs[c] = std::exp(score - row_lse);
                                dscores[c] =
                                    probs[c] * (dot(gorow, vd + jrow * d + col, dh) - drow);
                            }
                            if (pq->requires_grad) {
                                S* gq = pq->grad.data() + (begin + i) * d + col;
                                for (std::size_t c = 0; c < jb; ++c)
                                    axpy(inv_sqrt * dscores[c],
                                         kd + (begin + j0 + c) * d + col, gq, dh);
                            }
                            if (pk->requires_grad) {
                                for (std::size_t c = 0; c < jb; ++c)
                                    axpy(inv_sqrt * dscores[c], qrow,
                                         pk->grad.data() + (begin + j0 + c) * d + col, dh);
                            }
                            if (pv->requires_grad) {
                                for (std::size_t c = 0; c < jb; ++c)
                                    axpy(probs[c], gorow,
                                         pv->grad.data() + (begin + j0 + c) * d + col, dh);
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// full MHA

namespace {

template <typename S>
Tensor<S> project(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    return add_bias(matmul(x, w), b);
}

}  // namespace

template <typename S>
Tensor<S> mha_naive(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                    std::size_t heads, const AttentionParams<S>& params) {
    Tensor<S> qp = project(q_in, params.wq, params.bq);
    Tensor<S> kp = project(k_in, params.wk, params.bk);
    Tensor<S> vp = project(v_in, params.wv, params.bv);
    std::vector<std::size_t> offsets{0, qp.dim(0)};
    Tensor<S> core = attention_core_naive(qp, kp, vp, offsets, heads);
    return project(core, params.wo, params.bo);
}

template <typename S>
Tensor<S> mha_tiled(const PackedBatch<S>& packed, std::size_t heads, std::size_t block,
                    const AttentionParams<S>& params) {
    Tensor<S> qp = project(packed.tokens, params.wq, params.bq);
    Tensor<S> kp = project(packed.tokens, params.wk, params.bk);
    Tensor<S> vp = project(packed.tokens, params.wv, params.bv);
    Tensor<S> core = attention_core_tiled(qp, kp, vp, packed.seq_offsets, heads, block);
    return project(core, params.wo, params.bo);
}

template <typename S>
Tensor<S> mha_packed(AttentionImpl impl, const Tensor<S>& tokens,
                     const std::vector<std::size_t>& seq_offsets, std::size_t heads,
                     std::size_t block, const AttentionParams<S>& params) {
    Tensor<S> qp = project(tokens, params.wq, params.bq);
    Tensor<S> kp = project(tokens, params.wk, params.bk);
    Tensor<S> vp = project(tokens, params.wv, params.bv);
    Tensor<S> core = impl == AttentionImpl::Tiled
                         ? attention_core_tiled(qp, kp, vp, seq_offsets, heads, block)
                         : attention_core_naive(qp, kp, vp, seq_offsets, heads);
    return project(core, params.wo, params.bo);
}

// ---------------------------------------------------------------------------
// instrumentation

template <typename S>
AttentionStats measure_stats(AttentionImpl impl, const PackedBatch<S>& packed, std::size_t heads,
                             std::size_t block) {
    validate_seq_offsets(packed.seq_offsets, packed.tokens.dim(0));
    const std::size_t d = packed.tokens.dim(1);
    const std::size_t dh = d / heads;
    // Inputs are allocated before metering starts; only what the core itself
    // creates (and retains for backward) counts as scratch.
    std::vector<S> data(packed.tokens.data().begin(), packed.tokens.data().end());
    Tensor<S> x = Tensor<S>::from_data(packed.tokens.shape(), std::move(data), true);

    auto meter = std::make_shared<ScratchMeter>();
    Tensor<S> out;
    {
        MeterScope scope(meter);
        out = impl == AttentionImpl::Tiled
                  ? attention_core_tiled(x, x, x, packed.seq_offsets, heads, block)
                  : attention_core_naive(x, x, x, packed.seq_offsets, heads);
    }

    AttentionStats stats;
    stats.peak_scratch_elements = meter->peak;
    std::size_t flops = 0;
    for (std::size_t s = 0; s + 1 < packed.seq_offsets.size(); ++s) {
        const std::size_t len = packed.seq_offsets[s + 1] - packed.seq_offsets[s];
        const std::size_t per_head = len * len * (4 * dh + (impl == AttentionImpl::Tiled ? 8 : 6));
        flops += heads * per_head;
    }
    stats.flops_estimate = flops;
    return stats;
}

// ---------------------------------------------------------------------------
// score dumps

template <typename S>
ScoreDump dump_scores(const Tensor<S>& q, const Tensor<S>& k,
                      const std::vector<std::size_t>& seq_offsets, std::size_t segment,
                      std::size_t heads, std::size_t head, double clip,
                      std::vector<std::size_t> boundaries) {
    validate_seq_offsets(seq_offsets, q.dim(0));
    if (segment + 1 >= seq_offsets.size())
        throw std::out_of_range("dump_scores: segment " + std::to_string(segment) +
                                " out of range");
    if (head >= heads)
        throw std::out_of_range("dump_scores: head " + std::to_string(head) + " >= " +
                                std::to_string(heads));
    const std::size_t d = q.dim(1);
    if (d % heads != 0)
        throw std::invalid_argument("dump_scores: width not divisible by heads");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    const std::size_t begin = seq_offsets[segment];
    const std::size_t len = seq_offsets[segment + 1] - begin;
    const std::size_t col = head * dh;

    ScoreDump dump;
    dump.rows = len;
    dump.cols = len;
    dump.boundaries = std::move(boundaries);
    dump.values.resize(len * len);
    const S* qd = q.data().data();
    const S* kd = k.data().data();
    for (std::size_t i = 0; i < len; ++i) {
        const S* qrow = qd + (begin + i) * d + col;
        for (std::size_t j = 0; j < len; ++j) {
            const S* krow = kd + (begin + j) * d + col;
            double score = 0;
            for (std::size_t t = 0; t < dh; ++t)
                score += double(qrow[t]) * double(krow[t]);
            score *= inv_sqrt;
            dump.values[i * len + j] = std::clamp(score, -clip, clip);
        }
    }
    return dump;
}

void write_score_matrix(const std::string& path, const ScoreDump& dump) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_score_matrix: cannot open " + path);
    os << "# " << dump.rows << ' ' << dump.cols << " boundaries=";
    for (std::size_t i = 0; i < dump.boundaries.size(); ++i) {
        if (i) os << ',';
        os << dump.boundaries[i];
    }
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < dump.rows; ++i) {
        for (std::size_t j = 0; j < dump.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.8g", dump.values[i * dump.cols + j]);
            if (j) os << ' ';
            os << buf;
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("write_score_matrix: write failed for " + path);
}

// ---------------------------------------------------------------------------
// explicit instantiation

#define MOLMIX_INSTANTIATE_ATTENTION(S)                                                           \
    template struct AttentionParams<S>;                                                           \
    template AttentionParams<S> init_attention_params(std::size_t, std::mt19937_64&);             \
    template Tensor<S> attention_core_naive(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                            const std::vector<std::size_t>&, std::size_t);        \
    template Tensor<S> attention_core_tiled(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                            const std::vector<std::size_t>&, std::size_t,         \
                                            std::size_t);                                         \
    template Tensor<S> mha_naive(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,            \
                                 std::size_t, const AttentionParams<S>&);                         \
    template Tensor<S> mha_tiled(const PackedBatch<S>&, std::size_t, std::size_t,                 \
                                 const AttentionParams<S>&);                                      \
    template Tensor<S> mha_packed(AttentionImpl, const Tensor<S>&,                                \
                                  const std::vector<std::size_t>&, std::size_t, std::size_t,      \
                                  const AttentionParams<S>&);                                     \
    template AttentionStats measure_stats(AttentionImpl, const PackedBatch<S>&, std::size_t,      \
                                          std::size_t);                                           \
    template ScoreDump dump_scores(const Tensor<S>&, const Tensor<S>&,                            \
                                   const std::vector<std::size_t>&, std::size_t, std::size_t,     \
                                   std::size_t, double, std::vector<std::size_t>);

MOLMIX_INSTANTIATE_ATTENTION(float)
MOLMIX_INSTANTIATE_ATTENTION(double)

#undef MOLMIX_INSTANTIATE_ATTENTION

}  // namespace molmix
