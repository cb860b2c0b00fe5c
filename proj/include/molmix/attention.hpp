#pragma once

// Multi-head attention in two interchangeable implementations: a naive core
// that materializes every score matrix, and a tiled online-softmax core that
// streams key/value blocks over variable-length packed sequences. Both are
// differentiable; the tiled backward recomputes scores per block instead of
// storing them.

#include <cstddef>
#include <string>
#include <vector>

#include "molmix/tensor.hpp"

namespace molmix {

enum class AttentionImpl { Naive, Tiled };

constexpr std::size_t kDefaultAttentionBlock = 32;

// Concatenated token embeddings of a batch. seq_offsets holds each segment's
// start index plus a final sentinel equal to the total token count; attention
// never crosses a segment boundary. token_labels are opaque per-token tags
// carried through for score dumps.
template <typename S>
struct PackedBatch {
    Tensor<S> tokens;
    std::vector<std::size_t> seq_offsets;
    std::vector<int> token_labels;

    std::size_t segment_count() const { return seq_offsets.size() - 1; }
    std::size_t segment_begin(std::size_t s) const { return seq_offsets[s]; }
    std::size_t segment_length(std::size_t s) const { return seq_offsets[s + 1] - seq_offsets[s]; }
};

// Throws unless offsets start at 0, increase strictly (no empty segments) and
// end exactly at total_tokens.
void validate_seq_offsets(const std::vector<std::size_t>& seq_offsets, std::size_t total_tokens);

template <typename S>
struct AttentionParams {
    Tensor<S> wq, wk, wv, wo;  // [d x d]
    Tensor<S> bq, bk, bv, bo;  // [d]

    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

template <typename S>
AttentionParams<S> init_attention_params(std::size_t d, std::mt19937_64& rng);

struct AttentionStats {
    // Peak count of live scratch elements during the forward pass, excluding
    // the inputs and the returned output. The tiled core holds one score
    // panel of min(block, L) elements plus, when gradients are enabled, one
    // log-sum-exp value per (head, token); on a single segment of length L
    // its peak therefore stays below heads * L * block + (heads + 4) * L.
    // The naive core retains every score and probability matrix in the
    // graph, at least heads * sum L_i^2 elements.
    std::size_t peak_scratch_elements = 0;
    std::size_t flops_estimate = 0;
};

// ---- cores (operate on already-projected q, k, v of width d) ----
template <typename S>
Tensor<S> attention_core_naive(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const std::vector<std::size_t>& seq_offsets, std::size_t heads);

template <typename S>
Tensor<S> attention_core_tiled(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const std::vector<std::size_t>& seq_offsets, std::size_t heads,
                               std::size_t block);

// ---- full multi-head attention (projections + core + output projection) ----

// Single segment, naive core. q_in/k_in/v_in are [L x d] token matrices.
template <typename S>
Tensor<S> mha_naive(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                    std::size_t heads, const AttentionParams<S>& params);

// Packed variable-length self-attention, tiled core.
template <typename S>
Tensor<S> mha_tiled(const PackedBatch<S>& packed, std::size_t heads, std::size_t block,
                    const AttentionParams<S>& params);

// Selectable-core packed self-attention used by transformer blocks.
template <typename S>
Tensor<S> mha_packed(AttentionImpl impl, const Tensor<S>& tokens,
                     const std::vector<std::size_t>& seq_offsets, std::size_t heads,
                     std::size_t block, const AttentionParams<S>& params);

// ---- instrumentation ----

// Runs the requested core over the packed tokens (used as q = k = v, with
// gradients enabled so the graph retains what training would retain) and
// reports scratch use. Scratch excludes the inputs and the core output.
template <typename S>
AttentionStats measure_stats(AttentionImpl impl, const PackedBatch<S>& packed, std::size_t heads,
                             std::size_t block);

// ---- score dumps ----

struct ScoreDump {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> boundaries;  // segment-relative token indices
    std::vector<double> values;           // row-major, clipped
};

// Pre-softmax scores (after the 1/sqrt(d_h) scaling) of one head over one
// segment, clipped to [-clip, clip]. q and k are the projected matrices.
template <typename S>
ScoreDump dump_scores(const Tensor<S>& q, const Tensor<S>& k,
                      const std::vector<std::size_t>& seq_offsets, std::size_t segment,
                      std::size_t heads, std::size_t head, double clip,
                      std::vector<std::size_t> boundaries);

// Plain-text matrix: "# rows cols boundaries=i,j,k" then one line per row of
// space-separated decimals.
void write_score_matrix(const std::string& path, const ScoreDump& dump);

}  // namespace molmix
