#pragma once

// Character-level SMILES tokenizer plus a small transformer encoder that
// emits one embedding per character.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "molmix/config.hpp"
#include "molmix/tensor.hpp"
#include "molmix/transformer.hpp"

namespace molmix {

class SmilesVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    // Distinct characters of the corpus, sorted for determinism, after the
    // two reserved ids.
    static SmilesVocab build(const std::vector<std::string>& corpus);

    std::size_t size() const { return id_to_char_.size() + 2; }
    int id_for(char c) const;          // kUnk when absent
    bool contains(char c) const;
    char char_for(int id) const;       // throws for reserved or out-of-range ids

    // One character per line; line number = id - 2.
    void save(const std::string& path) const;
    static SmilesVocab load(const std::string& path);

    bool operator==(const SmilesVocab&) const = default;

private:
    std::map<char, int> char_to_id_;
    std::vector<char> id_to_char_;
};

struct SmilesTokens {
    std::vector<int> ids;

    std::size_t length() const { return ids.size(); }
};

SmilesTokens tokenize(const std::string& smiles, const SmilesVocab& vocab);
std::string detokenize(const SmilesTokens& tokens, const SmilesVocab& vocab);

template <typename S>
struct SmilesEncoderParams {
    Tensor<S> embedding;  // [vocab x d_enc]
    TransformerStackParams<S> stack;

    static SmilesEncoderParams init(std::size_t vocab_size, const ModelConfig& cfg,
                                    std::mt19937_64& rng);
    void register_params(const std::string& prefix, std::vector<NamedTensor<S>>& out);
};

// Embedding lookup + sinusoidal positional encoding, then the transformer
// stack; one output row per character.
template <typename S>
Tensor<S> encode_smiles(const SmilesTokens& tokens, const SmilesEncoderParams<S>& params,
                        const ModelConfig& cfg);

}  // namespace molmix
