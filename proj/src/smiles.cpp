#include "molmix/smiles.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace molmix {

SmilesVocab SmilesVocab::build(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::set<char> chars;
    for (const auto& s : corpus) chars.insert(s.begin(), s.end());
    SmilesVocab vocab;
    for (char c : chars) {
        vocab.char_to_id_[c] = int(vocab.id_to_char_.size()) + 2;
        vocab.id_to_char_.push_back(c);
    }
    return vocab;
}

int SmilesVocab::id_for(char c) const {
    auto it = char_to_id_.find(c);
    return it == char_to_id_.end() ? kUnk : it->second;
}

bool SmilesVocab::contains(char c) const { return char_to_id_.count(c) > 0; }

char SmilesVocab::char_for(int id) const {
    if (id < 2 || std::size_t(id) >= size())
        throw std::out_of_range("vocab: id " + std::to_string(id) +
                                " has no character (vocab size " + std::to_string(size()) + ")");
    return id_to_char_[std::size_t(id) - 2];
}

void SmilesVocab::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("vocab: cannot open " + path);
    for (char c : id_to_char_) os << c << '\n';
    if (!os) throw std::runtime_error("vocab: write failed for " + path);
}

SmilesVocab SmilesVocab::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("vocab: cannot open " + path);
    SmilesVocab vocab;
    std::string line;
    while (std::getline(is, line)) {
        if (line.size() != 1)
            throw std::runtime_error("vocab: malformed line '" + line + "' in " + path);
        vocab.char_to_id_[line[0]] = int(vocab.id_to_char_.size()) + 2;
        vocab.id_to_char_.push_back(line[0]);
    }
    return vocab;
}

SmilesTokens tokenize(const std::string& smiles, const SmilesVocab& vocab) {
    if (smiles.empty()) throw std::invalid_argument("tokenize: empty SMILES string");
    SmilesTokens tokens;
    tokens.ids.reserve(smiles.size());
    for (char c : smiles) tokens.ids.push_back(vocab.id_for(c));
    return tokens;
}

std::string detokenize(const SmilesTokens& tokens, const SmilesVocab& vocab) {
    std::string out;
    out.reserve(tokens.ids.size());
    for (int id : tokens.ids) out.push_back(vocab.char_for(id));
    return out;
}

template <typename S>
SmilesEncoderParams<S> SmilesEncoderParams<S>::init(std::size_t vocab_size,
                                                    const ModelConfig& cfg,
                                                    std::mt19937_64& rng) {
    SmilesEncoderParams<S> p;
    p.embedding = glorot_uniform<S>(vocab_size, cfg.d_enc, rng);
    p.stack = TransformerStackParams<S>::init(cfg.smiles_layers, cfg.d_enc, cfg.smiles_heads,
                                              cfg.ffn_mult, rng);
    return p;
}

template <typename S>
void SmilesEncoderParams<S>::register_params(const std::string& prefix,
                                             std::vector<NamedTensor<S>>& out) {
    out.push_back({prefix + ".embedding", embedding});
    stack.register_params(prefix + ".stack", out);
}

template <typename S>
Tensor<S> encode_smiles(const SmilesTokens& tokens, const SmilesEncoderParams<S>& params,
                        const ModelConfig& cfg) {
    if (tokens.ids.empty()) throw std::invalid_argument("encode_smiles: no tokens");
    const std::size_t vocab_rows = params.embedding.dim(0);
    std::vector<std::size_t> index;
    index.reserve(tokens.ids.size());
    for (int id : tokens.ids) {
        if (id < 0 || std::size_t(id) >= vocab_rows)
            throw std::out_of_range("encode_smiles: token id " + std::to_string(id) +
                                    " outside vocab of size " + std::to_string(vocab_rows));
        index.push_back(std::size_t(id));
    }
    Tensor<S> embedded = gather_rows(params.embedding, std::move(index));
    Tensor<S> pe = sinusoidal_positional_encoding<S>(tokens.ids.size(), cfg.d_enc);
    Tensor<S> z = add(embedded, pe);
    std::vector<std::size_t> offsets{0, tokens.ids.size()};
    return transformer_forward(params.stack, z, offsets, cfg.attn_impl, cfg.attn_block);
}

#define MOLMIX_INSTANTIATE_SMILES(S)                                                              \
    template struct SmilesEncoderParams<S>;                                                       \
    template Tensor<S> encode_smiles(const SmilesTokens&, const SmilesEncoderParams<S>&,          \
                                     const ModelConfig&);

MOLMIX_INSTANTIATE_SMILES(float)
MOLMIX_INSTANTIATE_SMILES(double)

#undef MOLMIX_INSTANTIATE_SMILES

}  // namespace molmix
