#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dex/adapters.hpp"
#include "dex/layers.hpp"

namespace dex::text {

struct PhonemeSeq {
    std::vector<std::size_t> ids;
};

struct TextEncoderConfig {
    std::size_t vocab = 12;
    std::size_t layers = 8;
    std::size_t hidden = 192;
    std::size_t heads = 2;
    double rope_base = 10000.0;
    std::size_t ffn_mult = 4;
    /// Width of the style vector fed to AdaLN; 0 disables style conditioning
    /// (reference-free mode uses plain affine layer norm instead).
    std::size_t style_dim = 64;

    std::size_t head_dim() const { return hidden / heads; }
    /// Throws ConfigError unless hidden % heads == 0 and the head width is even.
    void validate() const;
};

/// Rotary position encoding on x [L x d]: pair (2j, 2j+1) at row n is rotated
/// by (n + offset) * base^(-2j/d).
Tensor rope_apply(const Tensor& x, std::size_t offset, double base = 10000.0);

struct MhsaParams {
    nn::Linear wq, wk, wv, wg, wo;  // C x C, no bias
    Tensor norm_gain;               // [C], group norm affine
    Tensor norm_shift;              // [C]
};

/// Multi-head self-attention with rotary Q/K, group-normalized head concat,
/// and a swish output gate: swish(X Wg) * (GN(heads) Wo).
/// `attention`, when given, receives one [L x L] weight matrix per head.
Tensor mhsa_swish(const Tensor& x, const MhsaParams& p, std::size_t heads, double rope_base,
                  std::vector<Tensor>* attention = nullptr);

struct EncoderLayer {
    nn::AffineLayerNorm pre_attn;
    MhsaParams attn;
    nn::AffineLayerNorm pre_ffn;
    nn::Linear ffn_in;
    nn::Linear ffn_out;
    // Style-conditioned mode.
    adapters::AdaLN post_attn_style;
    adapters::AdaLN post_ffn_style;
    // Reference-free mode.
    nn::AffineLayerNorm post_attn_plain;
    nn::AffineLayerNorm post_ffn_plain;
    bool conditioned = true;

    /// Y = MHSA(LN(X)) + X; Y = AdaLN(Y); X' = FFN(LN(Y)) + Y; X' = AdaLN(X').
    Tensor forward(const Tensor& x, const std::optional<Tensor>& style, std::size_t heads, double rope_base) const;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(ParamStore& store, Rng& rng, const std::string& name, const TextEncoderConfig& config);

    /// Embedding lookup followed by the encoder stack -> [L_p x C].
    /// Style is required iff the encoder was built with style_dim > 0.
    Tensor encode(const PhonemeSeq& seq, const std::optional<Tensor>& style) const;

    const TextEncoderConfig& config() const { return config_; }
    const Tensor& embedding() const { return embedding_; }
    const std::vector<EncoderLayer>& layers() const { return layers_; }

private:
    TextEncoderConfig config_;
    Tensor embedding_;  // [vocab x C]
    std::vector<EncoderLayer> layers_;
};

/// Plain-text vocabulary file: one symbol per line; line index is token id.
std::vector<std::string> read_vocabulary(const std::string& path);
/// Maps symbols to ids; unknown symbols raise InputError.
PhonemeSeq tokenize(const std::vector<std::string>& symbols, const std::vector<std::string>& vocabulary);

}  // namespace dex::text
