#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dex/layers.hpp"
#include "dex/mel.hpp"

namespace dex::styles {

struct StyleConfig {
    std::size_t mel_bins = 80;
    std::size_t channels = 64;  // C, shared with the decoder bottleneck
    std::size_t tiv_layers = 6;
    std::size_t tv_layers = 3;
    std::size_t codebook_size = 512;
    std::size_t code_dim = 192;
    std::size_t kernel = 5;
    double ema_decay = 0.99;

    void validate() const;
};

struct VqResult {
    Tensor h_q;                     // [T x D], forward values are codebook rows
    std::vector<std::size_t> codes;  // per row
    Tensor loss;                    // mean ||h - sg(e_idx)||^2
};

/// Quantizer state captured from an earlier pass: the chosen codes and the
/// constant offset h_q - h that reproduces them.
struct FrozenQuantizer {
    Tensor offset;
    std::vector<std::size_t> codes;
};

/// K x D codebook learned by exponential moving averages of its assignments.
class Codebook {
public:
    Codebook() = default;
    Codebook(ParamStore& store, Rng& rng, const std::string& name, std::size_t size, std::size_t dim,
             double decay = 0.99);

    /// Nearest row per input row (Euclidean; ties to the lower index).
    std::vector<std::size_t> nearest(const Tensor& h) const;
    VqResult quantize(const Tensor& h) const;
    /// Gradient-check linearization: h_q = h + offset with the offset held
    /// constant, so finite differences see the straight-through derivative.
    VqResult quantize_frozen(const Tensor& h, const FrozenQuantizer& frozen) const;
    /// One EMA step toward the mean of the inputs assigned to each row.
    void ema_update(const Tensor& h, const std::vector<std::size_t>& codes);

    const Tensor& embedding() const { return e_; }
    std::size_t size() const { return e_.dim(0); }
    std::size_t dim() const { return e_.dim(1); }
    double decay() const { return decay_; }

private:
    Tensor e_;       // [K x D]
    Tensor counts_;  // [K]
    Tensor sums_;    // [K x D]
    double decay_ = 0.99;
};

/// Single-layer GRU with PyTorch gate layout (reset, update, new).
struct Gru {
    Tensor w_ih;  // [in x 3H]
    Tensor w_hh;  // [H x 3H]
    Tensor b_ih;  // [3H]
    Tensor b_hh;  // [3H]

    static Gru create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden);
    std::size_t hidden() const { return w_hh.dim(0); }
    /// x: [T x in] -> hidden sequence [T x H], starting from h_0 = 0.
    Tensor operator()(const Tensor& x) const;
};

/// x + conv(silu(conv(x))) over [C x T].
struct ResidualConvBlock {
    nn::Conv1d first;
    nn::Conv1d second;

    static ResidualConvBlock create(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels,
                                    std::size_t kernel);
    Tensor operator()(const Tensor& x) const;
};

class TivEncoder {
public:
    TivEncoder() = default;
    TivEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config);
    /// ref: [F x T_ref] -> h_inv [L x C x T_ref], the instance-normalized output of each block.
    Tensor operator()(const Tensor& ref) const;

private:
    nn::Conv1d input_;
    std::vector<ResidualConvBlock> blocks_;
};

struct TvOutput {
    Tensor h_e_v;  // [C]
    Tensor h_d_v;  // [T_ref x D]
    Tensor h_f0;   // [T_ref x C]
    Tensor h_pre;  // [T_ref x D], branch-B stream before quantization
    VqResult vq;
};

class TvEncoder {
public:
    TvEncoder() = default;
    TvEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config);
    TvOutput operator()(const Tensor& ref, const Tensor& log_f0, const Codebook& codebook,
                        const FrozenQuantizer* frozen = nullptr) const;
    /// Reference stack output before the branches, [C x T_ref].
    Tensor features(const Tensor& ref) const;
    const Gru& pitch() const { return pitch_; }

private:
    nn::Conv1d input_;
    std::vector<ResidualConvBlock> blocks_;
    std::vector<nn::AffineLayerNorm> norms_;
    Gru pitch_;
    nn::Linear to_code_;   // C -> D
    nn::Linear f0_to_code_;  // C -> D
};

struct StyleBundle {
    Tensor h_inv;  // [L x C x T_ref]
    Tensor h_e_v;  // [C]
    Tensor h_d_v;  // [T_ref x D]
    Tensor h_f0;   // [T_ref x C]
    Tensor h_pre;  // [T_ref x D]
    Tensor h_q;    // [T_ref x D]
    std::vector<std::size_t> codes;
    Tensor vq_loss;
};

class StyleEncoder {
public:
    StyleEncoder() = default;
    StyleEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config);

    /// log_f0 must have one entry per reference frame.
    StyleBundle encode(const MelSpec& ref, const Tensor& log_f0) const;
    /// Re-encodes with the quantizer linearized around `anchor` (same codes,
    /// constant offset h_q - h_pre). Used only by gradient checks.
    StyleBundle encode_linearized(const MelSpec& ref, const Tensor& log_f0, const StyleBundle& anchor) const;
    void ema_update(const StyleBundle& bundle) { codebook_.ema_update(bundle.h_pre, bundle.codes); }

    const StyleConfig& config() const { return config_; }
    const TivEncoder& tiv() const { return tiv_; }
    const TvEncoder& tv() const { return tv_; }
    const Codebook& codebook() const { return codebook_; }

private:
    StyleBundle encode_impl(const MelSpec& ref, const Tensor& log_f0, const FrozenQuantizer* frozen) const;

    StyleConfig config_;
    TivEncoder tiv_;
    TvEncoder tv_;
    Codebook codebook_;
};

}  // namespace dex::styles
