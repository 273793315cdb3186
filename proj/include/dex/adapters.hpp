#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dex/layers.hpp"

/// Style injection: attention-pooled AdaIN for time-invariant styles, AdaLN,
/// and instance-normalized cross-attention for time-variant styles.
namespace dex::adapters {

/// Softmax-weighted sum of rows. rows: [R x C], w_ap: [C x 1] -> [C].
Tensor attention_pool(const Tensor& rows, const Tensor& w_ap);

/// Per-channel shift (mu) and scale (sigma) for AdaIN.
struct PooledStats {
    Tensor mu;     // [C]
    Tensor sigma;  // [C], positive
};

/// IN(h) * sigma + mu with channel-wise broadcast. h: [C x ...].
Tensor adain(const Tensor& h, const Tensor& mu, const Tensor& sigma);

/// Per-layer time mean and std of stacked feature maps h_inv [L x C x T];
/// returns {[L x C] means, [L x C] stds}. std uses sqrt(var + eps).
std::pair<Tensor, Tensor> layer_statistics(const Tensor& h_inv);

/// Time-invariant adapter. The time embedding is projected to one extra row
/// ahead of the per-layer statistics before attention pooling.
class TivAdapter {
public:
    TivAdapter() = default;
    TivAdapter(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t time_dim);

    PooledStats pool(const Tensor& h_inv, const Tensor& t_emb) const;
    /// h_diff: [C x F x T], h_inv: [L x C x T_ref], t_emb: [time_dim]
    Tensor operator()(const Tensor& h_diff, const Tensor& h_inv, const Tensor& t_emb) const;

    const Tensor& w_ap() const { return w_ap_; }

private:
    Tensor w_ap_;  // [C x 1]
    nn::Linear t_row_;
};

/// g(cond) * LN(h) + b(cond); h: [N x C] normalized per row.
class AdaLN {
public:
    AdaLN() = default;
    AdaLN(ParamStore& store, Rng& rng, const std::string& name, std::size_t cond_dim, std::size_t channels);
    static AdaLN from(nn::Linear gain, nn::Linear bias);

    Tensor operator()(const Tensor& h, const Tensor& cond) const;

    const nn::Linear& gain() const { return gain_; }
    const nn::Linear& bias() const { return bias_; }

private:
    nn::Linear gain_;
    nn::Linear bias_;
};

struct TvAdapterOptions {
    bool scale_logits = false;  // 1/sqrt(d) on QK^T
    bool residual = true;
};

/// Cross-attention from the diffusion stream (queries, instance-normalized)
/// to the time-variant style rows (keys and values).
class TvAdapter {
public:
    TvAdapter() = default;
    TvAdapter(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t style_dim,
              TvAdapterOptions options = {});

    /// h_diff: [C x F x T], h_d_v: [T_ref x D]. When `attention` is given it
    /// receives the [(F*T) x T_ref] weight matrix.
    Tensor operator()(const Tensor& h_diff, const Tensor& h_d_v, Tensor* attention = nullptr) const;

    const TvAdapterOptions& options() const { return options_; }

private:
    nn::Linear wq_, wk_, wv_, wo_;
    TvAdapterOptions options_;
};

}  // namespace dex::adapters
