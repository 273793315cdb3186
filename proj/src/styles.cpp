#include "dex/styles.hpp"

#include <cmath>
#include <limits>

#include "dex/errors.hpp"

namespace dex::styles {

using namespace dex::ops;

void StyleConfig::validate() const {
    if (mel_bins == 0 || channels == 0 || codebook_size == 0 || code_dim == 0) {
        throw ConfigError("style encoder: widths must be positive");
    }
    if (tiv_layers == 0 || tv_layers == 0) throw ConfigError("style encoder: depth must be positive");
    if (kernel % 2 == 0) throw ConfigError("style encoder: kernel must be odd for same padding");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("style encoder: EMA decay must lie in (0, 1)");
}

Codebook::Codebook(ParamStore& store, Rng& rng, const std::string& name, std::size_t size, std::size_t dim,
                   double decay)
    : decay_(decay) {
    const auto init = nn::uniform_init({size, dim}, 0.5, rng);
    e_ = store.add(name + ".e", init, false);
    counts_ = store.add(name + ".ema_count", Tensor::full({size}, 1.0), false);
    sums_ = store.add(name + ".ema_sum", init, false);
}

std::vector<std::size_t> Codebook::nearest(const Tensor& h) const {
    if (h.rank() != 2 || h.dim(1) != dim()) throw DimensionError("codebook: input rows must have width D");
    const auto x = h.data(), e = e_.data();
    const std::size_t D = dim(), K = size();
    std::vector<std::size_t> idx(h.dim(0));
    for (std::size_t r = 0; r < h.dim(0); ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                const double diff = x[r * D + j] - e[k * D + j];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                idx[r] = k;
            }
        }
    }
    return idx;
}

VqResult Codebook::quantize(const Tensor& h) const {
    VqResult out;
    out.codes = nearest(h);
    const std::size_t D = dim();
    std::vector<double> rows(h.size());
    const auto e = e_.data();
    for (std::size_t r = 0; r < out.codes.size(); ++r)
        for (std::size_t j = 0; j < D; ++j) rows[r * D + j] = e[out.codes[r] * D + j];
    const Tensor selected(h.shape(), std::move(rows));
    out.h_q = straight_through(h, selected);
    out.loss = mse(h, selected);
    return out;
}

VqResult Codebook::quantize_frozen(const Tensor& h, const FrozenQuantizer& frozen) const {
    const auto& codes = frozen.codes;
    if (frozen.offset.shape() != h.shape() || codes.size() != h.dim(0)) {
        throw DimensionError("frozen quantizer: shape mismatch");
    }
    const std::size_t D = dim();
    std::vector<double> rows(h.size());
    const auto e = e_.data();
    for (std::size_t r = 0; r < codes.size(); ++r)
        for (std::size_t j = 0; j < D; ++j) rows[r * D + j] = e[codes[r] * D + j];
    VqResult out;
    out.codes = codes;
    out.h_q = add(h, frozen.offset);
    out.loss = mse(h, Tensor(h.shape(), std::move(rows)));
    return out;
}

void Codebook::ema_update(const Tensor& h, const std::vector<std::size_t>& codes) {
    const std::size_t K = size(), D = dim();
    if (codes.size() != h.dim(0)) throw DimensionError("codebook: one code per row required");
    std::vector<double> n(K, 0.0), s(K * D, 0.0);
    const auto x = h.data();
    for (std::size_t r = 0; r < codes.size(); ++r) {
        n[codes[r]] += 1.0;
        for (std::size_t j = 0; j < D; ++j) s[codes[r] * D + j] += x[r * D + j];
    }
    auto cnt = counts_.mutable_data();
    auto sum = sums_.mutable_data();
    auto e = e_.mutable_data();
    for (std::size_t k = 0; k < K; ++k) {
        cnt[k] = decay_ * cnt[k] + (1.0 - decay_) * n[k];
        for (std::size_t j = 0; j < D; ++j) {
            sum[k * D + j] = decay_ * sum[k * D + j] + (1.0 - decay_) * s[k * D + j];
            e[k * D + j] = sum[k * D + j] / cnt[k];
        }
    }
}

Gru Gru::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Gru g;
    g.w_ih = store.add(name + ".w_ih", nn::uniform_init({in, 3 * hidden}, bound, rng));
    g.w_hh = store.add(name + ".w_hh", nn::uniform_init({hidden, 3 * hidden}, bound, rng));
    g.b_ih = store.add(name + ".b_ih", nn::uniform_init({3 * hidden}, bound, rng));
    g.b_hh = store.add(name + ".b_hh", nn::uniform_init({3 * hidden}, bound, rng));
    return g;
}

Tensor Gru::operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != w_ih.dim(0)) throw DimensionError("GRU input must be [T x in]");
    const std::size_t T = x.dim(0), H = hidden();
    const auto gi_all = add_b(matmul(x, w_ih), b_ih);  // [T x 3H]
    auto h = Tensor::zeros({1, H});
    std::vector<Tensor> states;
    states.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto gi = slice(gi_all, 0, t, 1);
        const auto gh = add_b(matmul(h, w_hh), b_hh);
        const auto r = sigmoid(add(slice(gi, 1, 0, H), slice(gh, 1, 0, H)));
        const auto z = sigmoid(add(slice(gi, 1, H, H), slice(gh, 1, H, H)));
        const auto n = tanh(add(slice(gi, 1, 2 * H, H), mul(r, slice(gh, 1, 2 * H, H))));
        // h' = n + z * (h - n)
        h = add(n, mul(z, sub(h, n)));
        states.push_back(h);
    }
    return concat(states, 0);
}

ResidualConvBlock ResidualConvBlock::create(ParamStore& store, Rng& rng, const std::string& name,
                                            std::size_t channels, std::size_t kernel) {
    return {nn::Conv1d::create(store, rng, name + ".conv1", channels, channels, kernel),
            nn::Conv1d::create(store, rng, name + ".conv2", channels, channels, kernel)};
}

Tensor ResidualConvBlock::operator()(const Tensor& x) const { return add(x, second(silu(first(x)))); }

TivEncoder::TivEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config) {
    input_ = nn::Conv1d::create(store, rng, name + ".input", config.mel_bins, config.channels, config.kernel);
    for (std::size_t l = 0; l < config.tiv_layers; ++l) {
        blocks_.push_back(
            ResidualConvBlock::create(store, rng, name + ".block" + std::to_string(l), config.channels, config.kernel));
    }
}

Tensor TivEncoder::operator()(const Tensor& ref) const {
    if (ref.rank() != 2 || ref.dim(1) == 0) throw InputError("empty reference");
    auto x = input_(ref);
    std::vector<Tensor> maps;
    maps.reserve(blocks_.size());
    for (const auto& block : blocks_) {
        x = instance_norm(block(x));
        maps.push_back(reshape(x, {1, x.dim(0), x.dim(1)}));
    }
    return concat(maps, 0);
}

TvEncoder::TvEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config) {
    const std::size_t C = config.channels;
    input_ = nn::Conv1d::create(store, rng, name + ".input", config.mel_bins, C, config.kernel);
    for (std::size_t l = 0; l < config.tv_layers; ++l) {
        const std::string p = name + ".block" + std::to_string(l);
        blocks_.push_back(ResidualConvBlock::create(store, rng, p, C, config.kernel));
        norms_.push_back(nn::AffineLayerNorm::create(store, p + ".ln", C));
    }
    pitch_ = Gru::create(store, rng, name + ".pitch", 1, C);
    to_code_ = nn::Linear::create(store, rng, name + ".to_code", C, config.code_dim);
    f0_to_code_ = nn::Linear::create(store, rng, name + ".f0_to_code", C, config.code_dim);
}

Tensor TvEncoder::features(const Tensor& ref) const {
    if (ref.rank() != 2 || ref.dim(1) == 0) throw InputError("empty reference");
    auto x = input_(ref);
    for (std::size_t l = 0; l < blocks_.size(); ++l) x = norms_[l].channels_first(blocks_[l](x));
    return x;
}

TvOutput TvEncoder::operator()(const Tensor& ref, const Tensor& log_f0, const Codebook& codebook,
                               const FrozenQuantizer* frozen) const {
    const std::size_t T = ref.dim(1);
    if (log_f0.size() != T) throw DimensionError("log-F0 track length must equal reference frames");
    TvOutput out;
    const auto rows = transpose(features(ref));  // [T x C]
    out.h_f0 = pitch_(reshape(log_f0, {T, 1}));
    out.h_e_v = reshape(mean_axis(add(rows, out.h_f0), 0), {rows.dim(1)});
    out.h_pre = to_code_(rows);
    out.vq = frozen ? codebook.quantize_frozen(out.h_pre, *frozen) : codebook.quantize(out.h_pre);
    out.h_d_v = add(out.vq.h_q, f0_to_code_(out.h_f0));
    return out;
}

StyleEncoder::StyleEncoder(ParamStore& store, Rng& rng, const std::string& name, const StyleConfig& config)
    : config_(config) {
    config_.validate();
    tiv_ = TivEncoder(store, rng, name + ".tiv", config_);
    tv_ = TvEncoder(store, rng, name + ".tv", config_);
    codebook_ = Codebook(store, rng, name + ".codebook", config_.codebook_size, config_.code_dim, config_.ema_decay);
}

StyleBundle StyleEncoder::encode(const MelSpec& ref, const Tensor& log_f0) const {
    return encode_impl(ref, log_f0, nullptr);
}

StyleBundle StyleEncoder::encode_linearized(const MelSpec& ref, const Tensor& log_f0, const StyleBundle& anchor) const {
    const auto offset = sub(anchor.h_q, anchor.h_pre).detach();
    const FrozenQuantizer frozen{offset, anchor.codes};
    return encode_impl(ref, log_f0, &frozen);
}

StyleBundle StyleEncoder::encode_impl(const MelSpec& ref, const Tensor& log_f0, const FrozenQuantizer* frozen) const {
    if (!ref.values.defined() || ref.values.rank() != 2 || ref.frames() == 0) throw InputError("empty reference");
    if (ref.bins() != config_.mel_bins) throw DimensionError("reference mel bins do not match the style encoder");
    StyleBundle b;
    b.h_inv = tiv_(ref.values);
    auto tv = tv_(ref.values, log_f0, codebook_, frozen);
    b.h_e_v = tv.h_e_v;
    b.h_d_v = tv.h_d_v;
    b.h_f0 = tv.h_f0;
    b.h_pre = tv.h_pre;
    b.h_q = tv.vq.h_q;
    b.codes = std::move(tv.vq.codes);
    b.vq_loss = tv.vq.loss;
    return b;
}

}  // namespace dex::styles
