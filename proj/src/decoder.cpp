#include "dex/decoder.hpp"

#include <cmath>

#include "dex/errors.hpp"

namespace dex::decoder {

using namespace dex::ops;

void NoiseSchedule::validate() const {
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw ConfigError("schedule: need 0 < sigma_min < sigma_max");
    if (!(rho >= 1.0)) throw ConfigError("schedule: rho must be >= 1");
    if (!(sigma_data > 0.0)) throw ConfigError("schedule: sigma_data must be positive");
    if (!(p_std > 0.0)) throw ConfigError("schedule: P_std must be positive");
}

EdmCoefficients edm_coefficients(double t, double sigma_data) {
    if (!(t > 0.0)) throw ContractError("edm_coefficients: t must be positive");
    const double sd2 = sigma_data * sigma_data;
    const double r = std::sqrt(t * t + sd2);
    return {sd2 / (t * t + sd2), t * sigma_data / r, 1.0 / r, 0.25 * std::log(t)};
}

double loss_weight(double t, double sigma_data) {
    if (!(t > 0.0)) throw ContractError("loss_weight: t must be positive");
    return (t * t + sigma_data * sigma_data) / ((t * sigma_data) * (t * sigma_data));
}

std::vector<double> time_grid(const NoiseSchedule& sched, std::size_t nfe) {
    if (nfe < 1) throw ContractError("sampler: nfe must be at least 1");
    const double a = std::pow(sched.sigma_max, 1.0 / sched.rho);
    const double b = std::pow(sched.sigma_min, 1.0 / sched.rho);
    std::vector<double> ts(nfe + 1, 0.0);
    ts[0] = sched.sigma_max;
    for (std::size_t i = 1; i < nfe; ++i) {
        ts[i] = std::pow(a + static_cast<double>(i) / static_cast<double>(nfe) * (b - a), sched.rho);
    }
    return ts;
}

Tensor sinusoidal_embedding(double value, std::size_t dim) {
    if (dim % 2 != 0) throw ConfigError("sinusoidal embedding needs an even width");
    const std::size_t half = dim / 2;
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < half; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
        v[k] = std::sin(value * w);
        v[half + k] = std::cos(value * w);
    }
    return Tensor::vector(std::move(v));
}

std::string to_string(EmbedKind kind) {
    switch (kind) {
        case EmbedKind::conv_freq: return "conv-freq";
        case EmbedKind::sin_cos: return "sin-cos";
        case EmbedKind::time_freq: return "time-freq";
        case EmbedKind::pos_freq: return "pos-freq";
    }
    return "?";
}

EmbedKind embed_kind_from_string(const std::string& name) {
    for (auto k : {EmbedKind::conv_freq, EmbedKind::sin_cos, EmbedKind::time_freq, EmbedKind::pos_freq}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown embedding kind: " + name);
}

void DecoderConfig::validate() const {
    if (mel_bins == 0 || patch == 0) throw ConfigError("decoder: mel bins and patch size must be positive");
    if (channels == 0 || channels % 4 != 0) throw ConfigError("decoder: channels must be a positive multiple of 4");
    if (dit_heads == 0 || channels % dit_heads != 0) throw ConfigError("decoder: channels not divisible by DiT heads");
    if (max_frames == 0) throw ConfigError("decoder: max_frames must be positive");
}

PatchGrid PatchGrid::for_mel(std::size_t F, std::size_t T, std::size_t P) {
    if (F == 0 || T == 0) throw InputError("empty mel");
    const std::size_t m = 2 * P;
    PatchGrid g;
    g.P = P;
    g.F = F;
    g.T = T;
    g.F_pad = (F + m - 1) / m * m;
    g.T_pad = (T + m - 1) / m * m;
    g.F2 = g.F_pad / m;
    g.T2 = g.T_pad / m;
    return g;
}

namespace {

std::vector<std::size_t> reflect_index(std::size_t n, std::size_t padded) {
    std::vector<std::size_t> idx(padded);
    const std::size_t period = n > 1 ? 2 * (n - 1) : 1;
    for (std::size_t i = 0; i < padded; ++i) {
        const std::size_t m = i % period;
        idx[i] = n == 1 ? 0 : (m < n ? m : period - m);
    }
    return idx;
}

Tensor crop(const Tensor& x, std::size_t F, std::size_t T) {
    auto y = x;
    if (x.dim(0) != F) y = slice(y, 0, 0, F);
    if (x.dim(1) != T) y = slice(y, 1, 0, T);
    return y;
}

}  // namespace

Tensor reflect_pad(const Tensor& x, std::size_t F_pad, std::size_t T_pad) {
    if (x.rank() != 2 || F_pad < x.dim(0) || T_pad < x.dim(1)) throw DimensionError("reflect_pad: bad target size");
    auto y = x;
    if (F_pad != x.dim(0)) y = index_select(y, 0, reflect_index(x.dim(0), F_pad));
    if (T_pad != x.dim(1)) y = index_select(y, 1, reflect_index(x.dim(1), T_pad));
    return y;
}

Patchify::Patchify(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t P,
                   bool overlap) {
    const std::size_t k = overlap ? 2 * P - 1 : P;
    const std::size_t pad = overlap ? P - 1 : 0;
    conv_ = nn::Conv2d::create(store, rng, name + ".conv", channels, channels, k, P, pad);
    deconv_ = nn::ConvTranspose2d::create(store, rng, name + ".deconv", channels, channels, k, P, pad, pad);
}

Tensor Patchify::operator()(const Tensor& h) const {
    const std::size_t P = stride();
    if (h.rank() != 3 || h.dim(1) % P != 0 || h.dim(2) % P != 0) {
        throw DimensionError("patchify: spatial extents must be multiples of P");
    }
    return conv_(h);
}

Tensor Patchify::unpatchify(const Tensor& h) const { return deconv_(h); }

Tensor sincos_grid(std::size_t channels, std::size_t F2, std::size_t T2) {
    const std::size_t half = channels / 2;
    std::vector<double> v(channels * F2 * T2);
    for (std::size_t c = 0; c < channels; ++c) {
        const bool time_axis = c < half;
        const std::size_t k = (time_axis ? c : c - half) / 2;
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
        const bool is_cos = c % 2 == 1;
        for (std::size_t f = 0; f < F2; ++f)
            for (std::size_t t = 0; t < T2; ++t) {
                const double pos = static_cast<double>(time_axis ? t : f);
                v[(c * F2 + f) * T2 + t] = is_cos ? std::cos(pos * w) : std::sin(pos * w);
            }
    }
    return Tensor({channels, F2, T2}, std::move(v));
}

Tensor sincos_time(std::size_t channels, std::size_t T2) {
    std::vector<double> v(channels * T2);
    for (std::size_t c = 0; c < channels; ++c) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / static_cast<double>(channels));
        for (std::size_t t = 0; t < T2; ++t) {
            const double pos = static_cast<double>(t);
            v[c * T2 + t] = c % 2 == 1 ? std::cos(pos * w) : std::sin(pos * w);
        }
    }
    return Tensor({channels, 1, T2}, std::move(v));
}

PatchEmbedding::PatchEmbedding(ParamStore& store, Rng& rng, const std::string& name, EmbedKind kind,
                               std::size_t channels, std::size_t F2, std::size_t max_T2)
    : kind_(kind), channels_(channels), F2_(F2), max_T2_(max_T2) {
    switch (kind) {
        case EmbedKind::conv_freq: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(3 * channels));
            conv_.weight = store.add(name + ".conv.weight", nn::uniform_init({channels, channels, 3, 1}, bound, rng));
            conv_.bias = store.add(name + ".conv.bias", nn::uniform_init({channels}, bound, rng));
            conv_.options = {.stride_h = 1, .stride_w = 1, .pad_h = 1, .pad_w = 0};
            pe_f_ = store.add(name + ".pe_f", nn::uniform_init({channels, F2, 1}, 0.02, rng));
            break;
        }
        case EmbedKind::pos_freq:
            pe_f_ = store.add(name + ".pe_f", nn::uniform_init({channels, F2, 1}, 0.02, rng));
            break;
        case EmbedKind::time_freq:
            pe_tf_ = store.add(name + ".pe_tf", nn::uniform_init({channels, F2, max_T2}, 0.02, rng));
            break;
        case EmbedKind::sin_cos: break;
    }
}

Tensor PatchEmbedding::conv_time_embedding(const Tensor& h_p) const { return mean_axis(conv_(h_p), 1); }

Tensor PatchEmbedding::operator()(const Tensor& h_p) const {
    if (h_p.rank() != 3 || h_p.dim(0) != channels_) throw DimensionError("patch embedding: expected [C x F2 x T2]");
    if (h_p.dim(1) != F2_) {
        throw ConfigError("patch embedding: frequency extent " + std::to_string(h_p.dim(1)) + " differs from " +
                          std::to_string(F2_));
    }
    const std::size_t T2 = h_p.dim(2);
    switch (kind_) {
        case EmbedKind::conv_freq: return add_b(add_b(h_p, conv_time_embedding(h_p)), pe_f_);
        case EmbedKind::sin_cos: return add(h_p, sincos_grid(channels_, F2_, T2));
        case EmbedKind::time_freq:
            if (T2 > max_T2_) {
                throw ExtentError("time-freq embedding trained for " + std::to_string(max_T2_) + " patches, got " +
                                  std::to_string(T2));
            }
            return add(h_p, slice(pe_tf_, 2, 0, T2));
        case EmbedKind::pos_freq: return add_b(add_b(h_p, sincos_time(channels_, T2)), pe_f_);
    }
    return h_p;
}

DitBlock::DitBlock(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t heads,
                   std::size_t mlp_ratio)
    : heads_(heads) {
    const std::size_t C = channels;
    modulation_ = nn::Linear::create_constant(store, name + ".modulation", C, 6 * C);
    wq_ = nn::Linear::create(store, rng, name + ".wq", C, C);
    wk_ = nn::Linear::create(store, rng, name + ".wk", C, C);
    wv_ = nn::Linear::create(store, rng, name + ".wv", C, C);
    wo_ = nn::Linear::create(store, rng, name + ".wo", C, C);
    mlp_in_ = nn::Linear::create(store, rng, name + ".mlp_in", C, mlp_ratio * C);
    mlp_out_ = nn::Linear::create(store, rng, name + ".mlp_out", mlp_ratio * C, C);
}

Tensor DitBlock::operator()(const Tensor& seq, const Tensor& t_emb, std::vector<Tensor>* attention) const {
    const std::size_t C = seq.dim(1), d = C / heads_;
    const auto mod = modulation_.apply_vec(silu(t_emb));
    auto part = [&](std::size_t i) { return slice(mod, 0, i * C, C); };
    auto modulate = [&](const Tensor& x, std::size_t i) {
        return add_b(mul_b(layer_norm(x, 1), add_scalar(part(i + 1), 1.0)), part(i));
    };

    const auto h = modulate(seq, 0);
    const auto q = wq_(h), k = wk_(h), v = wv_(h);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Tensor> heads;
    if (attention) attention->clear();
    for (std::size_t i = 0; i < heads_; ++i) {
        const auto a = softmax(scale(matmul(slice(q, 1, i * d, d), transpose(slice(k, 1, i * d, d))), inv), 1);
        if (attention) attention->push_back(a);
        heads.push_back(matmul(a, slice(v, 1, i * d, d)));
    }
    auto x = add(seq, mul_b(wo_(concat(heads, 1)), part(2)));
    const auto mlp = mlp_out_(gelu(mlp_in_(modulate(x, 3))));
    return add(x, mul_b(mlp, part(5)));
}

TimeEmbedding::TimeEmbedding(ParamStore& store, Rng& rng, const std::string& name, std::size_t dim, double scale)
    : dim_(dim), scale_(scale) {
    fc1_ = nn::Linear::create(store, rng, name + ".fc1", dim, dim);
    fc2_ = nn::Linear::create(store, rng, name + ".fc2", dim, dim);
}

Tensor TimeEmbedding::operator()(double c_noise) const {
    return fc2_.apply_vec(silu(fc1_.apply_vec(sinusoidal_embedding(scale_ * c_noise, dim_))));
}

Decoder::Decoder(ParamStore& store, Rng& rng, const std::string& name, const DecoderConfig& config)
    : config_(config) {
    config_.validate();
    const std::size_t C = config_.channels, P = config_.patch;
    const auto grid = PatchGrid::for_mel(config_.mel_bins, config_.max_frames, P);
    time_ = TimeEmbedding(store, rng, name + ".time", C, config_.time_scale);
    in_conv_ = nn::Conv2d::create(store, rng, name + ".in", 2 + C, C, 3, 1, 1);
    down_conv_ = nn::Conv2d::create(store, rng, name + ".down", C, C, 3, 2, 1);
    if (config_.use_styles) {
        tiv_ = adapters::TivAdapter(store, rng, name + ".tiv_adapter", C, C);
        tv_ = adapters::TvAdapter(store, rng, name + ".tv_adapter", C, config_.style_dim, config_.tv_options);
    }
    patchify_ = Patchify(store, rng, name + ".patchify", C, P, config_.overlap);
    embedding_ = PatchEmbedding(store, rng, name + ".embed", config_.embed, C, grid.F2, grid.T2);
    for (std::size_t i = 0; i < config_.dit_blocks; ++i) {
        blocks_.emplace_back(store, rng, name + ".dit" + std::to_string(i), C, config_.dit_heads, config_.mlp_ratio);
    }
    up_conv_ = nn::ConvTranspose2d::create(store, rng, name + ".up", C, C, 4, 2, 1, 0);
    out_conv1_ = nn::Conv2d::create(store, rng, name + ".out1", C, C, 3, 1, 1);
    out_conv2_ = nn::Conv2d::create(store, rng, name + ".out2", C, 1, 3, 1, 1);
}

Tensor Decoder::f_theta(const Tensor& x_scaled, const Tensor& h_mel, double c_noise, const DecoderStyles& styles,
                        DecoderTrace* trace) const {
    if (x_scaled.rank() != 2 || x_scaled.shape() != h_mel.shape()) {
        throw DimensionError("decoder: x_t and h_mel must both be [F x T]");
    }
    if (x_scaled.dim(0) != config_.mel_bins) throw DimensionError("decoder: mel bin count mismatch");
    const std::size_t C = config_.channels;
    const auto g = PatchGrid::for_mel(x_scaled.dim(0), x_scaled.dim(1), config_.patch);
    const Shape plane{1, g.F_pad, g.T_pad};
    const auto t_emb = time_(c_noise);
    const auto input = concat({reshape(reflect_pad(x_scaled, g.F_pad, g.T_pad), plane),
                               reshape(reflect_pad(h_mel, g.F_pad, g.T_pad), plane),
                               broadcast_to(reshape(t_emb, {C, 1, 1}), {C, g.F_pad, g.T_pad})},
                              0);
    const auto skip = silu(in_conv_(input));
    auto h = silu(down_conv_(skip));
    if (trace) trace->bottleneck = h;
    if (config_.use_styles) {
        if (!styles.h_inv || !styles.h_d_v) throw ContractError("decoder: styles required in reference mode");
        h = tiv_(h, *styles.h_inv, t_emb);
        h = tv_(h, *styles.h_d_v);
    }
    if (trace) trace->adapted = h;
    const auto patches = patchify_(h);
    const auto embedded = embedding_(patches);
    auto seq = transpose(reshape(embedded, {C, g.F2 * g.T2}));
    for (const auto& block : blocks_) seq = block(seq, t_emb);
    const auto unpatched = patchify_.unpatchify(reshape(transpose(seq), {C, g.F2, g.T2}));
    if (trace) {
        trace->patches = patches;
        trace->embedded = embedded;
        trace->dit_out = seq;
        trace->unpatched = unpatched;
    }
    const auto up = add(silu(up_conv_(unpatched)), skip);
    const auto out = out_conv2_(silu(out_conv1_(up)));
    return crop(reshape(out, {g.F_pad, g.T_pad}), g.F, g.T);
}

Tensor Decoder::denoise(const Tensor& x_t, const Tensor& h_mel, double t, const DecoderStyles& styles,
                        const NoiseSchedule& sched, DecoderTrace* trace) const {
    if (t < 0.0) throw ContractError("denoiser: t must be non-negative");
    if (t == 0.0) return x_t;
    const auto c = edm_coefficients(t, sched.sigma_data);
    const auto f = f_theta(scale(x_t, c.c_in), h_mel, c.c_noise, styles, trace);
    return add(scale(x_t, c.c_skip), scale(f, c.c_out));
}

DiffusionLoss diffusion_loss(const Decoder& decoder, const Tensor& x, const Tensor& h_mel,
                             const DecoderStyles& styles, const NoiseSchedule& sched, Rng& rng) {
    DiffusionLoss out;
    out.t = std::exp(sched.p_mean + sched.p_std * rng.normal());
    std::vector<double> noisy(x.size());
    const auto xv = x.data();
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = xv[i] + out.t * rng.normal();
    const Tensor x_t(x.shape(), std::move(noisy));
    const auto d = decoder.denoise(x_t, h_mel, out.t, styles, sched);
    out.loss = scale(mse(d, x.detach()), loss_weight(out.t, sched.sigma_data));
    return out;
}

Tensor sample_euler(const Decoder& decoder, const Tensor& h_mel, const DecoderStyles& styles,
                    const NoiseSchedule& sched, std::size_t nfe, Rng& rng, const SamplerOptions& options) {
    const auto ts = time_grid(sched, nfe);
    NoGradGuard no_grad;
    std::vector<double> init(h_mel.size());
    const auto m = h_mel.data();
    for (std::size_t i = 0; i < init.size(); ++i) {
        init[i] = sched.sigma_max * rng.normal() + (options.mean_shift ? m[i] : 0.0);
    }
    Tensor x(h_mel.shape(), std::move(init));
    const auto norm = [](const Tensor& a) {
        double s = 0.0;
        for (double v : a.data()) s += v * v;
        return std::sqrt(s);
    };
    for (std::size_t i = 0; i < nfe; ++i) {
        const double t = ts[i], t_next = ts[i + 1];
        const auto d = decoder.denoise(x, h_mel, t, styles, sched);
        if (options.trace) options.trace->push_back({i, t, norm(x), norm(sub(d, x))});
        x = t_next == 0.0 ? d : add(x, scale(sub(x, d), (t_next - t) / t));
    }
    return x;
}

}  // namespace dex::decoder
