#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dex/adapters.hpp"
#include "dex/layers.hpp"
#include "dex/styles.hpp"

namespace dex::decoder {

struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 0.5;
    double p_mean = -1.2;
    double p_std = 1.2;

    void validate() const;
};

struct EdmCoefficients {
    double c_skip, c_out, c_in, c_noise;
};

/// Preconditioning for sigma_t = t. Requires t > 0.
EdmCoefficients edm_coefficients(double t, double sigma_data);
/// lambda(t) = (t^2 + sigma_d^2) / (t sigma_d)^2
double loss_weight(double t, double sigma_data);
/// nfe + 1 times: t_0 = sigma_max, ..., t_{nfe-1}, then 0.
std::vector<double> time_grid(const NoiseSchedule& sched, std::size_t nfe);

/// Sinusoidal features of a scalar: [sin(v w_k)..., cos(v w_k)...], w_k = 10000^(-k/(dim/2)).
Tensor sinusoidal_embedding(double value, std::size_t dim);

enum class EmbedKind { conv_freq, sin_cos, time_freq, pos_freq };
std::string to_string(EmbedKind kind);
EmbedKind embed_kind_from_string(const std::string& name);

struct DecoderConfig {
    std::size_t mel_bins = 80;
    std::size_t channels = 64;
    std::size_t patch = 2;
    std::size_t dit_blocks = 4;
    std::size_t dit_heads = 2;
    std::size_t mlp_ratio = 4;
    std::size_t style_dim = 192;  // D, width of h_d_v rows
    EmbedKind embed = EmbedKind::conv_freq;
    bool overlap = true;
    /// Longest mel the time-freq embedding is trained for.
    std::size_t max_frames = 1000;
    bool use_styles = true;
    adapters::TvAdapterOptions tv_options{};
    double time_scale = 1000.0;  // c_noise multiplier before the sinusoidal map

    void validate() const;
};

/// Patch geometry for a mel of F x T. F and T are reflect-padded to multiples
/// of 2P (one factor-2 down stage precedes patchify).
struct PatchGrid {
    std::size_t P = 1;
    std::size_t F = 0, T = 0;          // original
    std::size_t F_pad = 0, T_pad = 0;  // after reflect padding
    std::size_t F2 = 0, T2 = 0;        // patch grid

    static PatchGrid for_mel(std::size_t F, std::size_t T, std::size_t P);
};

/// Pads the trailing ends of both axes of x [F x T] by reflection.
Tensor reflect_pad(const Tensor& x, std::size_t F_pad, std::size_t T_pad);

/// Patchify conv: kernel 2P-1, stride P, padding P-1 (overlapping) or kernel P,
/// stride P, no padding.
class Patchify {
public:
    Patchify() = default;
    Patchify(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t P, bool overlap);
    Tensor operator()(const Tensor& h) const;
    /// Transposed conv with the same geometry, mapping [C x F2 x T2] back to [C x F2 P x T2 P].
    Tensor unpatchify(const Tensor& h) const;

    std::size_t kernel() const { return conv_.weight.dim(2); }
    std::size_t stride() const { return conv_.options.stride_h; }
    std::size_t padding() const { return conv_.options.pad_h; }
    const nn::Conv2d& conv() const { return conv_; }

private:
    nn::Conv2d conv_;
    nn::ConvTranspose2d deconv_;
};

/// Adds the patch position embedding of the configured kind.
class PatchEmbedding {
public:
    PatchEmbedding() = default;
    PatchEmbedding(ParamStore& store, Rng& rng, const std::string& name, EmbedKind kind, std::size_t channels,
                   std::size_t F2, std::size_t max_T2);
    /// h_p: [C x F2 x T2] -> same shape. ExtentError for time-freq beyond max_T2;
    /// ConfigError when F2 differs from the configured extent.
    Tensor operator()(const Tensor& h_p) const;
    /// PE_T of the conv-freq kind, [C x 1 x T2].
    Tensor conv_time_embedding(const Tensor& h_p) const;

    EmbedKind kind() const { return kind_; }
    const Tensor& pe_f() const { return pe_f_; }
    const nn::Conv2d& conv() const { return conv_; }

private:
    EmbedKind kind_ = EmbedKind::conv_freq;
    std::size_t channels_ = 0, F2_ = 0, max_T2_ = 0;
    nn::Conv2d conv_;  // conv-freq PE_T
    Tensor pe_f_;      // [C x F2 x 1]
    Tensor pe_tf_;     // [C x F2 x max_T2], time-freq
};

/// Fixed 2-D sinusoidal grid [C x F2 x T2]; the first C/2 channels encode the
/// time index, the rest the frequency index.
Tensor sincos_grid(std::size_t channels, std::size_t F2, std::size_t T2);
/// Sinusoidal time encoding broadcast over frequency, [C x 1 x T2].
Tensor sincos_time(std::size_t channels, std::size_t T2);

/// Transformer block with adaLN-Zero time modulation over rows [S x C].
class DitBlock {
public:
    DitBlock() = default;
    DitBlock(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels, std::size_t heads,
             std::size_t mlp_ratio);
    /// `attention`, when given, receives one [S x S] matrix per head.
    Tensor operator()(const Tensor& seq, const Tensor& t_emb, std::vector<Tensor>* attention = nullptr) const;
    const nn::Linear& modulation() const { return modulation_; }

private:
    std::size_t heads_ = 1;
    nn::Linear modulation_;  // t_emb -> 6C, zero at init
    nn::Linear wq_, wk_, wv_, wo_;
    nn::Linear mlp_in_, mlp_out_;
};

/// Sinusoidal encoding of the noise label followed by two affine maps.
class TimeEmbedding {
public:
    TimeEmbedding() = default;
    TimeEmbedding(ParamStore& store, Rng& rng, const std::string& name, std::size_t dim, double scale);
    Tensor operator()(double c_noise) const;

private:
    std::size_t dim_ = 0;
    double scale_ = 1.0;
    nn::Linear fc1_, fc2_;
};

/// Styles seen by the decoder; both pointers null in reference-free mode.
struct DecoderStyles {
    const Tensor* h_inv = nullptr;  // [L x C x T_ref]
    const Tensor* h_d_v = nullptr;  // [T_ref x D]
};

/// Intermediate tensors for tests and the ablation harness.
struct DecoderTrace {
    Tensor bottleneck;  // after the down stage
    Tensor adapted;     // after the style adapters
    Tensor patches;     // patchify output
    Tensor embedded;    // after the patch embedding
    Tensor dit_out;     // after the DiT stack, [S x C]
    Tensor unpatched;   // transposed-conv output
};

class Decoder {
public:
    Decoder() = default;
    Decoder(ParamStore& store, Rng& rng, const std::string& name, const DecoderConfig& config);

    /// F_theta(c_in x_t, c_noise) conditioned on h_mel and the styles. All mels [F x T].
    Tensor f_theta(const Tensor& x_scaled, const Tensor& h_mel, double c_noise, const DecoderStyles& styles,
                   DecoderTrace* trace = nullptr) const;
    /// D_theta = c_skip x_t + c_out F_theta. t == 0 returns x_t itself.
    Tensor denoise(const Tensor& x_t, const Tensor& h_mel, double t, const DecoderStyles& styles,
                   const NoiseSchedule& sched, DecoderTrace* trace = nullptr) const;

    const DecoderConfig& config() const { return config_; }
    const Patchify& patchify() const { return patchify_; }
    const PatchEmbedding& embedding() const { return embedding_; }
    const std::vector<DitBlock>& dit_blocks() const { return blocks_; }
    const TimeEmbedding& time_embedding() const { return time_; }

private:
    DecoderConfig config_;
    TimeEmbedding time_;
    nn::Conv2d in_conv_, down_conv_;
    adapters::TivAdapter tiv_;
    adapters::TvAdapter tv_;
    Patchify patchify_;
    PatchEmbedding embedding_;
    std::vector<DitBlock> blocks_;
    nn::ConvTranspose2d up_conv_;
    nn::Conv2d out_conv1_, out_conv2_;
};

struct DiffusionLoss {
    Tensor loss;
    double t = 0.0;
};

/// ln t ~ N(P_mean, P_std^2); x_t = x + t eps; lambda(t) * MSE(D(x_t, t), x).
DiffusionLoss diffusion_loss(const Decoder& decoder, const Tensor& x, const Tensor& h_mel,
                             const DecoderStyles& styles, const NoiseSchedule& sched, Rng& rng);

struct SamplerStep {
    std::size_t i;
    double t;
    double x_norm;
    double update_norm;  // ||D - x||
};

struct SamplerOptions {
    bool mean_shift = false;  // start from h_mel + sigma_max eps
    std::vector<SamplerStep>* trace = nullptr;
};

/// Euler integration of the probability-flow ODE from sigma_max to 0.
Tensor sample_euler(const Decoder& decoder, const Tensor& h_mel, const DecoderStyles& styles,
                    const NoiseSchedule& sched, std::size_t nfe, Rng& rng, const SamplerOptions& options = {});

}  // namespace dex::decoder
