#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dex/layers.hpp"

namespace dex::align {

struct AlignmentPath {
    std::vector<std::size_t> durations;
    std::size_t total() const;
};

/// ll[i, j] = -||mu_i - x[:, j]||^2 / 2. mu: [L x F], x: [F x T] -> [L x T].
Tensor mas_likelihoods(const Tensor& mu, const Tensor& x);

/// Best monotonic surjective path through ll [L x T]. Ties extend the
/// current token. Throws InfeasibleAlignment when T < L.
AlignmentPath mas_align(const Tensor& ll);
/// Sum of ll over the cells a path selects.
double path_score(const Tensor& ll, const AlignmentPath& path);

/// Repeats row i of `rows` [L x K] durations[i] times -> [K x T].
Tensor length_regulate(const Tensor& rows, const AlignmentPath& path);

/// Mean squared error between h_mel and the target mel; shapes must match.
Tensor prior_loss(const Tensor& h_mel, const Tensor& x);
/// Mean over tokens of (log d - log_d_hat)^2.
Tensor duration_loss(const Tensor& log_d_hat, const AlignmentPath& path);
/// max(1, round(exp(log_d_hat))) per token.
AlignmentPath durations_from_log(const Tensor& log_d_hat);

struct DurationPredictorConfig {
    std::size_t in_channels = 192;
    std::size_t channels = 256;
    std::size_t kernel = 3;
};

/// Two conv blocks (conv, SiLU, channel LN) and a per-token projection.
/// The input is detached so L_dur never reaches the text encoder.
class DurationPredictor {
public:
    DurationPredictor() = default;
    DurationPredictor(ParamStore& store, Rng& rng, const std::string& name, const DurationPredictorConfig& config);

    /// h_text [L x C] -> log durations [L].
    Tensor operator()(const Tensor& h_text) const;

private:
    nn::Conv1d conv1_, conv2_;
    nn::AffineLayerNorm norm1_, norm2_;
    nn::Linear proj_;
};

struct AlignerOutput {
    Tensor mu;       // [L x F], per-token mel-space means
    AlignmentPath path;
    Tensor h_mel;    // [F x T]
    Tensor log_d_hat;  // [L]
};

class Aligner {
public:
    Aligner() = default;
    Aligner(ParamStore& store, Rng& rng, const std::string& name, std::size_t text_dim, std::size_t mel_bins,
            std::size_t dp_channels);

    /// Per-token projection to mel space, [L x F].
    Tensor project(const Tensor& h_text) const;
    /// Training: MAS against the target mel (no gradient through the search).
    AlignerOutput train_forward(const Tensor& h_text, const Tensor& x) const;
    /// Inference: predicted durations.
    AlignerOutput infer(const Tensor& h_text) const;

    const DurationPredictor& duration_predictor() const { return dp_; }

private:
    nn::Linear to_mel_;
    DurationPredictor dp_;
};

}  // namespace dex::align
