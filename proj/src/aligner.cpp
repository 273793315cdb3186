#include "dex/aligner.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "dex/errors.hpp"

namespace dex::align {

using namespace dex::ops;

std::size_t AlignmentPath::total() const { return std::accumulate(durations.begin(), durations.end(), std::size_t{0}); }

Tensor mas_likelihoods(const Tensor& mu, const Tensor& x) {
    if (mu.rank() != 2 || x.rank() != 2 || mu.dim(1) != x.dim(0)) {
        throw DimensionError("mas_likelihoods: mu [L x F] and x [F x T] required");
    }
    const std::size_t L = mu.dim(0), F = mu.dim(1), T = x.dim(1);
    const auto m = mu.data(), v = x.data();
    std::vector<double> ll(L * T);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < T; ++j) {
            double d2 = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
                const double d = m[i * F + f] - v[f * T + j];
                d2 += d * d;
            }
            ll[i * T + j] = -0.5 * d2;
        }
    return Tensor({L, T}, std::move(ll));
}

AlignmentPath mas_align(const Tensor& ll) {
    if (ll.rank() != 2) throw DimensionError("mas_align expects [L x T]");
    const std::size_t L = ll.dim(0), T = ll.dim(1);
    if (L == 0) throw InputError("mas_align: no tokens");
    if (T < L) {
        throw InfeasibleAlignment("mas_align: " + std::to_string(T) + " frames cannot cover " + std::to_string(L) +
                                  " tokens");
    }
    constexpr double kNeg = -std::numeric_limits<double>::infinity();
    const auto v = ll.data();
    std::vector<double> q(L * T, kNeg);
    q[0] = v[0];
    for (std::size_t j = 1; j < T; ++j) {
        const std::size_t lo = (j + L >= T + 1) ? j + L - T : 0;  // rows that can still reach the end
        const std::size_t hi = std::min(j, L - 1);
        for (std::size_t i = lo; i <= hi; ++i) {
            const double stay = q[i * T + j - 1];
            const double advance = i > 0 ? q[(i - 1) * T + j - 1] : kNeg;
            q[i * T + j] = v[i * T + j] + std::max(stay, advance);
        }
    }
    AlignmentPath path;
    path.durations.assign(L, 0);
    std::size_t i = L - 1;
    for (std::size_t j = T; j-- > 0;) {
        ++path.durations[i];
        if (j == 0) break;
        if (i > 0) {
            const double stay = q[i * T + j - 1];
            const double advance = q[(i - 1) * T + j - 1];
            if (advance > stay) --i;
        }
    }
    if (i != 0 || path.total() != T) throw NumericError("mas_align: backtracking did not reach the origin");
    for (auto d : path.durations)
        if (d == 0) throw NumericError("mas_align: path is not surjective");
    return path;
}

double path_score(const Tensor& ll, const AlignmentPath& path) {
    const std::size_t T = ll.dim(1);
    if (path.durations.size() != ll.dim(0) || path.total() != T) throw DimensionError("path does not fit ll");
    double s = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < path.durations.size(); ++i)
        for (std::size_t k = 0; k < path.durations[i]; ++k) s += ll.data()[i * T + j++];
    return s;
}

Tensor length_regulate(const Tensor& rows, const AlignmentPath& path) {
    if (rows.rank() != 2 || rows.dim(0) != path.durations.size()) {
        throw DimensionError("length_regulate: one duration per row required");
    }
    if (path.total() == 0) throw InputError("length_regulate: durations sum to zero");
    std::vector<std::size_t> index;
    index.reserve(path.total());
    for (std::size_t i = 0; i < path.durations.size(); ++i) index.insert(index.end(), path.durations[i], i);
    return transpose(index_select(rows, 0, index));
}

Tensor prior_loss(const Tensor& h_mel, const Tensor& x) {
    if (h_mel.shape() != x.shape()) throw DimensionError("prior_loss: shape mismatch");
    return mse(h_mel, x);
}

Tensor duration_loss(const Tensor& log_d_hat, const AlignmentPath& path) {
    if (log_d_hat.size() != path.durations.size()) throw DimensionError("duration_loss: length mismatch");
    std::vector<double> target(path.durations.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] = std::log(static_cast<double>(std::max<std::size_t>(path.durations[i], 1)));
    }
    const Shape shape{target.size()};
    return mse(reshape(log_d_hat, shape), Tensor::vector(std::move(target)));
}

AlignmentPath durations_from_log(const Tensor& log_d_hat) {
    AlignmentPath p;
    for (double v : log_d_hat.data()) {
        const double d = std::round(std::exp(v));
        if (!(d < 1e6)) throw NumericError("predicted duration out of range");
        p.durations.push_back(d < 1.0 ? 1 : static_cast<std::size_t>(d));
    }
    return p;
}

DurationPredictor::DurationPredictor(ParamStore& store, Rng& rng, const std::string& name,
                                     const DurationPredictorConfig& config) {
    conv1_ = nn::Conv1d::create(store, rng, name + ".conv1", config.in_channels, config.channels, config.kernel);
    norm1_ = nn::AffineLayerNorm::create(store, name + ".ln1", config.channels);
    conv2_ = nn::Conv1d::create(store, rng, name + ".conv2", config.channels, config.channels, config.kernel);
    norm2_ = nn::AffineLayerNorm::create(store, name + ".ln2", config.channels);
    proj_ = nn::Linear::create(store, rng, name + ".proj", config.channels, 1);
}

Tensor DurationPredictor::operator()(const Tensor& h_text) const {
    auto x = transpose(h_text.detach());  // [C x L]
    x = norm1_.channels_first(silu(conv1_(x)));
    x = norm2_.channels_first(silu(conv2_(x)));
    const auto out = proj_(transpose(x));  // [L x 1]
    return reshape(out, {out.dim(0)});
}

Aligner::Aligner(ParamStore& store, Rng& rng, const std::string& name, std::size_t text_dim, std::size_t mel_bins,
                 std::size_t dp_channels)
    : to_mel_(nn::Linear::create(store, rng, name + ".to_mel", text_dim, mel_bins)),
      dp_(store, rng, name + ".dp", {text_dim, dp_channels, 3}) {}

Tensor Aligner::project(const Tensor& h_text) const { return to_mel_(h_text); }

AlignerOutput Aligner::train_forward(const Tensor& h_text, const Tensor& x) const {
    AlignerOutput out;
    out.mu = project(h_text);
    out.path = mas_align(mas_likelihoods(out.mu.detach(), x));
    out.h_mel = length_regulate(out.mu, out.path);
    out.log_d_hat = dp_(h_text);
    return out;
}

AlignerOutput Aligner::infer(const Tensor& h_text) const {
    AlignerOutput out;
    out.mu = project(h_text);
    out.log_d_hat = dp_(h_text);
    out.path = durations_from_log(out.log_d_hat);
    out.h_mel = length_regulate(out.mu, out.path);
    return out;
}

}  // namespace dex::align
