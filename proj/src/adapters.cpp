#include "dex/adapters.hpp"

#include <cmath>

#include "dex/errors.hpp"

namespace dex::adapters {

using namespace dex::ops;

Tensor attention_pool(const Tensor& rows, const Tensor& w_ap) {
    if (rows.rank() != 2 || w_ap.rank() != 2 || w_ap.dim(0) != rows.dim(1) || w_ap.dim(1) != 1) {
        throw DimensionError("attention_pool: rows [R x C] with w_ap [C x 1] required");
    }
    const auto weights = softmax(matmul(rows, w_ap), 0);  // [R x 1]
    const auto pooled = matmul(transpose(weights), rows);  // [1 x C]
    return reshape(pooled, {rows.dim(1)});
}

Tensor adain(const Tensor& h, const Tensor& mu, const Tensor& sigma) {
    const std::size_t C = h.dim(0);
    if (mu.size() != C || sigma.size() != C) throw DimensionError("adain: statistics length must equal channels");
    Shape col(h.rank(), 1);
    col[0] = C;
    return add_b(mul_b(instance_norm(h), reshape(sigma, col)), reshape(mu, col));
}

std::pair<Tensor, Tensor> layer_statistics(const Tensor& h_inv) {
    if (h_inv.rank() != 3) throw DimensionError("layer_statistics expects [L x C x T]");
    const auto m = mean_axis(h_inv, 2);                          // [L x C x 1]
    const auto centered = sub(h_inv, broadcast_to(m, h_inv.shape()));
    const auto var = mean_axis(square(centered), 2);
    const auto sd = sqrt(add_scalar(var, kNormEps));
    const Shape lc{h_inv.dim(0), h_inv.dim(1)};
    return {reshape(m, lc), reshape(sd, lc)};
}

TivAdapter::TivAdapter(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels,
                       std::size_t time_dim)
    : w_ap_(store.add(name + ".w_ap", nn::uniform_init({channels, 1}, 1.0 / std::sqrt(double(channels)), rng))),
      t_row_(nn::Linear::create(store, rng, name + ".t_row", time_dim, channels)) {}

PooledStats TivAdapter::pool(const Tensor& h_inv, const Tensor& t_emb) const {
    const auto [means, stds] = layer_statistics(h_inv);
    const std::size_t C = means.dim(1);
    if (w_ap_.dim(0) != C) throw DimensionError("TivAdapter: channel mismatch with h_inv");
    const auto t_row = reshape(t_row_.apply_vec(t_emb), {1, C});
    const auto mu = attention_pool(concat({t_row, means}, 0), w_ap_);
    const auto raw_sigma = attention_pool(concat({t_row, stds}, 0), w_ap_);
    return {mu, softplus(raw_sigma)};
}

Tensor TivAdapter::operator()(const Tensor& h_diff, const Tensor& h_inv, const Tensor& t_emb) const {
    const auto stats = pool(h_inv, t_emb);
    return adain(h_diff, stats.mu, stats.sigma);
}

AdaLN::AdaLN(ParamStore& store, Rng& rng, const std::string& name, std::size_t cond_dim, std::size_t channels) {
    // Start near g = 1, b = 0 with a live dependence on the condition.
    gain_ = nn::Linear::create(store, rng, name + ".gain", cond_dim, channels, true, 0.1);
    bias_ = nn::Linear::create(store, rng, name + ".bias", cond_dim, channels, true, 0.1);
    auto gb = gain_.bias->mutable_data();
    for (auto& v : gb) v = 1.0;
    auto bb = bias_.bias->mutable_data();
    for (auto& v : bb) v = 0.0;
}

AdaLN AdaLN::from(nn::Linear gain, nn::Linear bias) {
    AdaLN a;
    a.gain_ = std::move(gain);
    a.bias_ = std::move(bias);
    return a;
}

Tensor AdaLN::operator()(const Tensor& h, const Tensor& cond) const {
    if (h.rank() != 2) throw DimensionError("AdaLN expects h [N x C]");
    const auto g = gain_.apply_vec(cond);
    const auto b = bias_.apply_vec(cond);
    if (g.size() != h.dim(1)) throw DimensionError("AdaLN: projection width does not match channels");
    return add_b(mul_b(layer_norm(h, 1), g), b);
}

TvAdapter::TvAdapter(ParamStore& store, Rng& rng, const std::string& name, std::size_t channels,
                     std::size_t style_dim, TvAdapterOptions options)
    : wq_(nn::Linear::create(store, rng, name + ".wq", channels, channels, false)),
      wk_(nn::Linear::create(store, rng, name + ".wk", style_dim, channels, false)),
      wv_(nn::Linear::create(store, rng, name + ".wv", style_dim, channels, false)),
      wo_(nn::Linear::create(store, rng, name + ".wo", channels, channels, false)),
      options_(options) {}

Tensor TvAdapter::operator()(const Tensor& h_diff, const Tensor& h_d_v, Tensor* attention) const {
    if (h_diff.rank() != 3) throw DimensionError("TvAdapter expects h_diff [C x F x T]");
    const std::size_t C = h_diff.dim(0), F = h_diff.dim(1), T = h_diff.dim(2);
    const auto queries = transpose(reshape(instance_norm(h_diff), {C, F * T}));  // [(F*T) x C]
    const auto q = wq_(queries);
    const auto k = wk_(h_d_v);
    const auto v = wv_(h_d_v);
    auto logits = matmul(q, transpose(k));
    if (options_.scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(C)));
    const auto weights = softmax(logits, 1);
    if (attention) *attention = weights;
    const auto out = wo_(matmul(weights, v));  // [(F*T) x C]
    const auto back = reshape(transpose(out), {C, F, T});
    return options_.residual ? add(h_diff, back) : back;
}

}  // namespace dex::adapters
