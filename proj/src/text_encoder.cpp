#include "dex/text_encoder.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "dex/errors.hpp"

namespace dex::text {

using namespace dex::ops;

void TextEncoderConfig::validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
        throw ConfigError("text encoder: hidden size must be divisible by the head count");
    }
    if (head_dim() % 2 != 0) throw ConfigError("text encoder: rotary encoding needs an even head dimension");
    if (vocab == 0 || layers == 0) throw ConfigError("text encoder: vocab and layers must be positive");
}

Tensor rope_apply(const Tensor& x, std::size_t offset, double base) {
    if (x.rank() != 2) throw DimensionError("rope_apply expects [L x d]");
    const std::size_t L = x.dim(0), d = x.dim(1);
    if (d % 2 != 0) throw ConfigError("rope_apply: odd head dimension");
    std::vector<double> cos_t(L * d), sin_t(L * d);
    std::vector<std::size_t> swap(d);
    for (std::size_t j = 0; j < d / 2; ++j) {
        swap[2 * j] = 2 * j + 1;
        swap[2 * j + 1] = 2 * j;
    }
    for (std::size_t n = 0; n < L; ++n) {
        const double pos = static_cast<double>(n + offset);
        for (std::size_t j = 0; j < d / 2; ++j) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
            const double c = std::cos(pos * theta), s = std::sin(pos * theta);
            cos_t[n * d + 2 * j] = c;
            cos_t[n * d + 2 * j + 1] = c;
            sin_t[n * d + 2 * j] = -s;
            sin_t[n * d + 2 * j + 1] = s;
        }
    }
    const Tensor cos_tab({L, d}, std::move(cos_t));
    const Tensor sin_tab({L, d}, std::move(sin_t));
    return add(mul(x, cos_tab), mul(index_select(x, 1, swap), sin_tab));
}

Tensor mhsa_swish(const Tensor& x, const MhsaParams& p, std::size_t heads, double rope_base,
                  std::vector<Tensor>* attention) {
    const std::size_t C = x.dim(1);
    if (C % heads != 0) throw ConfigError("mhsa: channels not divisible by heads");
    const std::size_t d = C / heads;
    const auto q = p.wq(x), k = p.wk(x), v = p.wv(x);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    if (attention) attention->clear();
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = rope_apply(slice(q, 1, h * d, d), 0, rope_base);
        const auto kh = rope_apply(slice(k, 1, h * d, d), 0, rope_base);
        const auto vh = slice(v, 1, h * d, d);
        const auto a = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
        if (attention) attention->push_back(a);
        outs.push_back(matmul(a, vh));
    }
    auto y = group_norm(concat(outs, 1), heads);
    y = add_b(mul_b(y, p.norm_gain), p.norm_shift);
    return mul(silu(p.wg(x)), p.wo(y));
}

Tensor EncoderLayer::forward(const Tensor& x, const std::optional<Tensor>& style, std::size_t heads,
                             double rope_base) const {
    auto y = add(mhsa_swish(pre_attn.rows(x), attn, heads, rope_base), x);
    y = conditioned ? post_attn_style(y, *style) : post_attn_plain.rows(y);
    auto out = add(ffn_out(gelu(ffn_in(pre_ffn.rows(y)))), y);
    return conditioned ? post_ffn_style(out, *style) : post_ffn_plain.rows(out);
}

TextEncoder::TextEncoder(ParamStore& store, Rng& rng, const std::string& name, const TextEncoderConfig& config)
    : config_(config) {
    config_.validate();
    const std::size_t C = config_.hidden;
    embedding_ = store.add(name + ".embedding", nn::uniform_init({config_.vocab, C}, 1.0, rng));
    for (std::size_t i = 0; i < config_.layers; ++i) {
        const std::string p = name + ".layer" + std::to_string(i);
        EncoderLayer layer;
        layer.conditioned = config_.style_dim > 0;
        layer.pre_attn = nn::AffineLayerNorm::create(store, p + ".pre_attn", C);
        layer.attn.wq = nn::Linear::create(store, rng, p + ".attn.wq", C, C, false);
        layer.attn.wk = nn::Linear::create(store, rng, p + ".attn.wk", C, C, false);
        layer.attn.wv = nn::Linear::create(store, rng, p + ".attn.wv", C, C, false);
        layer.attn.wg = nn::Linear::create(store, rng, p + ".attn.wg", C, C, false);
        layer.attn.wo = nn::Linear::create(store, rng, p + ".attn.wo", C, C, false);
        layer.attn.norm_gain = store.add(p + ".attn.gn.gain", Tensor::full({C}, 1.0));
        layer.attn.norm_shift = store.add(p + ".attn.gn.shift", Tensor::zeros({C}));
        layer.pre_ffn = nn::AffineLayerNorm::create(store, p + ".pre_ffn", C);
        layer.ffn_in = nn::Linear::create(store, rng, p + ".ffn.in", C, config_.ffn_mult * C);
        layer.ffn_out = nn::Linear::create(store, rng, p + ".ffn.out", config_.ffn_mult * C, C);
        if (layer.conditioned) {
            layer.post_attn_style = adapters::AdaLN(store, rng, p + ".adaln_attn", config_.style_dim, C);
            layer.post_ffn_style = adapters::AdaLN(store, rng, p + ".adaln_ffn", config_.style_dim, C);
        } else {
            layer.post_attn_plain = nn::AffineLayerNorm::create(store, p + ".ln_attn", C);
            layer.post_ffn_plain = nn::AffineLayerNorm::create(store, p + ".ln_ffn", C);
        }
        layers_.push_back(std::move(layer));
    }
}

Tensor TextEncoder::encode(const PhonemeSeq& seq, const std::optional<Tensor>& style) const {
    if (seq.ids.empty()) throw InputError("empty phoneme sequence");
    for (auto id : seq.ids) {
        if (id >= config_.vocab) {
            throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(config_.vocab));
        }
    }
    const bool conditioned = config_.style_dim > 0;
    if (conditioned && !style) throw ContractError("style vector required for a style-conditioned text encoder");
    if (conditioned && style->size() != config_.style_dim) throw DimensionError("style vector width mismatch");
    auto x = index_select(embedding_, 0, seq.ids);
    for (const auto& layer : layers_) x = layer.forward(x, style, config_.heads, config_.rope_base);
    return x;
}

std::vector<std::string> read_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open vocabulary file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

PhonemeSeq tokenize(const std::vector<std::string>& symbols, const std::vector<std::string>& vocabulary) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) index.emplace(vocabulary[i], i);
    PhonemeSeq seq;
    for (const auto& s : symbols) {
        auto it = index.find(s);
        if (it == index.end()) throw InputError("unknown phoneme symbol: " + s);
        seq.ids.push_back(it->second);
    }
    return seq;
}

}  // namespace dex::text
