#include <cmath>

#include "dex/errors.hpp"
#include "dex/pipeline.hpp"

namespace dex::pipeline {

using namespace dex::ops;

namespace {

decoder::DecoderStyles view(const styles::StyleBundle* b) {
    if (!b) return {};
    return {&b->h_inv, &b->h_d_v};
}

void require_finite(const Tensor& t, const char* name) {
    if (!std::isfinite(t.item())) throw NumericError(std::string("loss component ") + name + " is not finite");
}

}  // namespace

LossValues LossValues::of(const LossTerms& t) {
    return {t.dur.item(), t.prior.item(), t.diff.item(), t.vq.item(), t.total.item()};
}

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    if (config_.mode == Mode::dex) styles_.emplace(store_, rng, "style", config_.style_config());
    text_ = text::TextEncoder(store_, rng, "text", config_.text_config());
    aligner_ = align::Aligner(store_, rng, "aligner", config_.text_hidden, config_.mel_bins, config_.dp_channels);
    decoder_ = decoder::Decoder(store_, rng, "decoder", config_.decoder_config());
}

Tensor Model::encode_text(const text::PhonemeSeq& seq, const styles::StyleBundle* bundle) const {
    if (bundle) return text_.encode(seq, bundle->h_e_v);
    return text_.encode(seq, std::nullopt);
}

LossTerms Model::losses(const Utterance& utt, Rng& rng, styles::StyleBundle* bundle_out) const {
    const Tensor& x = utt.mel.values;
    std::optional<styles::StyleBundle> bundle;
    if (styles_) bundle = styles_->encode(utt.mel, utt.log_f0);
    const auto* b = bundle ? &*bundle : nullptr;

    const auto h_text = encode_text(utt.phonemes, b);
    const auto out = aligner_.train_forward(h_text, x);
    LossTerms t;
    t.dur = align::duration_loss(out.log_d_hat, out.path);
    t.prior = align::prior_loss(out.h_mel, x);
    t.diff = decoder::diffusion_loss(decoder_, x, out.h_mel, view(b), config_.schedule(), rng).loss;
    t.vq = b ? scale(b->vq_loss, config_.beta_vq) : Tensor::scalar(0.0);
    t.total = add(add(add(t.dur, t.prior), t.diff), t.vq);
    require_finite(t.dur, "L_dur");
    require_finite(t.prior, "L_prior");
    require_finite(t.diff, "L_diff");
    require_finite(t.vq, "L_vq");
    if (bundle_out && bundle) *bundle_out = std::move(*bundle);
    return t;
}

Tensor Model::prior_mel(const Utterance& utt) const {
    NoGradGuard guard;
    std::optional<styles::StyleBundle> bundle;
    if (styles_) bundle = styles_->encode(utt.mel, utt.log_f0);
    const auto h_text = encode_text(utt.phonemes, bundle ? &*bundle : nullptr);
    return aligner_.train_forward(h_text, utt.mel.values).h_mel;
}

align::AlignmentPath Model::alignment(const Utterance& utt) const {
    NoGradGuard guard;
    std::optional<styles::StyleBundle> bundle;
    if (styles_) bundle = styles_->encode(utt.mel, utt.log_f0);
    const auto h_text = encode_text(utt.phonemes, bundle ? &*bundle : nullptr);
    return aligner_.train_forward(h_text, utt.mel.values).path;
}

void Model::ema_update(const styles::StyleBundle& bundle) {
    if (styles_) styles_->ema_update(bundle);
}

MelSpec Model::synthesize(const SynthesisRequest& req) const {
    NoGradGuard guard;
    std::optional<styles::StyleBundle> bundle;
    if (config_.mode == Mode::dex) {
        if (!req.reference) throw UsageError("synthesize: a reference is required in dex mode");
        bundle = styles_->encode(req.reference->mel, req.reference->log_f0);
    } else if (req.reference && !req.ignore_reference) {
        throw UsageError("synthesize: gedex mode takes no reference");
    }
    const auto* b = bundle ? &*bundle : nullptr;
    const auto h_text = encode_text(req.phonemes, b);
    Tensor h_mel;
    if (req.durations) {
        if (req.durations->durations.size() != req.phonemes.ids.size()) {
            throw InputError("synthesize: one duration per token required");
        }
        h_mel = align::length_regulate(aligner_.project(h_text), *req.durations);
    } else {
        h_mel = aligner_.infer(h_text).h_mel;
    }
    Rng rng(req.seed);
    MelSpec mel;
    mel.values = decoder::sample_euler(decoder_, h_mel, view(b), config_.schedule(), req.nfe, rng,
                                       {.mean_shift = false, .trace = req.trace});
    mel.sample_rate = static_cast<double>(config_.sample_rate);
    mel.hop = config_.hop;
    return mel;
}

LossTerms total_loss(const Model& model, const std::vector<const Utterance*>& batch, Rng& rng,
                     std::vector<styles::StyleBundle>* bundles) {
    if (batch.empty()) throw ContractError("total_loss: empty batch");
    std::vector<Tensor> dur, prior, diff, vq;
    for (const auto* u : batch) {
        styles::StyleBundle b;
        const auto t = model.losses(*u, rng, bundles ? &b : nullptr);
        dur.push_back(t.dur);
        prior.push_back(t.prior);
        diff.push_back(t.diff);
        vq.push_back(t.vq);
        if (bundles && b.h_pre.defined()) bundles->push_back(std::move(b));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    auto average = [&](const std::vector<Tensor>& parts) {
        Tensor s = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) s = add(s, parts[i]);
        return scale(s, inv);
    };
    LossTerms t;
    t.dur = average(dur);
    t.prior = average(prior);
    t.diff = average(diff);
    t.vq = average(vq);
    t.total = add(add(add(t.dur, t.prior), t.diff), t.vq);
    return t;
}

}  // namespace dex::pipeline
