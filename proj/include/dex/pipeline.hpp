#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dex/aligner.hpp"
#include "dex/decoder.hpp"
#include "dex/mel.hpp"
#include "dex/styles.hpp"
#include "dex/text_encoder.hpp"

namespace dex::pipeline {

enum class Mode { dex, gedex };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

/// Every hyperparameter of a run. Field names double as config-file keys.
struct ModelConfig {
    std::string profile = "toy";
    Mode mode = Mode::dex;

    std::size_t mel_bins = 16;
    std::size_t n_fft = 1024;
    std::size_t hop = 256;
    std::size_t win = 1024;
    std::size_t sample_rate = 22050;

    std::size_t vocab = 12;
    std::size_t text_layers = 2;
    std::size_t text_hidden = 32;
    std::size_t text_heads = 2;

    std::size_t tiv_layers = 3;  // L
    std::size_t tv_layers = 2;
    std::size_t codebook_size = 32;  // K
    std::size_t code_dim = 48;       // D
    std::size_t style_kernel = 5;
    double ema_decay = 0.99;

    std::size_t channels = 32;  // C
    std::size_t patch = 2;      // P
    std::size_t dit_blocks = 2;  // N
    std::size_t dit_heads = 2;
    std::size_t mlp_ratio = 2;
    decoder::EmbedKind embed = decoder::EmbedKind::conv_freq;
    bool overlap = true;
    std::size_t max_frames = 48;
    std::size_t dp_channels = 32;

    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 0.5;
    double p_mean = -1.2;
    double p_std = 1.2;

    double lr = 2e-3;
    std::size_t batch = 4;
    std::size_t epochs = 150;
    double grad_clip = 1.0;
    double beta_vq = 0.25;
    std::size_t checkpoint_every = 0;
    std::size_t seed = 1;

    std::size_t n_utts = 8;
    std::size_t t_min = 24;
    std::size_t t_max = 48;

    void validate() const;

    text::TextEncoderConfig text_config() const;
    styles::StyleConfig style_config() const;
    decoder::DecoderConfig decoder_config() const;
    decoder::NoiseSchedule schedule() const;
};

/// Named presets: toy, toy-gedex, paper-default, gedex.
ModelConfig profile_config(const std::string& name);
std::vector<std::string> profile_names();
/// TOML-like `key = value` lines; `#` starts a comment. A `profile` key, if
/// present, must come first and selects the base the other keys override.
ModelConfig parse_config(const std::string& text);
/// A profile name or the path of a config file.
ModelConfig load_config(const std::string& name_or_path);
std::string to_key_values(const ModelConfig& config);
/// Keys sorted; numbers in shortest round-trip form.
std::string to_json(const ModelConfig& config);
ModelConfig from_json(const std::string& text);

struct Utterance {
    text::PhonemeSeq phonemes;
    MelSpec mel;
    Tensor log_f0;                       // [T]
    std::vector<std::size_t> durations;  // frames stamped per token
};

struct ToyCorpus {
    std::uint64_t seed = 0;
    std::size_t vocab = 0;
    std::vector<Utterance> utterances;
};

struct CorpusOptions {
    std::uint64_t seed = 7;
    std::size_t n_utts = 8;
    std::size_t vocab = 12;
    std::size_t bins = 16;
    std::size_t t_min = 24;
    std::size_t t_max = 48;
    std::size_t sample_rate = 22050;
    std::size_t hop = 256;

    static CorpusOptions from_config(const ModelConfig& config, std::uint64_t seed);
};

/// Center (in bins) of the spectral band a token stamps.
double band_center(std::size_t token, std::size_t vocab, std::size_t bins);
ToyCorpus synth_corpus(const CorpusOptions& options);
void write_corpus(std::ostream& os, const ToyCorpus& corpus);
ToyCorpus read_corpus(std::istream& is);
void save_corpus(const std::string& path, const ToyCorpus& corpus);
ToyCorpus load_corpus(const std::string& path);

struct LossTerms {
    Tensor dur, prior, diff, vq, total;
};

struct LossValues {
    double dur = 0, prior = 0, diff = 0, vq = 0, total = 0;
    static LossValues of(const LossTerms& terms);
};

struct Reference {
    MelSpec mel;
    Tensor log_f0;
};

struct SynthesisRequest {
    text::PhonemeSeq phonemes;
    std::optional<Reference> reference;
    std::size_t nfe = 50;
    std::uint64_t seed = 0;
    /// Replaces predicted durations (evaluation against a known frame count).
    std::optional<align::AlignmentPath> durations;
    /// Drop a supplied reference in gedex mode instead of rejecting it.
    bool ignore_reference = false;
    std::vector<decoder::SamplerStep>* trace = nullptr;
};

/// The assembled acoustic model. Owns its parameters; not copyable.
class Model {
public:
    /// Parameters initialized from config.seed.
    explicit Model(const ModelConfig& config);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    /// Four-term loss of one utterance, its own mel serving as the reference.
    /// `bundle`, when given, receives the style encoding for the EMA update.
    LossTerms losses(const Utterance& utt, Rng& rng, styles::StyleBundle* bundle = nullptr) const;
    /// Teacher-forced h_mel for an utterance (MAS against its mel).
    Tensor prior_mel(const Utterance& utt) const;
    align::AlignmentPath alignment(const Utterance& utt) const;
    void ema_update(const styles::StyleBundle& bundle);

    MelSpec synthesize(const SynthesisRequest& request) const;

    const text::TextEncoder& text_encoder() const { return text_; }
    const align::Aligner& aligner() const { return aligner_; }
    const decoder::Decoder& decoder() const { return decoder_; }
    const styles::StyleEncoder* style_encoder() const { return styles_ ? &*styles_ : nullptr; }

private:
    Tensor encode_text(const text::PhonemeSeq& seq, const styles::StyleBundle* bundle) const;

    ModelConfig config_;
    ParamStore store_;
    std::optional<styles::StyleEncoder> styles_;
    text::TextEncoder text_;
    align::Aligner aligner_;
    decoder::Decoder decoder_;
};

/// Mean of the per-utterance loss terms over a batch.
LossTerms total_loss(const Model& model, const std::vector<const Utterance*>& batch, Rng& rng,
                     std::vector<styles::StyleBundle>* bundles = nullptr);

struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor> m, v;  // store.trainable() order
};

/// First-order adaptive-moment update with bias correction.
void adam_step(ParamStore& store, AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);
/// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(ParamStore& store, double max_norm);

struct Checkpoint {
    std::unique_ptr<Model> model;
    AdamState adam;
    std::size_t epoch = 0;
    std::string rng_state;

    const ModelConfig& config() const { return model->config(); }
};

Checkpoint init_checkpoint(const ModelConfig& config);
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct EpochLog {
    std::size_t epoch = 0;
    LossValues loss;
};

struct TrainOptions {
    std::string loss_csv;         // empty: no CSV
    std::string checkpoint_path;  // target of the every-k-epochs saves
    std::function<void(const EpochLog&)> on_epoch;
};

/// Runs the remaining epochs up to config.epochs. Throws NumericError on
/// divergence or a non-finite loss component.
std::vector<EpochLog> train(Checkpoint& ckpt, const ToyCorpus& corpus, const TrainOptions& options = {});

/// CSV header and row of the loss log.
std::string loss_csv_header();
std::string loss_csv_row(const EpochLog& log);

}  // namespace dex::pipeline
