#include <cmath>
#include <fstream>
#include <numbers>

#include "dex/errors.hpp"
#include "dex/pipeline.hpp"
#include "dex/rng.hpp"
#include "dex/serialize.hpp"

namespace dex::pipeline {

namespace {

constexpr char kCorpusMagic[4] = {'D', 'E', 'X', 'C'};
constexpr std::uint32_t kCorpusVersion = 1;
constexpr std::size_t kMinDuration = 2, kMaxDuration = 6;

std::vector<std::size_t> draw_durations(std::size_t T, Rng& rng) {
    std::vector<std::size_t> d;
    std::size_t left = T;
    while (left > 0) {
        std::size_t k = std::min<std::size_t>(left, rng.uniform_int(kMinDuration, kMaxDuration));
        if (left - k == 1) ++k;
        d.push_back(k);
        left -= k;
    }
    return d;
}

}  // namespace

CorpusOptions CorpusOptions::from_config(const ModelConfig& config, std::uint64_t seed) {
    CorpusOptions o;
    o.seed = seed;
    o.n_utts = config.n_utts;
    o.vocab = config.vocab;
    o.bins = config.mel_bins;
    o.t_min = config.t_min;
    o.t_max = config.t_max;
    o.sample_rate = config.sample_rate;
    o.hop = config.hop;
    return o;
}

double band_center(std::size_t token, std::size_t vocab, std::size_t bins) {
    return (static_cast<double>(token) + 0.5) * static_cast<double>(bins) / static_cast<double>(vocab);
}

ToyCorpus synth_corpus(const CorpusOptions& o) {
    if (o.n_utts == 0) throw UsageError("corpus: at least one utterance required");
    if (o.vocab < 2 || o.bins < 2) throw ConfigError("corpus: need vocab >= 2 and bins >= 2");
    if (o.t_min < kMinDuration || o.t_min > o.t_max) throw ConfigError("corpus: need 2 <= t_min <= t_max");
    Rng rng(o.seed);
    ToyCorpus corpus;
    corpus.seed = o.seed;
    corpus.vocab = o.vocab;
    const std::size_t F = o.bins;
    const double width = 0.6 * static_cast<double>(F) / static_cast<double>(o.vocab) + 0.4;
    std::vector<std::vector<double>> raw;
    for (std::size_t u = 0; u < o.n_utts; ++u) {
        const auto T = static_cast<std::size_t>(rng.uniform_int(o.t_min, o.t_max));
        Utterance utt;
        utt.durations = draw_durations(T, rng);
        for (std::size_t i = 0; i < utt.durations.size(); ++i) {
            std::size_t tok;
            do tok = static_cast<std::size_t>(rng.uniform_int(0, o.vocab - 1));
            while (i > 0 && tok == utt.phonemes.ids.back());
            utt.phonemes.ids.push_back(tok);
        }
        const double gain = 0.6 + 0.8 * rng.uniform();
        const double tilt = 2.0 * rng.uniform() - 1.0;
        const double amp = 0.3 + 0.9 * rng.uniform();
        const double cycles = 0.5 + 1.5 * rng.uniform();
        const double phase = 2.0 * std::numbers::pi * rng.uniform();

        std::vector<double> contour(T), mel(F * T);
        for (std::size_t t = 0; t < T; ++t) {
            contour[t] = amp * std::sin(2.0 * std::numbers::pi * cycles * t / T + phase);
        }
        std::size_t t = 0;
        for (std::size_t i = 0; i < utt.durations.size(); ++i) {
            const double c = band_center(utt.phonemes.ids[i], o.vocab, F);
            for (std::size_t k = 0; k < utt.durations[i]; ++k, ++t)
                for (std::size_t f = 0; f < F; ++f) {
                    const double z = (static_cast<double>(f) - c - contour[t]) / width;
                    mel[f * T + t] = gain * std::exp(-0.5 * z * z) + tilt * (static_cast<double>(f) / (F - 1) - 0.5);
                }
        }
        utt.mel.sample_rate = static_cast<double>(o.sample_rate);
        utt.mel.hop = o.hop;
        utt.log_f0 = Tensor::vector(std::move(contour));
        raw.push_back(std::move(mel));
        corpus.utterances.push_back(std::move(utt));
    }
    double n = 0.0, sum = 0.0;
    for (const auto& m : raw)
        for (double v : m) sum += v, n += 1.0;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& m : raw)
        for (double v : m) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    for (std::size_t u = 0; u < raw.size(); ++u) {
        for (auto& v : raw[u]) v = (v - mean) / sd;
        const std::size_t T = raw[u].size() / F;
        corpus.utterances[u].mel.values = Tensor({F, T}, std::move(raw[u]));
    }
    return corpus;
}

void write_corpus(std::ostream& os, const ToyCorpus& corpus) {
    os.write(kCorpusMagic, 4);
    io::write_u32(os, kCorpusVersion);
    io::write_u64(os, corpus.seed);
    io::write_u64(os, corpus.vocab);
    io::write_u64(os, corpus.utterances.size());
    for (const auto& u : corpus.utterances) {
        io::write_u64(os, u.phonemes.ids.size());
        for (auto id : u.phonemes.ids) io::write_u64(os, id);
        io::write_u64(os, u.durations.size());
        for (auto d : u.durations) io::write_u64(os, d);
        io::write_f64(os, u.mel.sample_rate);
        io::write_u64(os, u.mel.hop);
        io::write_tensor(os, u.mel.values);
        io::write_tensor(os, u.log_f0);
    }
}

ToyCorpus read_corpus(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kCorpusMagic)) throw InputError("not a corpus file");
    if (io::read_u32(is) != kCorpusVersion) throw InputError("unsupported corpus version");
    ToyCorpus c;
    c.seed = io::read_u64(is);
    c.vocab = io::read_u64(is);
    const auto n = io::read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        Utterance u;
        u.phonemes.ids.resize(io::read_u64(is));
        for (auto& id : u.phonemes.ids) id = io::read_u64(is);
        u.durations.resize(io::read_u64(is));
        for (auto& d : u.durations) d = io::read_u64(is);
        u.mel.sample_rate = io::read_f64(is);
        u.mel.hop = io::read_u64(is);
        u.mel.values = io::read_tensor(is);
        u.log_f0 = io::read_tensor(is);
        if (u.mel.values.rank() != 2 || u.log_f0.size() != u.mel.frames()) throw InputError("corrupt corpus entry");
        c.utterances.push_back(std::move(u));
    }
    return c;
}

void save_corpus(const std::string& path, const ToyCorpus& corpus) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write '" + path + "'");
    write_corpus(f, corpus);
    if (!f) throw InputError("write failed for '" + path + "'");
}

ToyCorpus load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open corpus '" + path + "'");
    return read_corpus(f);
}

}  // namespace dex::pipeline
