#include "dex/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dex/errors.hpp"
#include "dex/serialize.hpp"

namespace dex::cli {

using namespace dex::pipeline;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t v = 0;
        const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || r.ec != std::errc{} || r.ptr != item.data() + item.size()) {
            throw UsageError(std::string("--") + what + ": '" + item + "' is not a non-negative integer");
        }
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(std::string("--") + what + " is empty");
    return out;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw InputError("cannot write '" + path + "'");
    return f;
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw UsageError(std::string("--") + what + " is required");
    if (!fs::exists(path)) throw InputError(std::string(what) + " '" + path + "' does not exist");
}

Tensor read_vector_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    const auto m = read_matrix_csv(f);
    return Tensor::vector(std::vector<double>(m.data().begin(), m.data().end()));
}

Reference load_reference(const std::string& mel_path, const std::string& f0_path, const ModelConfig& cfg) {
    Reference ref;
    Tensor f0;
    if (fs::path(mel_path).extension() == ".csv") {
        std::ifstream f(mel_path);
        if (!f) throw InputError("cannot open reference '" + mel_path + "'");
        ref.mel.values = read_matrix_csv(f);
    } else {
        std::ifstream f(mel_path, std::ios::binary);
        if (!f) throw InputError("cannot open reference '" + mel_path + "'");
        ref.mel.values = io::read_tensor(f);
        if (f.peek() != std::char_traits<char>::eof()) f0 = io::read_tensor(f);
    }
    if (!f0_path.empty()) f0 = read_vector_csv(f0_path);
    if (ref.mel.values.rank() != 2 || ref.mel.bins() != cfg.mel_bins) {
        throw InputError("reference mel must have " + std::to_string(cfg.mel_bins) + " rows");
    }
    if (!f0.defined()) f0 = Tensor::zeros({ref.mel.frames()});  // unvoiced everywhere
    if (f0.size() != ref.mel.frames()) throw InputError("reference F0 length differs from its frame count");
    ref.log_f0 = f0;
    ref.mel.sample_rate = static_cast<double>(cfg.sample_rate);
    ref.mel.hop = cfg.hop;
    return ref;
}

const Utterance& pick(const ToyCorpus& corpus, std::size_t index) {
    if (index >= corpus.utterances.size()) {
        throw UsageError("--utt " + std::to_string(index) + " out of range (corpus has " +
                         std::to_string(corpus.utterances.size()) + ")");
    }
    return corpus.utterances[index];
}

void check_compatible(const ModelConfig& cfg, const ToyCorpus& corpus) {
    for (const auto& u : corpus.utterances) {
        if (u.mel.bins() != cfg.mel_bins) {
            throw InputError("corpus has " + std::to_string(u.mel.bins()) + " mel bins, config expects " +
                             std::to_string(cfg.mel_bins));
        }
        for (auto id : u.phonemes.ids)
            if (id >= cfg.vocab) throw InputError("corpus token id exceeds config vocab");
    }
}

/// Spreads `frames` over `tokens` as evenly as possible.
align::AlignmentPath even_durations(std::size_t tokens, std::size_t frames) {
    align::AlignmentPath p;
    for (std::size_t i = 0; i < tokens; ++i) p.durations.push_back(frames / tokens + (i < frames % tokens ? 1 : 0));
    return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct CorpusArgs {
    std::uint64_t seed = 7;
    std::string out;
    std::size_t n = 8, bins = 16, vocab = 12, t_min = 24, t_max = 48;
    bool force = false;
};

struct TrainArgs {
    std::string config = "toy", corpus, out, loss_csv, dump_alignments;
    std::size_t epochs = 0, seed = 0;
    bool has_epochs = false, has_seed = false, dry_run = false;
};

struct SynthArgs {
    std::string ckpt, text_ids, symbols, vocab_file, ref, ref_f0, corpus, out, plot, trace, durations;
    std::size_t utt = 0, nfe = 50;
    std::uint64_t seed = 0;
    bool has_utt = false;
};

struct SweepArgs {
    std::string ckpt, corpus, out, nfe_list = "10,25,50";
    std::size_t utt = 0, repeat = 1;
    std::uint64_t seed = 0;
};

struct AblateArgs {
    std::string config = "toy", corpus, out, kinds = "sin-cos,time-freq,pos-freq,conv-freq";
    std::size_t epochs = 20, nfe = 10;
    bool no_overlap_ablation = false;
};

int cmd_corpus(const CorpusArgs& a, std::ostream& out) {
    if (a.n == 0) throw UsageError("--n must be at least 1");
    if (fs::exists(a.out) && !a.force) throw UsageError("'" + a.out + "' exists; pass --force to overwrite");
    CorpusOptions o;
    o.seed = a.seed;
    o.n_utts = a.n;
    o.bins = a.bins;
    o.vocab = a.vocab;
    o.t_min = a.t_min;
    o.t_max = a.t_max;
    const auto corpus = synth_corpus(o);
    save_corpus(a.out, corpus);
    std::size_t frames = 0;
    for (const auto& u : corpus.utterances) frames += u.mel.frames();
    out << "wrote " << corpus.utterances.size() << " utterances (" << frames << " frames) to " << a.out << '\n';
    return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    auto cfg = load_config(a.config);
    if (a.has_epochs) cfg.epochs = a.epochs;
    if (a.has_seed) cfg.seed = a.seed;
    cfg.validate();
    out << "# config\n" << to_key_values(cfg);
    if (a.dry_run) return 0;
    require_file(a.corpus, "corpus");
    if (a.out.empty()) throw UsageError("--out is required");
    const auto corpus = load_corpus(a.corpus);
    check_compatible(cfg, corpus);

    auto ckpt = init_checkpoint(cfg);
    out << "# parameters " << ckpt.model->store().trainable_scalar_count() << '\n';
    TrainOptions opts;
    opts.loss_csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
    opts.checkpoint_path = a.out;
    const auto t0 = std::chrono::steady_clock::now();
    opts.on_epoch = [&](const EpochLog& log) {
        if (log.epoch == 1 || log.epoch % 10 == 0 || log.epoch == cfg.epochs) {
            out << "epoch " << log.epoch << " total " << num(log.loss.total) << " prior " << num(log.loss.prior)
                << '\n';
        }
    };
    train(ckpt, corpus, opts);
    save_checkpoint(a.out, ckpt);
    if (!a.dump_alignments.empty()) {
        auto f = open_out(a.dump_alignments);
        f << "utterance,durations\n";
        for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
            const auto p = ckpt.model->alignment(corpus.utterances[i]);
            f << i << ',';
            for (std::size_t k = 0; k < p.durations.size(); ++k) f << (k ? " " : "") << p.durations[k];
            f << '\n';
        }
    }
    out << "trained " << cfg.epochs << " epochs in " << num(seconds_since(t0)) << " s; checkpoint " << a.out
        << ", loss log " << opts.loss_csv << '\n';
    return 0;
}

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    require_file(a.ckpt, "ckpt");
    if (a.out.empty()) throw UsageError("--out is required");
    const auto ckpt = load_checkpoint(a.ckpt);
    const auto& model = *ckpt.model;
    const auto& cfg = model.config();

    SynthesisRequest req;
    req.nfe = a.nfe;
    req.seed = a.seed;
    std::optional<ToyCorpus> corpus;
    if (!a.corpus.empty()) {
        require_file(a.corpus, "corpus");
        corpus = load_corpus(a.corpus);
    }
    if (!a.text_ids.empty()) {
        req.phonemes.ids = parse_list(a.text_ids, "text-ids");
    } else if (!a.symbols.empty()) {
        if (a.vocab_file.empty()) throw UsageError("--symbols needs --vocab-file");
        std::vector<std::string> syms;
        std::istringstream ss(a.symbols);
        for (std::string s; ss >> s;) syms.push_back(s);
        req.phonemes = text::tokenize(syms, text::read_vocabulary(a.vocab_file));
    } else if (corpus && a.has_utt) {
        req.phonemes = pick(*corpus, a.utt).phonemes;
    } else {
        throw UsageError("give --text-ids, --symbols or --corpus with --utt");
    }
    if (!a.ref.empty()) {
        require_file(a.ref, "ref");
        req.reference = load_reference(a.ref, a.ref_f0, cfg);
    } else if (corpus && a.has_utt && cfg.mode == Mode::dex) {
        const auto& u = pick(*corpus, a.utt);
        req.reference = Reference{u.mel, u.log_f0};
    }
    if (cfg.mode == Mode::gedex && req.reference) {
        err << "warning: gedex checkpoint takes no reference; --ref ignored\n";
        req.ignore_reference = true;
    }
    if (cfg.mode == Mode::dex && !req.reference) throw UsageError("dex checkpoint needs --ref (or --corpus with --utt)");
    if (!a.durations.empty()) req.durations = align::AlignmentPath{parse_list(a.durations, "durations")};

    std::vector<decoder::SamplerStep> trace;
    if (!a.trace.empty()) req.trace = &trace;
    const auto mel = model.synthesize(req);
    {
        auto f = open_out(a.out);
        write_matrix_csv(f, mel.values);
    }
    if (!a.plot.empty()) {
        auto f = open_out(a.plot, true);
        write_pgm(f, mel.values);
    }
    if (!a.trace.empty()) {
        auto f = open_out(a.trace);
        f << "i,t,x_norm,update_norm\n";
        for (const auto& s : trace) f << s.i << ',' << num(s.t) << ',' << num(s.x_norm) << ',' << num(s.update_norm) << '\n';
    }
    out << "synthesized " << mel.frames() << " frames (" << num(mel.seconds()) << " s of audio) to " << a.out << '\n';
    return 0;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    require_file(a.ckpt, "ckpt");
    require_file(a.corpus, "corpus");
    const auto ckpt = load_checkpoint(a.ckpt);
    const auto corpus = load_corpus(a.corpus);
    check_compatible(ckpt.config(), corpus);
    const auto nfes = parse_list(a.nfe_list, "nfe-list");
    if (a.repeat == 0) throw UsageError("--repeat must be at least 1");
    const auto rows = run_sweep(*ckpt.model, pick(corpus, a.utt), nfes, a.repeat, a.seed);
    std::ofstream f;
    if (!a.out.empty()) f = open_out(a.out);
    std::ostream& os = a.out.empty() ? out : f;
    os << sweep_csv_header() << '\n';
    for (const auto& r : rows) os << sweep_csv_row(r) << '\n';
    return 0;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    auto base = load_config(a.config);
    require_file(a.corpus, "corpus");
    const auto corpus = load_corpus(a.corpus);
    check_compatible(base, corpus);
    AblationOptions o;
    o.kinds.clear();
    std::stringstream ss(a.kinds);
    for (std::string k; std::getline(ss, k, ',');) o.kinds.push_back(decoder::embed_kind_from_string(k));
    if (o.kinds.empty()) throw UsageError("--kinds is empty");
    o.epochs = a.epochs;
    o.nfe = a.nfe;
    o.overlap_ablation = !a.no_overlap_ablation;
    o.threads = worker_threads();
    const auto rows = run_ablation(base, corpus, o);
    std::ofstream f;
    if (!a.out.empty()) f = open_out(a.out);
    std::ostream& os = a.out.empty() ? out : f;
    os << ablation_csv_header() << '\n';
    for (const auto& r : rows) os << ablation_csv_row(r) << '\n';
    return 0;
}

}  // namespace

std::size_t worker_threads() {
    const char* env = std::getenv("DEX_THREADS");
    if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
    std::size_t v = 0;
    const std::string s(env);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || v == 0) {
        throw UsageError("DEX_THREADS must be a positive integer, got '" + s + "'");
    }
    return v;
}

double real_time_factor(double synth_seconds, std::size_t frames, std::size_t hop, double sample_rate) {
    if (frames == 0) throw ContractError("real_time_factor: no frames");
    return synth_seconds / (static_cast<double>(frames * hop) / sample_rate);
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("mean_squared_error: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

std::vector<SweepRow> run_sweep(const Model& model, const Utterance& target, const std::vector<std::size_t>& nfes,
                                std::size_t repeat, std::uint64_t seed) {
    const auto path = model.alignment(target);
    std::vector<SweepRow> rows;
    for (auto nfe : nfes)
        for (std::size_t r = 0; r < repeat; ++r) {
            SynthesisRequest req;
            req.phonemes = target.phonemes;
            if (model.config().mode == Mode::dex) req.reference = Reference{target.mel, target.log_f0};
            req.nfe = nfe;
            req.seed = seed + r;
            req.durations = path;
            const auto t0 = std::chrono::steady_clock::now();
            const auto mel = model.synthesize(req);
            SweepRow row;
            row.synth_seconds = seconds_since(t0);
            row.nfe = nfe;
            row.repeat = r;
            row.mse = mean_squared_error(mel.values, target.mel.values);
            row.frames = mel.frames();
            row.hop = mel.hop;
            row.sample_rate = mel.sample_rate;
            row.rtf = real_time_factor(row.synth_seconds, row.frames, row.hop, row.sample_rate);
            rows.push_back(row);
        }
    return rows;
}

std::string sweep_csv_header() { return "nfe,repeat,mse,synth_seconds,frames,hop,sample_rate,rtf"; }

std::string sweep_csv_row(const SweepRow& r) {
    return std::to_string(r.nfe) + "," + std::to_string(r.repeat) + "," + num(r.mse) + "," + num(r.synth_seconds) +
           "," + std::to_string(r.frames) + "," + std::to_string(r.hop) + "," + num(r.sample_rate) + "," + num(r.rtf);
}

std::vector<AblationRow> run_ablation(const ModelConfig& base, const ToyCorpus& corpus, const AblationOptions& o) {
    if (corpus.utterances.empty()) throw InputError("ablation: corpus is empty");
    struct Job {
        decoder::EmbedKind kind;
        bool overlap;
    };
    std::vector<Job> jobs;
    for (auto k : o.kinds) jobs.push_back({k, true});
    if (o.overlap_ablation) jobs.push_back({decoder::EmbedKind::conv_freq, false});

    std::vector<AblationRow> rows(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    const auto& probe = corpus.utterances.front();
    auto run_job = [&](std::size_t j) {
        try {
            auto cfg = base;
            cfg.embed = jobs[j].kind;
            cfg.overlap = jobs[j].overlap;
            cfg.epochs = o.epochs;
            auto ckpt = init_checkpoint(cfg);
            const auto logs = train(ckpt, corpus);
            const auto& model = *ckpt.model;
            AblationRow& row = rows[j];
            row.kind = cfg.embed;
            row.overlap = cfg.overlap;
            row.patch_kernel = model.decoder().patchify().kernel();
            row.final_loss = logs.empty() ? 0.0 : logs.back().loss.total;

            SynthesisRequest req;
            req.phonemes = probe.phonemes;
            if (cfg.mode == Mode::dex) req.reference = Reference{probe.mel, probe.log_f0};
            req.nfe = o.nfe;
            req.durations = model.alignment(probe);
            row.sample_mse = mean_squared_error(model.synthesize(req).values, probe.mel.values);

            const std::size_t m = 2 * cfg.patch;
            row.long_frames = ((cfg.max_frames + m - 1) / m + 1) * m;
            req.nfe = 1;
            req.durations = even_durations(probe.phonemes.ids.size(), row.long_frames);
            try {
                model.synthesize(req);
                row.long_result = "ok";
            } catch (const ExtentError&) {
                row.long_result = "extent error";
            }
        } catch (...) {
            errors[j] = std::current_exception();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(o.threads, jobs.size()));
    std::size_t next = 0;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t j;
                {
                    std::lock_guard lock(mu);
                    if (next == jobs.size()) return;
                    j = next++;
                }
                run_job(j);
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return rows;
}

std::string ablation_csv_header() { return "embed,overlap,patch_kernel,final_loss,sample_mse,long_frames,long_result"; }

std::string ablation_csv_row(const AblationRow& r) {
    return decoder::to_string(r.kind) + "," + (r.overlap ? "true" : "false") + "," + std::to_string(r.patch_kernel) +
           "," + num(r.final_loss) + "," + num(r.sample_mse) + "," + std::to_string(r.long_frames) + "," + r.long_result;
}

void write_matrix_csv(std::ostream& os, const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("write_matrix_csv: matrix required");
    const std::size_t R = m.dim(0), C = m.dim(1);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) os << (c ? "," : "") << num(m.data()[r * C + c]);
        os << '\n';
    }
}

Tensor read_matrix_csv(std::istream& is) {
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t n = 0;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            double v = 0.0;
            const auto b = cell.find_first_not_of(' '), e = cell.find_last_not_of(' ');
            const auto r = b == std::string::npos ? std::from_chars_result{cell.data(), std::errc::invalid_argument}
                                                  : std::from_chars(cell.data() + b, cell.data() + e + 1, v);
            if (r.ec != std::errc{} || r.ptr != cell.data() + e + 1) {
                throw InputError("CSV row " + std::to_string(rows + 1) + ": bad number '" + cell + "'");
            }
            values.push_back(v);
            ++n;
        }
        if (rows == 0) cols = n;
        else if (n != cols) throw InputError("CSV row " + std::to_string(rows + 1) + " has a different width");
        ++rows;
    }
    if (rows == 0) throw InputError("CSV is empty");
    return Tensor({rows, cols}, std::move(values));
}

void write_pgm(std::ostream& os, const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("write_pgm: matrix required");
    const auto d = m.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const double span = *hi - *lo;
    os << "P5\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
    for (double v : d) {
        const double g = span > 0.0 ? (v - *lo) / span : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * g))));
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"dex: expressive diffusion acoustic model at desk scale"};
    app.name("dex");
    app.require_subcommand(1);

    CorpusArgs ca;
    auto* corpus = app.add_subcommand("corpus", "generate a synthetic toy corpus");
    corpus->add_option("--seed", ca.seed, "corpus seed")->capture_default_str();
    corpus->add_option("--out", ca.out, "output corpus file")->required();
    corpus->add_option("--n", ca.n, "number of utterances")->capture_default_str();
    corpus->add_option("--bins", ca.bins, "mel bins")->capture_default_str();
    corpus->add_option("--vocab", ca.vocab, "token alphabet size")->capture_default_str();
    corpus->add_option("--t-min", ca.t_min, "shortest utterance in frames")->capture_default_str();
    corpus->add_option("--t-max", ca.t_max, "longest utterance in frames")->capture_default_str();
    corpus->add_flag("--force", ca.force, "overwrite an existing file");

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "train a checkpoint on a corpus");
    trainc->add_option("--config", ta.config, "profile name or key=value config file")->capture_default_str();
    trainc->add_option("--corpus", ta.corpus, "corpus file");
    trainc->add_option("--out", ta.out, "checkpoint file");
    trainc->add_option("--loss-csv", ta.loss_csv, "loss log (default <out>.loss.csv)");
    trainc->add_option("--dump-alignments", ta.dump_alignments, "write MAS durations per utterance as CSV");
    auto* ep = trainc->add_option("--epochs", ta.epochs, "override the epoch count");
    auto* sd = trainc->add_option("--seed", ta.seed, "override the seed");
    trainc->add_flag("--dry-run", ta.dry_run, "print the resolved config and exit");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "synthesize a mel-spectrogram");
    synth->add_option("--ckpt", sa.ckpt, "checkpoint file");
    synth->add_option("--text-ids", sa.text_ids, "comma-separated token ids");
    synth->add_option("--symbols", sa.symbols, "space-separated symbols (with --vocab-file)");
    synth->add_option("--vocab-file", sa.vocab_file, "one symbol per line; line index = id");
    synth->add_option("--ref", sa.ref, "reference mel (CSV, or tensor file with optional F0 tensor)");
    synth->add_option("--ref-f0", sa.ref_f0, "reference log-F0 CSV (default: unvoiced)");
    synth->add_option("--corpus", sa.corpus, "take text and reference from a corpus utterance");
    auto* utt = synth->add_option("--utt", sa.utt, "utterance index in --corpus");
    synth->add_option("--durations", sa.durations, "comma-separated frame counts per token");
    synth->add_option("--nfe", sa.nfe, "denoiser evaluations")->capture_default_str();
    synth->add_option("--seed", sa.seed, "sampler seed")->capture_default_str();
    synth->add_option("--out", sa.out, "mel CSV");
    synth->add_option("--plot", sa.plot, "grayscale PGM of the mel");
    synth->add_option("--trace", sa.trace, "per-step sampler trace CSV");

    SweepArgs wa;
    auto* sweep = app.add_subcommand("sweep", "NFE sweep with real-time factors");
    sweep->add_option("--ckpt", wa.ckpt, "checkpoint file");
    sweep->add_option("--corpus", wa.corpus, "corpus with the target utterance");
    sweep->add_option("--utt", wa.utt, "target utterance index")->capture_default_str();
    sweep->add_option("--nfe-list", wa.nfe_list, "comma-separated NFE values")->capture_default_str();
    sweep->add_option("--repeat", wa.repeat, "runs per NFE")->capture_default_str();
    sweep->add_option("--seed", wa.seed, "sampler seed")->capture_default_str();
    sweep->add_option("--out", wa.out, "report CSV (default stdout)");

    AblateArgs aa;
    auto* ablate = app.add_subcommand("ablate", "patch-embedding ablation");
    ablate->add_option("--config", aa.config, "base profile or config file")->capture_default_str();
    ablate->add_option("--corpus", aa.corpus, "corpus file");
    ablate->add_option("--kinds", aa.kinds, "embedding kinds")->capture_default_str();
    ablate->add_option("--epochs", aa.epochs, "training epochs per kind")->capture_default_str();
    ablate->add_option("--nfe", aa.nfe, "NFE for the sample MSE column")->capture_default_str();
    ablate->add_flag("--no-overlap-ablation", aa.no_overlap_ablation, "skip the non-overlapping conv-freq rerun");
    ablate->add_option("--out", aa.out, "comparison CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    ta.has_epochs = ep->count() > 0;
    ta.has_seed = sd->count() > 0;
    sa.has_utt = utt->count() > 0;

    try {
        worker_threads();
        if (corpus->parsed()) return cmd_corpus(ca, out);
        if (trainc->parsed()) return cmd_train(ta, out);
        if (synth->parsed()) return cmd_synth(sa, out, err);
        if (sweep->parsed()) return cmd_sweep(wa, out);
        if (ablate->parsed()) return cmd_ablate(aa, out);
    } catch (const NumericError& e) {
        err << "dex: numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        err << "dex: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

}  // namespace dex::cli
