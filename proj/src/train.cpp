#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dex/errors.hpp"
#include "dex/pipeline.hpp"
#include "dex/serialize.hpp"

namespace dex::pipeline {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'E', 'X', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kDivergence = 1e6;
constexpr std::uint64_t kTrainStream = 0x9E3779B97F4A7C15ULL;

void ensure_state(const ParamStore& store, AdamState& s) {
    if (!s.m.empty()) return;
    for (const auto& p : store.trainable()) {
        s.m.push_back(Tensor::zeros(p.shape()));
        s.v.push_back(Tensor::zeros(p.shape()));
    }
}

std::string format(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

void adam_step(ParamStore& store, AdamState& s, double lr, double beta1, double beta2, double eps) {
    ensure_state(store, s);
    auto params = store.trainable();
    if (params.size() != s.m.size()) throw ContractError("adam: state does not match the parameter store");
    ++s.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto m = s.m[k].mutable_data();
        auto v = s.v[k].mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
    auto params = store.trainable();
    double ss = 0.0;
    for (const auto& p : params)
        if (p.has_grad())
            for (double g : p.grad()) ss += g * g;
    const double norm = std::sqrt(ss);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& p : params)
            if (p.has_grad())
                for (auto& g : p.mutable_grad()) g *= f;
    }
    return norm;
}

Checkpoint init_checkpoint(const ModelConfig& config) {
    Checkpoint c;
    c.model = std::make_unique<Model>(config);
    c.rng_state = Rng(static_cast<std::uint64_t>(config.seed) ^ kTrainStream).state();
    return c;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    os.write(kCheckpointMagic, 4);
    io::write_u32(os, kCheckpointVersion);
    io::write_string(os, to_json(ckpt.config()));
    io::write_u64(os, ckpt.epoch);
    io::write_string(os, ckpt.rng_state);
    const auto& entries = ckpt.model->store().entries();
    io::write_u64(os, entries.size());
    for (const auto& e : entries) {
        io::write_string(os, e.name);
        io::write_u32(os, e.trainable ? 1 : 0);
        io::write_tensor(os, e.tensor);
    }
    io::write_u64(os, ckpt.adam.step);
    io::write_u64(os, ckpt.adam.m.size());
    for (std::size_t k = 0; k < ckpt.adam.m.size(); ++k) {
        io::write_tensor(os, ckpt.adam.m[k]);
        io::write_tensor(os, ckpt.adam.v[k]);
    }
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) throw InputError("not a checkpoint");
    if (io::read_u32(is) != kCheckpointVersion) throw InputError("unsupported checkpoint version");
    Checkpoint c;
    c.model = std::make_unique<Model>(from_json(io::read_string(is)));
    c.epoch = io::read_u64(is);
    c.rng_state = io::read_string(is);
    const auto& entries = c.model->store().entries();
    if (io::read_u64(is) != entries.size()) throw InputError("checkpoint parameter count mismatch");
    for (const auto& e : entries) {
        const auto name = io::read_string(is);
        const bool trainable = io::read_u32(is) != 0;
        const auto t = io::read_tensor(is);
        if (name != e.name || trainable != e.trainable || t.shape() != e.tensor.shape()) {
            throw InputError("checkpoint entry '" + name + "' does not match the model");
        }
        auto dst = Tensor(e.tensor).mutable_data();
        std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
    c.adam.step = io::read_u64(is);
    const auto n = io::read_u64(is);
    const auto params = c.model->store().trainable();
    if (n != 0 && n != params.size()) throw InputError("checkpoint optimizer state mismatch");
    for (std::uint64_t k = 0; k < n; ++k) {
        c.adam.m.push_back(io::read_tensor(is));
        c.adam.v.push_back(io::read_tensor(is));
        if (c.adam.m.back().shape() != params[k].shape() || c.adam.v.back().shape() != params[k].shape()) {
            throw InputError("checkpoint optimizer moment shape mismatch");
        }
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write '" + path + "'");
    write_checkpoint(f, ckpt);
    if (!f) throw InputError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(f);
}

std::string loss_csv_header() { return "epoch,L_dur,L_prior,L_diff,L_vq,total"; }

std::string loss_csv_row(const EpochLog& log) {
    const auto& l = log.loss;
    return std::to_string(log.epoch) + "," + format(l.dur) + "," + format(l.prior) + "," + format(l.diff) + "," +
           format(l.vq) + "," + format(l.total);
}

std::vector<EpochLog> train(Checkpoint& ckpt, const ToyCorpus& corpus, const TrainOptions& options) {
    if (corpus.utterances.empty()) throw InputError("train: corpus is empty");
    Model& model = *ckpt.model;
    const auto& cfg = model.config();
    Rng rng;
    rng.set_state(ckpt.rng_state);

    std::ofstream csv;
    if (!options.loss_csv.empty()) {
        csv.open(options.loss_csv, ckpt.epoch == 0 ? std::ios::trunc : std::ios::app);
        if (!csv) throw InputError("cannot write '" + options.loss_csv + "'");
        if (ckpt.epoch == 0) csv << loss_csv_header() << '\n';
    }

    const std::size_t n = corpus.utterances.size();
    std::vector<EpochLog> logs;
    for (std::size_t epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
        }
        EpochLog log{epoch + 1, {}};
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            std::vector<const Utterance*> batch;
            for (std::size_t i = start; i < std::min(n, start + cfg.batch); ++i) batch.push_back(&corpus.utterances[order[i]]);
            model.store().zero_grad();
            std::vector<styles::StyleBundle> bundles;
            const auto terms = total_loss(model, batch, rng, &bundles);
            const auto v = LossValues::of(terms);
            if (!(v.total < kDivergence)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + " (loss " + format(v.total) + ")");
            }
            backward(terms.total);
            clip_grad_norm(model.store(), cfg.grad_clip);
            adam_step(model.store(), ckpt.adam, cfg.lr);
            for (const auto& b : bundles) model.ema_update(b);
            log.loss.dur += v.dur;
            log.loss.prior += v.prior;
            log.loss.diff += v.diff;
            log.loss.vq += v.vq;
            log.loss.total += v.total;
            ++steps;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        log.loss = {log.loss.dur * inv, log.loss.prior * inv, log.loss.diff * inv, log.loss.vq * inv,
                    log.loss.total * inv};
        ckpt.epoch = epoch + 1;
        ckpt.rng_state = rng.state();
        if (csv.is_open()) csv << loss_csv_row(log) << '\n';
        if (options.on_epoch) options.on_epoch(log);
        if (cfg.checkpoint_every && ckpt.epoch % cfg.checkpoint_every == 0 && !options.checkpoint_path.empty()) {
            save_checkpoint(options.checkpoint_path, ckpt);
        }
        logs.push_back(log);
    }
    return logs;
}

}  // namespace dex::pipeline
