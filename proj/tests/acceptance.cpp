// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dex/adapters.hpp"
#include "dex/aligner.hpp"
#include "dex/cli.hpp"
#include "dex/decoder.hpp"
#include "dex/errors.hpp"
#include "dex/grad_check.hpp"
#include "dex/pipeline.hpp"
#include "dex/styles.hpp"
#include "test_util.hpp"

using namespace dex;
using namespace dex::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string num(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mse(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    return s / static_cast<double>(a.size());
}

void open_gates(ParamStore& store, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& e : store.entries())
        if (e.name.find(".modulation.") != std::string::npos)
            for (auto& v : const_cast<Tensor&>(e.tensor).mutable_data()) v = 0.3 * (2.0 * rng.uniform() - 1.0);
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_suite() {
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    using OpFn = std::function<Tensor(const Tensor&)>;
    auto positive = [](const Tensor& t) { return ops::add_scalar(ops::square(t), 0.5); };
    auto first = [](const Tensor& t, std::size_t n) { return ops::slice(ops::reshape(t, {t.size()}), 0, 0, n); };
    const Tensor fixed = randn({3, 4}, 900);
    const std::vector<std::pair<std::string, OpFn>> cases = {
        {"add", [](const Tensor& t) { return ops::add(t, ops::square(t)); }},
        {"sub", [](const Tensor& t) { return ops::sub(ops::tanh(t), ops::square(t)); }},
        {"mul", [](const Tensor& t) { return ops::mul(t, ops::sigmoid(t)); }},
        {"scale", [](const Tensor& t) { return ops::scale(ops::square(t), -1.7); }},
        {"add_scalar", [](const Tensor& t) { return ops::add_scalar(ops::square(t), 0.3); }},
        {"broadcast_to", [](const Tensor& t) { return ops::square(ops::broadcast_to(ops::slice(t, 0, 0, 1), {2, 3, 4})); }},
        {"add_b", [&](const Tensor& t) { return ops::add_b(ops::square(t), ops::slice(t, 0, 1, 1)); }},
        {"mul_b", [&](const Tensor& t) { return ops::mul_b(t, ops::slice(ops::tanh(t), 1, 2, 1)); }},
        {"sum", [](const Tensor& t) { return ops::sum(ops::square(t)); }},
        {"mean", [](const Tensor& t) { return ops::mean(ops::mul(t, ops::tanh(t))); }},
        {"sum_axis", [](const Tensor& t) { return ops::sum_axis(ops::square(t), 1); }},
        {"mean_axis", [](const Tensor& t) { return ops::mean_axis(ops::square(t), 0, false); }},
        {"reshape", [](const Tensor& t) { return ops::square(ops::reshape(t, {2, 6})); }},
        {"permute", [](const Tensor& t) { return ops::square(ops::permute(ops::reshape(t, {2, 3, 2}), {2, 0, 1})); }},
        {"transpose", [&](const Tensor& t) { return ops::mul(ops::transpose(t), ops::transpose(ops::tanh(t))); }},
        {"slice", [](const Tensor& t) { return ops::square(ops::slice(t, 1, 1, 2)); }},
        {"concat", [](const Tensor& t) { return ops::concat({ops::square(t), t, ops::tanh(t)}, 1); }},
        {"index_select", [](const Tensor& t) { return ops::square(ops::index_select(t, 0, {2, 0, 0, 1})); }},
        {"matmul", [](const Tensor& t) { return ops::matmul(t, ops::transpose(ops::square(t))); }},
        {"conv2d",
         [&](const Tensor& t) {
             const auto x = ops::reshape(t, {1, 3, 4});
             const auto w = ops::reshape(first(ops::tanh(t), 9), {1, 1, 3, 3});
             return ops::conv2d(x, w, first(t, 1), {2, 1, 1, 1});
         }},
        {"conv_transpose2d",
         [&](const Tensor& t) {
             const auto x = ops::reshape(t, {1, 3, 4});
             const auto w = ops::reshape(first(ops::tanh(t), 9), {1, 1, 3, 3});
             return ops::conv_transpose2d(x, w, first(t, 1), {2, 2, 1, 1, 1, 1});
         }},
        {"conv1d",
         [&](const Tensor& t) {
             const auto w = ops::reshape(first(ops::tanh(t), 9), {1, 3, 3});
             return ops::conv1d(t, w, first(t, 1), 1, 1);
         }},
        {"relu", [&](const Tensor& t) { return ops::relu(ops::add(t, fixed)); }},
        {"sigmoid", [](const Tensor& t) { return ops::sigmoid(t); }},
        {"tanh", [](const Tensor& t) { return ops::tanh(t); }},
        {"silu", [](const Tensor& t) { return ops::silu(t); }},
        {"gelu", [](const Tensor& t) { return ops::gelu(t); }},
        {"softplus", [](const Tensor& t) { return ops::softplus(t); }},
        {"exp", [](const Tensor& t) { return ops::exp(t); }},
        {"log", [&](const Tensor& t) { return ops::log(positive(t)); }},
        {"sqrt", [&](const Tensor& t) { return ops::sqrt(positive(t)); }},
        {"square", [](const Tensor& t) { return ops::square(t); }},
        {"softmax", [](const Tensor& t) { return ops::softmax(t, 1); }},
        {"normalize", [](const Tensor& t) { return ops::normalize(t, ops::NormKind::layer, ops::kNormEps, 1, 1); }},
        {"instance_norm", [](const Tensor& t) { return ops::instance_norm(t); }},
        {"layer_norm", [](const Tensor& t) { return ops::layer_norm(t, 1); }},
        {"group_norm", [](const Tensor& t) { return ops::group_norm(t, 2); }},
        {"straight_through",
         [&](const Tensor& t) { return ops::square(ops::straight_through(t, ops::add(t, fixed))); }},
        {"mse", [&](const Tensor& t) { return ops::mse(t, ops::tanh(t)); }},
    };
    double worst = 0.0;
    std::string worst_name;
    std::uint64_t seed = 1000;
    for (const auto& [name, f] : cases) {
        for (int rep = 0; rep < 2; ++rep) {
            const double err = grad_check(f, randn({3, 4}, seed++), 1e-5);
            if (!(err <= worst)) worst = err, worst_name = name;
            out.require(err <= 1e-4, name + " rel err " + num(err));
        }
    }

    // Denoiser at toy size: noisy input, both style inputs, every parameter tensor.
    auto cfg = pipeline::profile_config("toy").decoder_config();
    cfg.max_frames = 16;
    ParamStore store;
    Rng rng(77);
    decoder::Decoder dec(store, rng, "dec", cfg);
    open_gates(store, 78);
    const std::size_t F = cfg.mel_bins, T = 8;
    const auto h_inv = randn({3, cfg.channels, T}, 79), h_d_v = randn({T, cfg.style_dim}, 80);
    const auto x = randn({F, T}, 81), m = randn({F, T}, 82), w = randn({F, T}, 83);
    const decoder::NoiseSchedule sched;
    const double t = 1.1;
    const double e_x = grad_check(
        [&](const Tensor& v) { return dec.denoise(v, m, t, {&h_inv, &h_d_v}, sched); }, x, 1e-5);
    const double e_inv = grad_check(
        [&](const Tensor& v) { return dec.denoise(x, m, t, {&v, &h_d_v}, sched); }, h_inv, 1e-5);
    const double e_v = grad_check(
        [&](const Tensor& v) { return dec.denoise(x, m, t, {&h_inv, &v}, sched); }, h_d_v, 1e-5);
    const double e_m = grad_check(
        [&](const Tensor& v) { return dec.denoise(x, v, t, {&h_inv, &h_d_v}, sched); }, m, 1e-5);
    out.require(e_x <= 1e-4, "D wrt x_t " + num(e_x));
    out.require(e_inv <= 1e-4, "D wrt h_inv " + num(e_inv));
    out.require(e_v <= 1e-4, "D wrt h_d_v " + num(e_v));
    out.require(e_m <= 1e-4, "D wrt h_mel " + num(e_m));
    auto loss = [&] { return ops::sum(ops::mul(dec.denoise(x, m, t, {&h_inv, &h_d_v}, sched), w)); };
    double worst_param = 0.0;
    std::size_t tensors = 0;
    for (const auto& r : grad_check_leaves(loss, named_trainable(store), 1e-5, 6)) {
        worst_param = std::max(worst_param, r.max_rel_error);
        out.require(r.max_rel_error <= 1e-4, r.name + " rel err " + num(r.max_rel_error));
        ++tensors;
    }
    const double secs = seconds_since(t0);
    out.require(secs < 120.0, "runtime " + num(secs) + " s");
    out.note(std::to_string(cases.size()) + " ops, worst " + worst_name + " " + num(worst) + "; D_theta inputs " +
             num(std::max({e_x, e_inv, e_v, e_m})) + ", " + std::to_string(tensors) + " parameter tensors worst " +
             num(worst_param) + "; " + num(secs, 3) + " s");
    return out;
}

// ---- 2 ----------------------------------------------------------------------

void compositions(std::size_t L, std::size_t T, const std::function<void(const std::vector<std::size_t>&)>& visit) {
    std::vector<std::size_t> d(L, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
        if (i + 1 == L) {
            d[i] = left;
            visit(d);
            return;
        }
        for (std::size_t k = 1; k + (L - 1 - i) <= left; ++k) {
            d[i] = k;
            rec(i + 1, left - k);
        }
    };
    rec(0, T);
}

double cell_sum(const Tensor& ll, const std::vector<std::size_t>& d) {
    double s = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < d[i]; ++k, ++j) s += ll.at({i, j});
    return s;
}

Outcome mas_oracle() {
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t matrices = 0, paths = 0;
    for (std::size_t L = 1; L <= 4; ++L)
        for (std::size_t T = L; T <= 7; ++T)
            for (std::uint64_t s = 0; s < 25; ++s) {
                const auto ll = randn({L, T}, 5000 + 100 * L + 10 * T + s, 2.0);
                const auto path = align::mas_align(ll);
                double best = -1e300;
                compositions(L, T, [&](const std::vector<std::size_t>& d) {
                    best = std::max(best, cell_sum(ll, d));
                    ++paths;
                });
                const double got = cell_sum(ll, path.durations);
                out.require(path.durations.size() == L && path.total() == T,
                            "path shape L=" + std::to_string(L) + " T=" + std::to_string(T));
                out.require(got == best, "score L=" + std::to_string(L) + " T=" + std::to_string(T) + " seed " +
                                             std::to_string(s) + ": " + num(got, 17) + " vs " + num(best, 17));
                out.require(align::path_score(ll, path) == got, "path_score disagrees with cell sum");
                ++matrices;
            }
    for (std::size_t L = 2; L <= 4; ++L) {
        bool threw = false;
        try {
            align::mas_align(randn({L, L - 1}, 6000 + L));
        } catch (const InfeasibleAlignment&) {
            threw = true;
        }
        out.require(threw, "T < L accepted for L=" + std::to_string(L));
    }
    const double secs = seconds_since(t0);
    out.require(matrices >= 100, "only " + std::to_string(matrices) + " matrices");
    out.require(secs < 30.0, "runtime " + num(secs) + " s");
    out.note(std::to_string(matrices) + " matrices, " + std::to_string(paths) + " paths enumerated; " + num(secs, 3) +
             " s");
    return out;
}

// ---- 3 ----------------------------------------------------------------------

Outcome edm_identities() {
    Outcome out;
    const auto c = decoder::edm_coefficients(1.0, 0.5);
    out.require(std::abs(c.c_skip - 0.2) <= 1e-12, "c_skip " + num(c.c_skip, 17));
    out.require(std::abs(c.c_out - 0.5 / std::sqrt(1.25)) <= 1e-12, "c_out " + num(c.c_out, 17));
    out.require(std::abs(c.c_in - 1.0 / std::sqrt(1.25)) <= 1e-12, "c_in " + num(c.c_in, 17));
    out.require(std::abs(c.c_noise) <= 1e-12, "c_noise " + num(c.c_noise, 17));
    const double lambda = decoder::loss_weight(1.0, 0.5);
    out.require(std::abs(lambda - 5.0) <= 1e-12, "lambda " + num(lambda, 17));

    const auto cfg = pipeline::profile_config("toy");
    pipeline::Model model(cfg);
    const auto corpus = pipeline::synth_corpus(pipeline::CorpusOptions::from_config(cfg, 7));
    const auto& u = corpus.utterances[0];
    NoGradGuard guard;
    const auto bundle = model.style_encoder()->encode(u.mel, u.log_f0);
    const auto h_mel = model.prior_mel(u);
    const decoder::DecoderStyles st{&bundle.h_inv, &bundle.h_d_v};
    const auto sched = cfg.schedule();
    const auto x = randn(u.mel.values.shape(), 300);
    out.require(bit_equal(model.decoder().denoise(x, h_mel, 0.0, st, sched), x), "D(x, 0) != x");

    Rng a(301), b(301);
    const auto y = decoder::sample_euler(model.decoder(), h_mel, st, sched, 1, a, {.mean_shift = false});
    std::vector<double> init(h_mel.size());
    for (auto& v : init) v = sched.sigma_max * b.normal();
    const auto d = model.decoder().denoise(Tensor(h_mel.shape(), init), h_mel, sched.sigma_max, st, sched);
    out.require(bit_equal(y, d), "Euler nfe=1 differs from D(x_T, sigma_max) by " + num(max_abs_diff(y, d)));
    out.note("c_skip " + num(c.c_skip, 12) + " c_out " + num(c.c_out, 12) + " c_in " + num(c.c_in, 12) +
             " c_noise " + num(c.c_noise) + " lambda " + num(lambda, 12));
    return out;
}

// ---- 4 ----------------------------------------------------------------------

Outcome adapter_postconditions() {
    Outcome out;
    double stat_err = 0.0, eps_err = 0.0, hull_excess = 0.0, row_err = 0.0, perm_err = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        ParamStore store;
        Rng rng(400 + s);
        const std::size_t C = 6, L = 3, Tr = 9, time_dim = 8;
        adapters::TivAdapter tiv(store, rng, "tiv", C, time_dim);
        const auto h_inv = randn({L, C, Tr}, 500 + s, 2.0);
        const auto pooled = tiv.pool(h_inv, randn({time_dim}, 600 + s));
        // Unit-scale input against the eps-exact std, well-scaled input against raw (mu, sigma).
        for (const double scale : {1.0, 50.0}) {
            const auto h = randn({C, 4, 7}, 700 + s, scale);
            const auto y = adapters::adain(h, pooled.mu, pooled.sigma);
            const std::size_t n = y.size() / C;
            for (std::size_t c = 0; c < C; ++c) {
                const auto hv = h.data().subspan(c * n, n);
                const auto v = y.data().subspan(c * n, n);
                const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(n);
                const double h_mean = std::accumulate(hv.begin(), hv.end(), 0.0) / double(n);
                double var = 0.0, h_var = 0.0;
                for (double e : v) var += (e - mean) * (e - mean);
                for (double e : hv) h_var += (e - h_mean) * (e - h_mean);
                var /= double(n);
                h_var /= double(n);
                const double sigma = pooled.sigma.data()[c];
                const double mean_err = std::abs(mean - pooled.mu.data()[c]);
                if (scale == 1.0) {
                    const double target = sigma * std::sqrt(h_var / (h_var + ops::kNormEps));
                    eps_err = std::max({eps_err, mean_err, std::abs(std::sqrt(var) - target)});
                } else {
                    stat_err = std::max({stat_err, mean_err, std::abs(std::sqrt(var) - sigma)});
                }
            }
        }

        const auto rows = randn({5, 4}, 800 + s, 3.0);
        const auto p = adapters::attention_pool(rows, randn({4, 1}, 900 + s, 4.0));
        for (std::size_t c = 0; c < 4; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t r = 0; r < 5; ++r) lo = std::min(lo, rows.at({r, c})), hi = std::max(hi, rows.at({r, c}));
            hull_excess = std::max({hull_excess, lo - p.data()[c], p.data()[c] - hi});
        }

        adapters::TvAdapter tv(store, rng, "tv", 4, 5);
        const std::size_t F = 3, T = 6;
        const auto hd = randn({4, F, T}, 1000 + s, 2.0);
        const auto sv = randn({7, 5}, 1100 + s, 2.0);
        Tensor attn;
        const auto z = tv(hd, sv, &attn);
        for (std::size_t q = 0; q < attn.dim(0); ++q) {
            double sum = 0.0;
            for (std::size_t k = 0; k < attn.dim(1); ++k) sum += attn.at({q, k});
            row_err = std::max(row_err, std::abs(sum - 1.0));
        }
        std::vector<std::size_t> perm(T);
        std::iota(perm.begin(), perm.end(), 0);
        Rng pr(1200 + s);
        for (std::size_t i = T; i > 1; --i) std::swap(perm[i - 1], perm[pr.uniform_int(0, i - 1)]);
        const auto zp = tv(ops::index_select(hd, 2, perm), sv);
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t t = 0; t < T; ++t)
                    perm_err = std::max(perm_err, std::abs(zp.at({c, f, t}) - z.at({c, f, perm[t]})));
    }
    out.require(stat_err <= 1e-6, "AdaIN stats off by " + num(stat_err));
    out.require(eps_err <= 1e-12, "AdaIN stats off the eps-exact target by " + num(eps_err));
    out.require(hull_excess <= 0.0, "pool leaves hull by " + num(hull_excess));
    out.require(row_err <= 1e-12, "attention row sum off by " + num(row_err));
    out.require(perm_err <= 1e-10, "permutation equivariance off by " + num(perm_err));
    out.note("AdaIN " + num(stat_err) + " (eps-exact " + num(eps_err) + "), hull excess " + num(hull_excess) + ", rows " + num(row_err) +
             ", permutation " + num(perm_err) + " over 20 seeds");
    return out;
}

// ---- 5 ----------------------------------------------------------------------

Outcome patchify() {
    Outcome out;
    for (std::size_t P : {1u, 2u, 4u}) {
        const std::string tag = "P=" + std::to_string(P);
        ParamStore store;
        Rng rng(50 + P);
        decoder::Patchify p(store, rng, "p", 1, P, true);
        out.require(p.kernel() == 2 * P - 1, tag + " kernel " + std::to_string(p.kernel()));
        out.require(p.stride() == P, tag + " stride " + std::to_string(p.stride()));
        out.require(p.conv().weight.dim(2) == 2 * P - 1 && p.conv().weight.dim(3) == 2 * P - 1, tag + " weight shape");

        fill(const_cast<nn::Conv2d&>(p.conv()).weight, 1.0);
        fill(const_cast<nn::Conv2d&>(p.conv()).bias, 0.0);
        const std::size_t H = 3 * P, W = 4 * P;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                auto x = Tensor::zeros({1, H, W});
                x.mutable_data()[i * W + j] = 1.0;
                const auto y = p(x);
                std::set<std::pair<std::size_t, std::size_t>> got, expect;
                for (std::size_t a = 0; a < y.dim(1); ++a)
                    for (std::size_t b = 0; b < y.dim(2); ++b)
                        if (y.at({0, a, b}) != 0.0) got.insert({a, b});
                auto covers = [&](std::size_t o, std::size_t k) {
                    return long(k) >= long(o * P) - long(P - 1) && long(k) <= long(o * P + P - 1);
                };
                for (std::size_t a = 0; a < H / P; ++a)
                    for (std::size_t b = 0; b < W / P; ++b)
                        if (covers(a, i) && covers(b, j)) expect.insert({a, b});
                if (got != expect) {
                    out.require(false, tag + " footprint at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                    i = H;
                    break;
                }
            }

        for (std::size_t T : {17u, 32u, 33u}) {
            const std::size_t F = 16;
            const auto grid = decoder::PatchGrid::for_mel(F, T, P);
            const auto padded = decoder::reflect_pad(randn({F, T}, 60 + T), grid.F_pad, grid.T_pad);
            const auto y = p(ops::reshape(padded, {1, grid.F_pad, grid.T_pad}));
            const bool ok = y.dim(1) == grid.F_pad / P && y.dim(2) == grid.T_pad / P && grid.T_pad >= T &&
                            grid.T_pad % P == 0 && grid.F_pad % P == 0;
            out.require(ok, tag + " T=" + std::to_string(T) + " shape " + std::to_string(y.dim(1)) + "x" +
                                std::to_string(y.dim(2)));
        }
    }
    out.note("P in {1,2,4}: kernel 2P-1, stride P, 2D footprint, shapes for T in {17,32,33}");
    return out;
}

// ---- 6 ----------------------------------------------------------------------

Outcome vq() {
    Outcome out;
    ParamStore store;
    Rng rng(61);
    styles::Codebook cb(store, rng, "cb", 32, 48);
    const auto h = randn({20, 48}, 62);
    const auto q = cb.quantize(h);
    bool rows = true;
    for (std::size_t r = 0; r < 20; ++r)
        for (std::size_t j = 0; j < 48; ++j) rows = rows && q.h_q.at({r, j}) == cb.embedding().at({q.codes[r], j});
    out.require(rows, "outputs are not exact codebook rows");
    const auto qq = cb.quantize(q.h_q.detach());
    out.require(bit_equal(qq.h_q, q.h_q) && qq.codes == q.codes, "quantization is not idempotent");
    out.require(qq.loss.item() == 0.0, "loss on exact hits is " + num(qq.loss.item()));
    out.require(q.loss.item() > 0.0, "loss off-codebook is zero");

    const auto w = randn({20, 48}, 63);
    auto downstream = [&](const Tensor& y) { return ops::sum(ops::mul(ops::square(y), w)); };
    const auto leaf = h.clone_leaf(true);
    backward(downstream(cb.quantize(leaf).h_q));
    const auto y = q.h_q.detach().clone_leaf(true);
    backward(downstream(y));
    double st = 0.0;
    for (std::size_t i = 0; i < leaf.size(); ++i) st = std::max(st, std::abs(leaf.grad()[i] - y.grad()[i]));
    out.require(st <= 1e-10, "straight-through gradient off by " + num(st));

    std::size_t exact_zero = 0, near_positive = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng pick(64 + s);
        std::vector<std::size_t> idx(5);
        for (auto& i : idx) i = pick.uniform_int(0, 31);
        auto hits = ops::index_select(cb.embedding(), 0, idx).detach();
        if (cb.quantize(hits).loss.item() == 0.0) ++exact_zero;
        hits.mutable_data()[pick.uniform_int(0, hits.size() - 1)] += 1e-9;
        if (cb.quantize(hits).loss.item() > 0.0) ++near_positive;
    }
    out.require(exact_zero == 50, "zero loss on " + std::to_string(exact_zero) + "/50 exact hits");
    out.require(near_positive == 50, "positive loss on " + std::to_string(near_positive) + "/50 near misses");
    out.note("straight-through max diff " + num(st) + "; L_vq zero on 50/50 hits, positive on " +
             std::to_string(near_positive) + "/50 perturbed");
    return out;
}

// ---- 7 / 9 / 10 shared toy run ----------------------------------------------

struct ToyRun {
    pipeline::ModelConfig cfg;
    pipeline::ToyCorpus corpus;
    pipeline::Checkpoint trained;
    std::string checkpoint_bytes;
    std::string loss_csv;
    double train_seconds = 0.0;
};

std::string checkpoint_bytes(const pipeline::Checkpoint& c) {
    std::ostringstream os;
    pipeline::write_checkpoint(os, c);
    return os.str();
}

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / ("dex_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

ToyRun& toy_run() {
    static std::unique_ptr<ToyRun> run;
    if (run) return *run;
    run = std::make_unique<ToyRun>();
    run->cfg = pipeline::profile_config("toy");
    run->corpus = pipeline::synth_corpus(pipeline::CorpusOptions::from_config(run->cfg, 7));
    run->trained = pipeline::init_checkpoint(run->cfg);
    run->loss_csv = (scratch_dir() / "loss.csv").string();
    const auto t0 = std::chrono::steady_clock::now();
    pipeline::train(run->trained, run->corpus, {.loss_csv = run->loss_csv});
    run->train_seconds = seconds_since(t0);
    run->checkpoint_bytes = checkpoint_bytes(run->trained);
    return *run;
}

pipeline::SynthesisRequest own_reference_request(const pipeline::Model& model, const pipeline::Utterance& u,
                                                 std::uint64_t seed) {
    pipeline::SynthesisRequest r;
    r.phonemes = u.phonemes;
    r.reference = pipeline::Reference{u.mel, u.log_f0};
    r.nfe = 50;
    r.seed = seed;
    r.durations = model.alignment(u);
    return r;
}

std::vector<double> csv_totals(const std::string& path) {
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    std::vector<double> totals;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        totals.push_back(std::stod(line.substr(line.rfind(',') + 1)));
    }
    return totals;
}

Outcome overfit_toy() {
    Outcome out;
    auto& run = toy_run();
    const auto& cfg = run.cfg;
    pipeline::Model untrained(cfg);
    const auto& model = *run.trained.model;
    const std::size_t params = model.store().trainable_scalar_count();

    double p0 = 0.0, p1 = 0.0;
    for (const auto& u : run.corpus.utterances) {
        NoGradGuard guard;
        p0 += align::prior_loss(untrained.prior_mel(u), u.mel.values).item();
        p1 += align::prior_loss(model.prior_mel(u), u.mel.values).item();
    }
    const double prior_ratio = p1 / p0;
    out.require(prior_ratio <= 0.1, "(a) L_prior ratio " + num(prior_ratio));

    double m_trained = 0.0, m_untrained = 0.0;
    for (std::size_t k = 0; k < run.corpus.utterances.size(); ++k) {
        const auto& u = run.corpus.utterances[k];
        m_trained += mse(model.synthesize(own_reference_request(model, u, k)).values, u.mel.values);
        m_untrained += mse(untrained.synthesize(own_reference_request(untrained, u, k)).values, u.mel.values);
    }
    const double mse_ratio = m_untrained / m_trained;
    out.require(mse_ratio >= 5.0, "(b) MSE improvement " + num(mse_ratio) + "x");

    const auto totals = csv_totals(run.loss_csv);
    const std::size_t q = totals.size() / 4;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < q; ++i) first += totals[i], last += totals[totals.size() - 1 - i];
    first /= double(std::max<std::size_t>(q, 1));
    last /= double(std::max<std::size_t>(q, 1));
    out.require(totals.size() == cfg.epochs && q > 0, "loss CSV has " + std::to_string(totals.size()) + " rows");
    out.require(last < first, "(c) quartile means " + num(first) + " -> " + num(last));

    const std::size_t steps = run.trained.adam.step;
    out.require(steps <= 300, std::to_string(steps) + " optimizer steps");
    out.require(run.corpus.utterances.size() == 8, "corpus size");
    out.require(run.train_seconds < 600.0, "training took " + num(run.train_seconds) + " s");
    out.note(std::to_string(params) + " params, " + std::to_string(steps) + " steps, " + num(run.train_seconds, 3) +
             " s; (a) L_prior " + num(p0 / 8) + " -> " + num(p1 / 8) + " ratio " + num(prior_ratio) +
             "; (b) MSE " + num(m_untrained / 8) + " -> " + num(m_trained / 8) + " = " + num(mse_ratio, 3) +
             "x; (c) quartile total " + num(first) + " -> " + num(last));
    return out;
}

// ---- 8 ----------------------------------------------------------------------

Outcome gedex_contract() {
    Outcome out;
    auto cfg = pipeline::profile_config("toy-gedex");
    const auto corpus = pipeline::synth_corpus(pipeline::CorpusOptions::from_config(cfg, 7));
    cfg.epochs = 3;
    auto ck = pipeline::init_checkpoint(cfg);
    pipeline::train(ck, corpus);
    const auto& model = *ck.model;
    pipeline::SynthesisRequest req;
    req.phonemes = corpus.utterances[0].phonemes;
    req.nfe = 10;
    req.seed = 5;
    req.ignore_reference = true;
    req.reference = pipeline::Reference{corpus.utterances[1].mel, corpus.utterances[1].log_f0};
    const auto a = model.synthesize(req).values;
    req.reference = pipeline::Reference{corpus.utterances[5].mel, corpus.utterances[5].log_f0};
    const auto b = model.synthesize(req).values;
    out.require(bit_equal(a, b), "outputs differ by " + num(max_abs_diff(a, b)));
    out.require(model.style_encoder() == nullptr, "gedex model carries a style encoder");
    out.note("two references, " + std::to_string(a.dim(1)) + " frames, max diff " + num(max_abs_diff(a, b)));
    return out;
}

// ---- 9 ----------------------------------------------------------------------

Outcome nfe_sweep() {
    Outcome out;
    auto& run = toy_run();
    const std::vector<std::size_t> nfes{10, 25, 50};
    const std::size_t repeat = 3;
    const auto rows = cli::run_sweep(*run.trained.model, run.corpus.utterances[0], nfes, repeat, 11);
    std::vector<double> rtf(nfes.size(), 0.0), err(nfes.size(), 0.0);
    for (const auto& r : rows) {
        const auto k = std::size_t(std::find(nfes.begin(), nfes.end(), r.nfe) - nfes.begin());
        rtf[k] += r.rtf / double(repeat);
        err[k] += r.mse / double(repeat);
    }
    out.require(rows.size() == nfes.size() * repeat, "sweep rows " + std::to_string(rows.size()));
    out.require(rtf[0] < rtf[1] && rtf[1] < rtf[2], "RTF not strictly increasing");
    for (std::size_t k = 0; k < nfes.size(); ++k)
        out.note("nfe " + std::to_string(nfes[k]) + " RTF " + num(rtf[k]) + " MSE " + num(err[k]));
    return out;
}

// ---- 10 ---------------------------------------------------------------------

Outcome determinism() {
    Outcome out;
    auto& run = toy_run();
    auto second = pipeline::init_checkpoint(run.cfg);
    pipeline::train(second, run.corpus);
    const auto bytes = checkpoint_bytes(second);
    out.require(bytes == run.checkpoint_bytes, "second run checkpoint differs");

    const auto path = (scratch_dir() / "toy.ckpt").string();
    pipeline::save_checkpoint(path, run.trained);
    const auto loaded = pipeline::load_checkpoint(path);
    out.require(checkpoint_bytes(loaded) == run.checkpoint_bytes, "reloaded checkpoint re-serializes differently");
    const auto& u = run.corpus.utterances[2];
    Rng r1(21), r2(21);
    const auto a = pipeline::LossValues::of(run.trained.model->losses(u, r1));
    const auto b = pipeline::LossValues::of(loaded.model->losses(u, r2));
    out.require(a.total == b.total && a.dur == b.dur && a.prior == b.prior && a.diff == b.diff && a.vq == b.vq,
                "training forward differs after reload");
    const auto req = own_reference_request(*run.trained.model, u, 13);
    const auto y1 = run.trained.model->synthesize(req).values;
    const auto y2 = loaded.model->synthesize(req).values;
    out.require(bit_equal(y1, y2), "synthesis differs after reload by " + num(max_abs_diff(y1, y2)));
    out.note(std::to_string(bytes.size()) + " checkpoint bytes identical across runs; reload forward bit-identical");
    return out;
}

// ---- 11 ---------------------------------------------------------------------

Outcome embedding_ablation() {
    Outcome out;
    auto& run = toy_run();
    cli::AblationOptions opts;
    opts.threads = cli::worker_threads();
    const auto rows = cli::run_ablation(run.cfg, run.corpus, opts);
    std::set<decoder::EmbedKind> seen;
    for (const auto& r : rows) {
        if (!r.overlap) continue;
        seen.insert(r.kind);
        out.require(std::isfinite(r.final_loss), decoder::to_string(r.kind) + " loss not finite");
        out.require(r.long_frames > run.cfg.max_frames, "long input not beyond trained extent");
        if (r.kind == decoder::EmbedKind::time_freq)
            out.require(r.long_result == "extent error", "time-freq on long input: " + r.long_result);
        if (r.kind == decoder::EmbedKind::conv_freq)
            out.require(r.long_result == "ok", "conv-freq on long input: " + r.long_result);
        out.note(decoder::to_string(r.kind) + " loss " + num(r.final_loss) + " mse " + num(r.sample_mse) + " " +
                 std::to_string(r.long_frames) + "f " + r.long_result);
    }
    out.require(seen.size() == 4, std::to_string(seen.size()) + " kinds ran");
    return out;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"1  gradient suite", gradient_suite},
        {"2  MAS oracle", mas_oracle},
        {"3  EDM identities", edm_identities},
        {"4  adapter postconditions", adapter_postconditions},
        {"5  patchify", patchify},
        {"6  VQ", vq},
        {"7  overfit toy", overfit_toy},
        {"8  GeDEX contract", gedex_contract},
        {"9  NFE sweep", nfe_sweep},
        {"10 determinism and persistence", determinism},
        {"11 embedding ablation", embedding_ablation},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        if (!o.pass) ++failures;
        std::printf("%s  %-32s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::error_code ec;
    std::filesystem::remove_all(std::filesystem::temp_directory_path() / ("dex_acceptance_" + std::to_string(::getpid())),
                                ec);
    std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
