#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dex/adapters.hpp"
#include "dex/errors.hpp"
#include "dex/grad_check.hpp"
#include "test_util.hpp"

using namespace dex;
using namespace dex::testing;
using adapters::AdaLN;
using adapters::TivAdapter;
using adapters::TvAdapter;

namespace {

std::vector<double> channel_stats(const Tensor& y, std::size_t c, double& mean_out) {
    const std::size_t n = y.size() / y.dim(0);
    const auto d = y.data().subspan(c * n, n);
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
    double var = 0.0;
    for (double v : d) var += (v - m) * (v - m);
    mean_out = m;
    return {m, std::sqrt(var / double(n))};
}

}  // namespace

TEST(AttentionPool, IdenticalRowsGiveThatRow) {
    const auto row = randn({1, 5}, 1);
    const auto rows = ops::concat({row, row, row, row}, 0);
    const auto out = adapters::attention_pool(rows, randn({5, 1}, 2));
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.data()[c], row.data()[c], 1e-15);
}

TEST(AttentionPool, SaturatedScoreSelectsRow) {
    // w_ap = e_0, so the score of a row is its first entry.
    auto rows = randn({3, 4}, 3);
    rows.mutable_data()[1 * 4 + 0] = 1000.0;
    rows.mutable_data()[0] = 0.0;
    rows.mutable_data()[2 * 4] = 0.0;
    Tensor w({4, 1}, {1, 0, 0, 0});
    const auto out = adapters::attention_pool(rows, w);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[c], rows.at({1, c}), 1e-9);
}

TEST(AttentionPool, MatchesSoftmaxWeightedSum) {
    const auto rows = randn({3, 6}, 4);
    const auto w = randn({6, 1}, 5);
    const auto out = adapters::attention_pool(rows, w);
    std::vector<double> s(3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 6; ++c) s[r] += rows.at({r, c}) * w.at({c, 0});
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t c = 0; c < 6; ++c) {
        double expect = 0.0;
        for (std::size_t r = 0; r < 3; ++r) expect += s[r] / z * rows.at({r, c});
        EXPECT_NEAR(out.data()[c], expect, 1e-12);
    }
}

TEST(AttentionPool, OutputInConvexHull) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto rows = randn({4, 3}, 100 + seed, 3.0);
        const auto out = adapters::attention_pool(rows, randn({3, 1}, 200 + seed, 4.0));
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t r = 0; r < 4; ++r) {
                lo = std::min(lo, rows.at({r, c}));
                hi = std::max(hi, rows.at({r, c}));
            }
            EXPECT_GE(out.data()[c], lo - 1e-12);
            EXPECT_LE(out.data()[c], hi + 1e-12);
        }
    }
}

TEST(AdaIN, IdentityStatisticsGiveInstanceNorm) {
    const auto h = randn({3, 4, 6}, 6);
    const auto out = adapters::adain(h, Tensor::zeros({3}), Tensor::full({3}, 1.0));
    EXPECT_LE(max_abs_diff(out, ops::instance_norm(h)), 0.0);
}

TEST(AdaIN, OutputStatisticsEqualPooledStatistics) {
    const auto h = randn({4, 5, 7}, 7, 5.0);
    const Tensor mu = Tensor::vector({0.3, -1.2, 2.0, 0.0});
    const Tensor sigma = Tensor::vector({0.5, 1.7, 0.05, 2.0});
    const auto y = adapters::adain(h, mu, sigma);
    for (std::size_t c = 0; c < 4; ++c) {
        double m = 0.0;
        const auto st = channel_stats(y, c, m);
        EXPECT_NEAR(st[0], mu.data()[c], 1e-6);
        EXPECT_NEAR(st[1], sigma.data()[c], 1e-6);
    }
}

TEST(TivAdapter, PooledStatisticsAreLiveAndPositive) {
    ParamStore store;
    Rng rng(8);
    TivAdapter a(store, rng, "tiv", 6, 10);
    const auto h_inv = randn({3, 6, 9}, 9);
    const auto s1 = a.pool(h_inv, randn({10}, 10));
    const auto s2 = a.pool(h_inv, randn({10}, 11));
    for (double v : s1.sigma.data()) EXPECT_GT(v, 0.0);
    EXPECT_GT(max_abs_diff(s1.mu, s2.mu) + max_abs_diff(s1.sigma, s2.sigma), 1e-8);
}

TEST(TivAdapter, OutputMatchesAdaINOfPooledStats) {
    ParamStore store;
    Rng rng(12);
    TivAdapter a(store, rng, "tiv", 4, 8);
    const auto h = randn({4, 3, 5}, 13, 4.0);
    const auto h_inv = randn({2, 4, 6}, 14);
    const auto t = randn({8}, 15);
    const auto out = a(h, h_inv, t);
    const auto st = a.pool(h_inv, t);
    for (std::size_t c = 0; c < 4; ++c) {
        double m = 0.0;
        const auto s = channel_stats(out, c, m);
        EXPECT_NEAR(s[0], st.mu.data()[c], 1e-6);
        EXPECT_NEAR(s[1], st.sigma.data()[c], 1e-6);
    }
}

TEST(TivAdapter, LayerStatisticsOracle) {
    const auto h = randn({2, 3, 5}, 16);
    const auto [m, s] = adapters::layer_statistics(h);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0, var = 0.0;
            for (std::size_t t = 0; t < 5; ++t) mean += h.at({l, c, t}) / 5.0;
            for (std::size_t t = 0; t < 5; ++t) var += std::pow(h.at({l, c, t}) - mean, 2) / 5.0;
            EXPECT_NEAR(m.at({l, c}), mean, 1e-12);
            EXPECT_NEAR(s.at({l, c}), std::sqrt(var + ops::kNormEps), 1e-12);
        }
}

TEST(AdaLN, UnitGainZeroBiasIsLayerNorm) {
    ParamStore store;
    const auto ln = AdaLN::from(nn::Linear::create_constant(store, "g", 3, 5, 1.0),
                                nn::Linear::create_constant(store, "b", 3, 5, 0.0));
    const auto h = randn({4, 5}, 17);
    EXPECT_LE(max_abs_diff(ln(h, randn({3}, 18)), ops::layer_norm(h, 1)), 0.0);
}

TEST(AdaLN, ZeroGainGivesBiasIndependentOfInput) {
    ParamStore store;
    Rng rng(19);
    auto bias = nn::Linear::create(store, rng, "b", 3, 5);
    const auto ln = AdaLN::from(nn::Linear::create_constant(store, "g", 3, 5, 0.0), bias);
    const auto cond = randn({3}, 20);
    const auto b = bias.apply_vec(cond);
    const auto y1 = ln(randn({4, 5}, 21), cond);
    const auto y2 = ln(randn({4, 5}, 22, 9.0), cond);
    EXPECT_TRUE(bit_equal(y1, y2));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y1.at({r, c}), b.data()[c]);
}

TEST(AdaLN, MatchesCompositionOracle) {
    ParamStore store;
    Rng rng(23);
    AdaLN ln(store, rng, "ada", 4, 6);
    const auto h = randn({3, 6}, 24);
    const auto cond = randn({4}, 25);
    const auto y = ln(h, cond);
    const auto g = ln.gain().apply_vec(cond);
    const auto b = ln.bias().apply_vec(cond);
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 6; ++c) m += h.at({r, c}) / 6.0;
        for (std::size_t c = 0; c < 6; ++c) v += std::pow(h.at({r, c}) - m, 2) / 6.0;
        for (std::size_t c = 0; c < 6; ++c) {
            const double expect = (h.at({r, c}) - m) / std::sqrt(v + ops::kNormEps) * g.data()[c] + b.data()[c];
            EXPECT_NEAR(y.at({r, c}), expect, 1e-12);
        }
    }
}

TEST(TvAdapter, SingleStyleRowGivesRankOneOffset) {
    ParamStore store;
    Rng rng(26);
    TvAdapter a(store, rng, "tv", 4, 3);
    const auto h = randn({4, 2, 5}, 27);
    Tensor attn;
    const auto y = a(h, randn({1, 3}, 28), &attn);
    for (double w : attn.data()) EXPECT_EQ(w, 1.0);
    const auto off = ops::sub(y, h);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t q = 1; q < 10; ++q) EXPECT_NEAR(off.data()[c * 10 + q], off.data()[c * 10], 1e-12);
}

TEST(TvAdapter, AttentionRowsSumToOne) {
    ParamStore store;
    Rng rng(29);
    TvAdapter a(store, rng, "tv", 5, 4);
    Tensor attn;
    a(randn({5, 3, 4}, 30, 3.0), randn({7, 4}, 31, 3.0), &attn);
    ASSERT_EQ(attn.shape(), (Shape{12, 7}));
    for (std::size_t q = 0; q < 12; ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < 7; ++k) s += attn.at({q, k});
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(TvAdapter, TimePermutationEquivariantAndKeyOrderInvariant) {
    ParamStore store;
    Rng rng(32);
    TvAdapter a(store, rng, "tv", 3, 4);
    const std::size_t C = 3, F = 2, T = 6;
    const auto h = randn({C, F, T}, 33);
    const auto s = randn({5, 4}, 34);
    const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
    const auto y = a(h, s);
    const auto y_perm = a(ops::index_select(h, 2, perm), s);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t t = 0; t < T; ++t) EXPECT_NEAR(y_perm.at({c, f, t}), y.at({c, f, perm[t]}), 1e-10);
    const auto y_keys = a(h, ops::index_select(s, 0, {3, 0, 4, 1, 2}));
    EXPECT_LE(max_abs_diff(y, y_keys), 1e-10);
}

TEST(TvAdapter, OptionalScalingAndResidual) {
    ParamStore store;
    Rng rng(35);
    TvAdapter plain(store, rng, "a", 3, 2, {.scale_logits = false, .residual = false});
    const auto h = randn({3, 2, 2}, 36);
    const auto s = randn({3, 2}, 37);
    ParamStore store2;
    Rng rng2(35);
    TvAdapter residual(store2, rng2, "a", 3, 2);
    EXPECT_LE(max_abs_diff(ops::add(h, plain(h, s)), residual(h, s)), 1e-14);
    ParamStore store3;
    Rng rng3(35);
    TvAdapter scaled(store3, rng3, "a", 3, 2, {.scale_logits = true, .residual = false});
    EXPECT_GT(max_abs_diff(plain(h, s), scaled(h, s)), 1e-9);
}

TEST(AdapterGradients, EndToEndFiniteDifference) {
    ParamStore store;
    Rng rng(38);
    TivAdapter tiv(store, rng, "tiv", 3, 4);
    TvAdapter tv(store, rng, "tv", 3, 2);
    AdaLN ln(store, rng, "ln", 2, 3);
    const auto h_inv = randn({2, 3, 5}, 39);
    const auto t = randn({4}, 40);
    const auto hv = randn({4, 2}, 41);
    const auto h = randn({3, 2, 3}, 42);
    EXPECT_LE(grad_check([&](const Tensor& x) { return tiv(x, h_inv, t); }, h), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& x) { return tiv(h, x, t); }, h_inv), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& x) { return tv(x, hv); }, h), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& x) { return tv(h, x); }, hv), 1e-4);
    const auto cond = randn({2}, 45);
    EXPECT_LE(grad_check([&](const Tensor& x) { return ln(x, cond); }, randn({4, 3}, 44)), 1e-4);
    EXPECT_LE(grad_check([&](const Tensor& x) { return ln(randn({4, 3}, 44), x); }, cond), 1e-4);
    const auto rows = randn({4, 3}, 46);
    auto loss = [&] {
        auto y = tv(tiv(h, h_inv, t), hv);
        return ops::add(ops::sum(ops::square(y)), ops::sum(ops::square(ln(rows, cond))));
    };
    for (const auto& r : grad_check_leaves(loss, named_trainable(store))) EXPECT_LE(r.max_rel_error, 1e-4) << r.name;
}
