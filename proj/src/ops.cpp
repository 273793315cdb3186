#include "dex/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dex/errors.hpp"

namespace dex::ops {

using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// Accumulate into parent k when it tracks gradients.
inline std::vector<double>* grad_of(Node& self, std::size_t k) {
    Node& p = *self.parents[k];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

struct AxisView {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df, const char* name) {
    const auto x = a.data();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result(
        a.shape(), std::move(y), {a},
        [df](Node& self) {
            auto* ga = grad_of(self, 0);
            if (!ga) return;
            const auto& x = self.parents[0]->data;
            for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.data[i]);
        },
        name);
}

// C (MxN) += op(A) * op(B); op(A) is MxK, op(B) is KxN, all row-major.
void gemm(bool ta, bool tb, std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
          double* C) {
    if (!ta && !tb) {
        for (std::size_t i = 0; i < M; ++i) {
            double* c = C + i * N;
            for (std::size_t k = 0; k < K; ++k) {
                const double aik = A[i * K + k];
                if (aik == 0.0) continue;
                const double* b = B + k * N;
                for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < M; ++i) {
            const double* a = A + i * K;
            for (std::size_t j = 0; j < N; ++j) {
                const double* b = B + j * K;
                double acc = 0.0;
                for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
                C[i * N + j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            for (std::size_t i = 0; i < M; ++i) {
                const double aki = A[k * M + i];
                if (aki == 0.0) continue;
                double* c = C + i * N;
                for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < K; ++k) acc += A[k * M + i] * B[j * K + k];
                C[i * N + j] += acc;
            }
        }
    }
}

struct ConvGeom {
    std::size_t C, H, W, kh, kw, sh, sw, ph, pw, Ho, Wo;
};

// cols[(c*kh + i)*kw + j][oh*Wo + ow] = x[c][oh*sh - ph + i][ow*sw - pw + j]
void im2col(const ConvGeom& g, const double* x, double* cols) {
    const std::size_t P = g.Ho * g.Wo;
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                    const auto h = static_cast<std::ptrdiff_t>(oh * g.sh + i) - static_cast<std::ptrdiff_t>(g.ph);
                    for (std::size_t ow = 0; ow < g.Wo; ++ow) {
                        const auto w = static_cast<std::ptrdiff_t>(ow * g.sw + j) - static_cast<std::ptrdiff_t>(g.pw);
                        const bool inside = h >= 0 && w >= 0 && h < static_cast<std::ptrdiff_t>(g.H) &&
                                            w < static_cast<std::ptrdiff_t>(g.W);
                        row[oh * g.Wo + ow] = inside ? x[(c * g.H + h) * g.W + w] : 0.0;
                    }
                }
            }
}

void col2im(const ConvGeom& g, const double* cols, double* x) {
    const std::size_t P = g.Ho * g.Wo;
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                    const auto h = static_cast<std::ptrdiff_t>(oh * g.sh + i) - static_cast<std::ptrdiff_t>(g.ph);
                    if (h < 0 || h >= static_cast<std::ptrdiff_t>(g.H)) continue;
                    for (std::size_t ow = 0; ow < g.Wo; ++ow) {
                        const auto w = static_cast<std::ptrdiff_t>(ow * g.sw + j) - static_cast<std::ptrdiff_t>(g.pw);
                        if (w < 0 || w >= static_cast<std::ptrdiff_t>(g.W)) continue;
                        x[(c * g.H + h) * g.W + w] += row[oh * g.Wo + ow];
                    }
                }
            }
}

// Fiber-wise standardization of a viewed as [outer x n x inner] over n.
Tensor normalize_fibers(const Tensor& a, AxisView v, double eps, const char* name) {
    if (v.n < 1) throw DimensionError(std::string(name) + ": empty reduction");
    const auto x = a.data();
    std::vector<double> y(x.size());
    std::vector<double> inv_std(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.n * v.inner + in;
            double m = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) m += x[base + k * v.inner];
            m /= static_cast<double>(v.n);
            double var = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
                const double d = x[base + k * v.inner] - m;
                var += d * d;
            }
            var /= static_cast<double>(v.n);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * v.inner + in] = is;
            for (std::size_t k = 0; k < v.n; ++k) y[base + k * v.inner] = (x[base + k * v.inner] - m) * is;
        }
    return make_result(
        a.shape(), std::move(y), {a},
        [v, inv_std = std::move(inv_std)](Node& self) {
            auto* ga = grad_of(self, 0);
            if (!ga) return;
            const auto& y = self.data;
            const auto& g = self.grad;
            const double n = static_cast<double>(v.n);
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.n * v.inner + in;
                    double mg = 0.0, mgy = 0.0;
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t idx = base + k * v.inner;
                        mg += g[idx];
                        mgy += g[idx] * y[idx];
                    }
                    mg /= n;
                    mgy /= n;
                    const double is = inv_std[o * v.inner + in];
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t idx = base + k * v.inner;
                        (*ga)[idx] += is * (g[idx] - mg - y[idx] * mgy);
                    }
                }
        },
        name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto x = a.data(), z = b.data();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
    return make_result(
        a.shape(), std::move(y), {a, b},
        [](Node& self) {
            for (std::size_t k = 0; k < 2; ++k)
                if (auto* g = grad_of(self, k))
                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto x = a.data(), z = b.data();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
    return make_result(
        a.shape(), std::move(y), {a, b},
        [](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
            if (auto* g = grad_of(self, 1))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto x = a.data(), z = b.data();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
    return make_result(
        a.shape(), std::move(y), {a, b},
        [](Node& self) {
            const auto& xa = self.parents[0]->data;
            const auto& xb = self.parents[1]->data;
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * xb[i];
            if (auto* g = grad_of(self, 1))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * xa[i];
        },
        "mul");
}

Tensor scale(const Tensor& a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; }, "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    if (a.rank() > shape.size()) throw DimensionError("broadcast_to: source rank exceeds target");
    Shape src(shape.size(), 1);
    std::copy(a.shape().begin(), a.shape().end(), src.begin() + static_cast<std::ptrdiff_t>(shape.size() - a.rank()));
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (src[i] != 1 && src[i] != shape[i]) {
            throw DimensionError("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
        }
    }
    if (src == shape) return a.rank() == shape.size() ? a : reshape(a, shape);
    const auto sst = strides_of(src);
    std::vector<std::size_t> map(numel(shape));
    {
        std::vector<std::size_t> idx(shape.size(), 0);
        for (std::size_t flat = 0; flat < map.size(); ++flat) {
            std::size_t s = 0;
            for (std::size_t d = 0; d < shape.size(); ++d)
                if (src[d] != 1) s += idx[d] * sst[d];
            map[flat] = s;
            for (std::size_t d = shape.size(); d-- > 0;) {
                if (++idx[d] < shape[d]) break;
                idx[d] = 0;
            }
        }
    }
    const auto x = a.data();
    std::vector<double> y(map.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[map[i]];
    return make_result(
        shape, std::move(y), {a},
        [map = std::move(map)](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < map.size(); ++i) (*g)[map[i]] += self.grad[i];
        },
        "broadcast_to");
}

Tensor add_b(const Tensor& a, const Tensor& b) { return add(a, broadcast_to(b, a.shape())); }

Tensor mul_b(const Tensor& a, const Tensor& b) { return mul(a, broadcast_to(b, a.shape())); }

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result(
        {1}, {s}, {a},
        [](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (auto& v : *g) v += self.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto v = axis_view(a.shape(), axis);
    Shape out = a.shape();
    if (keepdim || out.size() == 1) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    const auto x = a.data();
    std::vector<double> y(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.n; ++k)
            for (std::size_t in = 0; in < v.inner; ++in) y[o * v.inner + in] += x[(o * v.n + k) * v.inner + in];
    return make_result(
        out, std::move(y), {a},
        [v](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t o = 0; o < v.outer; ++o)
                    for (std::size_t k = 0; k < v.n; ++k)
                        for (std::size_t in = 0; in < v.inner; ++in)
                            (*g)[(o * v.n + k) * v.inner + in] += self.grad[o * v.inner + in];
        },
        "sum_axis");
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
    return scale(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    for (auto e : shape)
        if (e == 0) throw DimensionError("reshape: zero extent");
    std::vector<double> y(a.data().begin(), a.data().end());
    return make_result(
        std::move(shape), std::move(y), {a},
        [](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        },
        "reshape");
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
    const auto& s = a.shape();
    if (perm.size() != s.size()) throw DimensionError("permute: rank mismatch");
    std::vector<bool> seen(s.size(), false);
    Shape out(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] >= s.size() || seen[perm[i]]) throw DimensionError("permute: invalid permutation");
        seen[perm[i]] = true;
        out[i] = s[perm[i]];
    }
    const auto ist = strides_of(s);
    std::vector<std::size_t> map(a.size());
    std::vector<std::size_t> idx(out.size(), 0);
    for (std::size_t flat = 0; flat < map.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < out.size(); ++d) src += idx[d] * ist[perm[d]];
        map[flat] = src;
        for (std::size_t d = out.size(); d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
    const auto x = a.data();
    std::vector<double> y(map.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[map[i]];
    return make_result(
        out, std::move(y), {a},
        [map = std::move(map)](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < map.size(); ++i) (*g)[map[i]] += self.grad[i];
        },
        "permute");
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
    return permute(a, {1, 0});
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    const auto v = axis_view(a.shape(), axis);
    if (length == 0 || start + length > v.n) throw DimensionError("slice: range out of bounds");
    std::vector<std::size_t> index(length);
    for (std::size_t i = 0; i < length; ++i) index[i] = start + i;
    return index_select(a, axis, index);
}

Tensor index_select(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& index) {
    const auto v = axis_view(a.shape(), axis);
    if (index.empty()) throw DimensionError("index_select: empty index");
    for (auto i : index)
        if (i >= v.n) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
    Shape out = a.shape();
    out[axis] = index.size();
    const auto x = a.data();
    const std::size_t m = index.size();
    std::vector<double> y(v.outer * m * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < m; ++k)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * v.n + index[k]) * v.inner), v.inner,
                        y.begin() + static_cast<std::ptrdiff_t>((o * m + k) * v.inner));
    return make_result(
        out, std::move(y), {a},
        [v, index](Node& self) {
            auto* g = grad_of(self, 0);
            if (!g) return;
            const std::size_t m = index.size();
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t k = 0; k < m; ++k)
                    for (std::size_t in = 0; in < v.inner; ++in)
                        (*g)[(o * v.n + index[k]) * v.inner + in] += self.grad[(o * m + k) * v.inner + in];
        },
        "index_select");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t d = 0; d < ref.size(); ++d)
            if (d != axis && p.shape()[d] != ref[d]) throw DimensionError("concat: extent mismatch off-axis");
        total += p.dim(axis);
    }
    Shape out = ref;
    out[axis] = total;
    const auto v = axis_view(out, axis);
    std::vector<double> y(numel(out));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t n = p.dim(axis);
        const auto x = p.data();
        for (std::size_t o = 0; o < v.outer; ++o)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * n * v.inner), n * v.inner,
                        y.begin() + static_cast<std::ptrdiff_t>((o * v.n + off) * v.inner));
        off += n;
    }
    return make_result(
        out, std::move(y), parts,
        [v, offsets](Node& self) {
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto* g = grad_of(self, k);
                if (!g) continue;
                const std::size_t n = self.parents[k]->data.size() / (v.outer * v.inner);
                for (std::size_t o = 0; o < v.outer; ++o)
                    for (std::size_t i = 0; i < n * v.inner; ++i)
                        (*g)[o * n * v.inner + i] += self.grad[(o * v.n + offsets[k]) * v.inner + i];
            }
        },
        "concat");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    std::vector<double> y(M * N, 0.0);
    gemm(false, false, M, N, K, a.data().data(), b.data().data(), y.data());
    return make_result(
        {M, N}, std::move(y), {a, b},
        [M, K, N](Node& self) {
            const double* A = self.parents[0]->data.data();
            const double* B = self.parents[1]->data.data();
            if (auto* g = grad_of(self, 0)) gemm(false, true, M, K, N, self.grad.data(), B, g->data());
            if (auto* g = grad_of(self, 1)) gemm(true, false, K, N, M, A, self.grad.data(), g->data());
        },
        "matmul");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Conv2dOptions& opt) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw DimensionError("conv2d: expected x [C x H x W] and w [Co x Ci x kh x kw]");
    }
    if (w.dim(1) != x.dim(0)) throw DimensionError("conv2d: channel mismatch");
    if (opt.stride_h == 0 || opt.stride_w == 0) throw DimensionError("conv2d: stride must be positive");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(2), w.dim(3), opt.stride_h, opt.stride_w, opt.pad_h, opt.pad_w, 0, 0};
    if (g.H + 2 * g.ph < g.kh || g.W + 2 * g.pw < g.kw) {
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
    }
    g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
    g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;
    const std::size_t Co = w.dim(0);
    const std::size_t R = g.C * g.kh * g.kw;
    const std::size_t P = g.Ho * g.Wo;
    std::vector<double> cols(R * P);
    im2col(g, x.data().data(), cols.data());
    std::vector<double> y(Co * P, 0.0);
    if (bias) {
        if (bias->size() != Co) throw DimensionError("conv2d: bias length mismatch");
        for (std::size_t c = 0; c < Co; ++c) std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(c * P), P, bias->data()[c]);
    }
    gemm(false, false, Co, P, R, w.data().data(), cols.data(), y.data());
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return make_result(
        {Co, g.Ho, g.Wo}, std::move(y), inputs,
        [g, Co, R, P, cols = std::move(cols)](Node& self) {
            const double* W = self.parents[1]->data.data();
            if (auto* gw = grad_of(self, 1)) gemm(false, true, Co, R, P, self.grad.data(), cols.data(), gw->data());
            if (auto* gx = grad_of(self, 0)) {
                std::vector<double> gcols(R * P, 0.0);
                gemm(true, false, R, P, Co, W, self.grad.data(), gcols.data());
                col2im(g, gcols.data(), gx->data());
            }
            if (self.parents.size() > 2)
                if (auto* gb = grad_of(self, 2))
                    for (std::size_t c = 0; c < Co; ++c)
                        for (std::size_t p = 0; p < P; ++p) (*gb)[c] += self.grad[c * P + p];
        },
        "conv2d");
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                        const ConvTranspose2dOptions& opt) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw DimensionError("conv_transpose2d: expected x [C x H x W] and w [Ci x Co x kh x kw]");
    }
    if (w.dim(0) != x.dim(0)) throw DimensionError("conv_transpose2d: channel mismatch");
    if (opt.out_pad_h >= opt.stride_h || opt.out_pad_w >= opt.stride_w) {
        throw DimensionError("conv_transpose2d: output padding must be smaller than stride");
    }
    const std::size_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const auto full_h = (H - 1) * opt.stride_h + kh + opt.out_pad_h;
    const auto full_w = (W - 1) * opt.stride_w + kw + opt.out_pad_w;
    if (full_h <= 2 * opt.pad_h || full_w <= 2 * opt.pad_w) throw DimensionError("conv_transpose2d: padding too large");
    // Geometry of the output image read as a conv2d input; its im2col grid is H x W.
    ConvGeom g{Co, full_h - 2 * opt.pad_h, full_w - 2 * opt.pad_w, kh, kw, opt.stride_h, opt.stride_w,
               opt.pad_h, opt.pad_w, H, W};
    const std::size_t R = Co * kh * kw;
    const std::size_t P = H * W;
    std::vector<double> cols(R * P, 0.0);
    gemm(true, false, R, P, Ci, w.data().data(), x.data().data(), cols.data());
    std::vector<double> y(Co * g.H * g.W, 0.0);
    col2im(g, cols.data(), y.data());
    if (bias) {
        if (bias->size() != Co) throw DimensionError("conv_transpose2d: bias length mismatch");
        for (std::size_t c = 0; c < Co; ++c)
            for (std::size_t i = 0; i < g.H * g.W; ++i) y[c * g.H * g.W + i] += bias->data()[c];
    }
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return make_result(
        {Co, g.H, g.W}, std::move(y), inputs,
        [g, Ci, Co, R, P](Node& self) {
            std::vector<double> gcols(R * P);
            im2col(g, self.grad.data(), gcols.data());
            const double* X = self.parents[0]->data.data();
            const double* Wt = self.parents[1]->data.data();
            if (auto* gx = grad_of(self, 0)) gemm(false, false, Ci, P, R, Wt, gcols.data(), gx->data());
            if (auto* gw = grad_of(self, 1)) gemm(false, true, Ci, R, P, X, gcols.data(), gw->data());
            if (self.parents.size() > 2)
                if (auto* gb = grad_of(self, 2)) {
                    const std::size_t hw = g.H * g.W;
                    for (std::size_t c = 0; c < Co; ++c)
                        for (std::size_t i = 0; i < hw; ++i) (*gb)[c] += self.grad[c * hw + i];
                }
        },
        "conv_transpose2d");
}

Tensor conv1d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t pad) {
    if (x.rank() != 2 || w.rank() != 3) throw DimensionError("conv1d: expected x [C x T] and w [Co x Ci x k]");
    const auto x3 = reshape(x, {x.dim(0), 1, x.dim(1)});
    const auto w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
    auto y = conv2d(x3, w4, bias, Conv2dOptions{1, stride, 0, pad});
    return reshape(y, {y.dim(0), y.dim(2)});
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
                 "relu");
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); },
        "sigmoid");
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor silu(const Tensor& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        },
        "silu");
}

Tensor gelu(const Tensor& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        },
        "gelu");
}

Tensor softplus(const Tensor& a) {
    return unary(
        a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); }, "softplus");
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sqrt(const Tensor& a) {
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; }, "sqrt");
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    const auto v = axis_view(a.shape(), axis);
    const auto x = a.data();
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.n * v.inner + in;
            double mx = x[base];
            for (std::size_t k = 1; k < v.n; ++k) mx = std::max(mx, x[base + k * v.inner]);
            double s = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
                const double e = std::exp(x[base + k * v.inner] - mx);
                y[base + k * v.inner] = e;
                s += e;
            }
            for (std::size_t k = 0; k < v.n; ++k) y[base + k * v.inner] /= s;
        }
    return make_result(
        a.shape(), std::move(y), {a},
        [v](Node& self) {
            auto* g = grad_of(self, 0);
            if (!g) return;
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.n * v.inner + in;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t i = base + k * v.inner;
                        dot += self.grad[i] * self.data[i];
                    }
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t i = base + k * v.inner;
                        (*g)[i] += self.data[i] * (self.grad[i] - dot);
                    }
                }
        },
        "softmax");
}

Tensor normalize(const Tensor& a, NormKind kind, double eps, std::size_t groups, std::size_t axis) {
    switch (kind) {
        case NormKind::instance: {
            if (a.rank() < 2) throw DimensionError("instance norm needs [C x spatial...]");
            return normalize_fibers(a, AxisView{a.dim(0), a.size() / a.dim(0), 1}, eps, "instance_norm");
        }
        case NormKind::layer:
            return normalize_fibers(a, axis_view(a.shape(), axis), eps, "layer_norm");
        case NormKind::group: {
            if (a.rank() != 2) throw DimensionError("group norm expects [N x C]");
            const std::size_t C = a.dim(1);
            if (groups == 0 || C % groups != 0) throw DimensionError("group norm: channels not divisible by groups");
            return normalize_fibers(a, AxisView{a.dim(0) * groups, C / groups, 1}, eps, "group_norm");
        }
    }
    throw ContractError("unknown NormKind");
}

Tensor instance_norm(const Tensor& a, double eps) { return normalize(a, NormKind::instance, eps); }

Tensor layer_norm(const Tensor& a, std::size_t axis, double eps) { return normalize(a, NormKind::layer, eps, 1, axis); }

Tensor group_norm(const Tensor& a, std::size_t groups, double eps) {
    return normalize(a, NormKind::group, eps, groups);
}

Tensor straight_through(const Tensor& h, const Tensor& values) {
    require_same_shape(h, values, "straight_through");
    std::vector<double> y(values.data().begin(), values.data().end());
    return make_result(
        h.shape(), std::move(y), {h},
        [](Node& self) {
            if (auto* g = grad_of(self, 0))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        },
        "straight_through");
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    return mean(square(sub(a, b)));
}

}  // namespace dex::ops
