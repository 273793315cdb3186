#include "dex/layers.hpp"

#include <cmath>

#include "dex/errors.hpp"

namespace dex::nn {

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    return Tensor(std::move(shape), std::move(v));
}

Linear Linear::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                      bool with_bias, double init_scale) {
    const double bound = init_scale / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = store.add(name + ".weight", uniform_init({in, out}, bound, rng));
    if (with_bias) l.bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
    return l;
}

Linear Linear::create_constant(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                               double bias_value) {
    Linear l;
    l.weight = store.add(name + ".weight", Tensor::zeros({in, out}));
    l.bias = store.add(name + ".bias", Tensor::full({out}, bias_value));
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    auto y = ops::matmul(x, weight);
    return bias ? ops::add_b(y, *bias) : y;
}

Tensor Linear::apply_vec(const Tensor& v) const {
    if (v.rank() != 1) throw DimensionError("Linear::apply_vec expects a vector");
    auto y = (*this)(ops::reshape(v, {1, v.size()}));
    return ops::reshape(y, {y.size()});
}

Conv1d Conv1d::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    Conv1d c;
    c.weight = store.add(name + ".weight", uniform_init({out, in, kernel}, bound, rng));
    c.bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
    c.pad = kernel / 2;
    return c;
}

Tensor Conv1d::operator()(const Tensor& x) const { return ops::conv1d(x, weight, bias, 1, pad); }

Conv2d Conv2d::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t pad) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    Conv2d c;
    c.weight = store.add(name + ".weight", uniform_init({out, in, kernel, kernel}, bound, rng));
    c.bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
    c.options = ops::Conv2dOptions{stride, stride, pad, pad};
    return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, options); }

ConvTranspose2d ConvTranspose2d::create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in,
                                        std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                                        std::size_t out_pad) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel) / static_cast<double>(stride * stride));
    ConvTranspose2d c;
    c.weight = store.add(name + ".weight", uniform_init({in, out, kernel, kernel}, bound, rng));
    c.bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
    c.options = ops::ConvTranspose2dOptions{stride, stride, pad, pad, out_pad, out_pad};
    return c;
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const { return ops::conv_transpose2d(x, weight, bias, options); }

AffineLayerNorm AffineLayerNorm::create(ParamStore& store, const std::string& name, std::size_t channels) {
    AffineLayerNorm n;
    n.gain = store.add(name + ".gain", Tensor::full({channels}, 1.0));
    n.shift = store.add(name + ".shift", Tensor::zeros({channels}));
    return n;
}

Tensor AffineLayerNorm::rows(const Tensor& x) const {
    auto y = ops::layer_norm(x, x.rank() - 1);
    return ops::add_b(ops::mul_b(y, gain), shift);
}

Tensor AffineLayerNorm::channels_first(const Tensor& x) const {
    if (x.rank() != 2) throw DimensionError("channels_first layer norm expects [C x T]");
    const std::size_t C = x.dim(0);
    auto y = ops::layer_norm(x, 0);
    const auto g = ops::reshape(gain, {C, 1});
    const auto b = ops::reshape(shift, {C, 1});
    return ops::add_b(ops::mul_b(y, g), b);
}

}  // namespace dex::nn
