#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "dex/ops.hpp"
#include "dex/param_store.hpp"
#include "dex/rng.hpp"

namespace dex::nn {

/// Uniform(-bound, bound) initial values.
Tensor uniform_init(Shape shape, double bound, Rng& rng);

/// Row-wise affine map: x [N x in] -> [N x out].
struct Linear {
    Tensor weight;               // [in x out]
    std::optional<Tensor> bias;  // [out]

    static Linear create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                         bool with_bias = true, double init_scale = 1.0);
    /// Zero weight; bias filled with `bias_value`.
    static Linear create_constant(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                                  double bias_value = 0.0);

    Tensor operator()(const Tensor& x) const;
    /// For a rank-1 input [in] returns [out].
    Tensor apply_vec(const Tensor& v) const;
};

/// Same-padded 1-D convolution over [C x T].
struct Conv1d {
    Tensor weight;  // [out x in x k]
    Tensor bias;    // [out]
    std::size_t pad = 0;

    static Conv1d create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t kernel);
    Tensor operator()(const Tensor& x) const;
};

struct Conv2d {
    Tensor weight;  // [out x in x kh x kw]
    Tensor bias;    // [out]
    ops::Conv2dOptions options;

    static Conv2d create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t kernel, std::size_t stride, std::size_t pad);
    Tensor operator()(const Tensor& x) const;
};

struct ConvTranspose2d {
    Tensor weight;  // [in x out x kh x kw]
    Tensor bias;    // [out]
    ops::ConvTranspose2dOptions options;

    static ConvTranspose2d create(ParamStore& store, Rng& rng, const std::string& name, std::size_t in,
                                  std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                                  std::size_t out_pad);
    Tensor operator()(const Tensor& x) const;
};

/// Layer norm with learned gain/shift. Normalizes `axis`; gain and shift are
/// broadcast along the others.
struct AffineLayerNorm {
    Tensor gain;   // [C]
    Tensor shift;  // [C]

    static AffineLayerNorm create(ParamStore& store, const std::string& name, std::size_t channels);
    /// x [N x C]: per row.
    Tensor rows(const Tensor& x) const;
    /// x [C x T]: per column.
    Tensor channels_first(const Tensor& x) const;
};

}  // namespace dex::nn
