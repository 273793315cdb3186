#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "dex/tensor.hpp"

/// The fixed differentiable op set. Everything else in the library is a
/// composition of these.
namespace dex::ops {

inline constexpr double kNormEps = 1e-5;

// Elementwise on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

/// Numpy-style expansion: `a` is left-padded with unit extents to the target
/// rank, then every unit extent is repeated. Gradient sums back.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
/// a + broadcast_to(b, a.shape())
Tensor add_b(const Tensor& a, const Tensor& b);
/// a * broadcast_to(b, a.shape())
Tensor mul_b(const Tensor& a, const Tensor& b);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = true);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = true);

// Layout.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Gathers entries `index` along `axis`; repeats allowed, gradient scatter-adds.
Tensor index_select(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& index);

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
};

/// x: [C_in x H x W], w: [C_out x C_in x kh x kw], bias: [C_out]. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Conv2dOptions& opt);

struct ConvTranspose2dOptions {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    std::size_t out_pad_h = 0;
    std::size_t out_pad_w = 0;
};

/// Adjoint of conv2d. x: [C_in x H x W], w: [C_in x C_out x kh x kw].
/// Output extent (H-1)*stride - 2*pad + k + out_pad.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                        const ConvTranspose2dOptions& opt);

/// x: [C_in x T], w: [C_out x C_in x k]; a conv2d with unit height.
Tensor conv1d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t pad);

// Activations.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
/// x * sigmoid(x)
Tensor silu(const Tensor& a);
/// Exact (erf) GeLU.
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);

enum class NormKind { instance, layer, group };

/// Zero-mean, unit-variance standardization with biased variance and `eps`
/// added under the square root. Layouts:
///  - instance: a = [C x spatial...], statistics per channel over all spatial axes
///  - layer:    statistics per position over the single axis `axis`
///  - group:    a = [N x C], per row over each of `groups` contiguous channel groups
Tensor normalize(const Tensor& a, NormKind kind, double eps = kNormEps, std::size_t groups = 1,
                 std::size_t axis = 0);
Tensor instance_norm(const Tensor& a, double eps = kNormEps);
Tensor layer_norm(const Tensor& a, std::size_t axis, double eps = kNormEps);
Tensor group_norm(const Tensor& a, std::size_t groups, double eps = kNormEps);

/// Forward value is `values` bit-for-bit; the gradient flows to `h` as the
/// identity. Shapes must match.
Tensor straight_through(const Tensor& h, const Tensor& values);

/// Mean over all elements of (a - b)^2.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace dex::ops
