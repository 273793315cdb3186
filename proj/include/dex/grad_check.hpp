#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dex/tensor.hpp"

namespace dex {

/// Compares reverse-mode gradients of `f` at `x` against central differences
/// with step `h`. Tensor-valued outputs are reduced with a fixed seeded
/// projection so the whole Jacobian is exercised. Returns
/// max |analytic - numeric| / max(1, |numeric|) over the coordinates of `x`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5,
                  std::uint64_t seed = 17);

struct ParamGradReport {
    std::string name;
    std::size_t coords_checked = 0;
    double max_rel_error = 0.0;
};

/// Same comparison for a scalar loss over leaves perturbed in place. At most
/// `max_coords` coordinates per tensor are probed (evenly strided).
std::vector<ParamGradReport> grad_check_leaves(const std::function<Tensor()>& loss,
                                               const std::vector<std::pair<std::string, Tensor>>& leaves,
                                               double h = 1e-5,
                                               std::size_t max_coords = std::numeric_limits<std::size_t>::max());

}  // namespace dex
