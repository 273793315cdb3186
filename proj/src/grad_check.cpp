#include "dex/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dex/errors.hpp"
#include "dex/ops.hpp"
#include "dex/rng.hpp"

namespace dex {

namespace {

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

double finite_or_throw(double v) {
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, std::uint64_t seed) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    Tensor leaf = x.clone_leaf(true);
    Tensor probe;
    auto project = [&](const Tensor& y) {
        if (!probe.defined()) {
            Rng rng(seed);
            std::vector<double> r(y.size());
            for (auto& v : r) v = rng.normal();
            probe = Tensor(y.shape(), std::move(r));
        }
        return ops::sum(ops::mul(y, probe));
    };
    Tensor loss = project(f(leaf));
    backward(loss);
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    double worst = 0.0;
    NoGradGuard no_grad;
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double up = finite_or_throw(project(f(leaf)).item());
        data[i] = orig - h;
        const double down = finite_or_throw(project(f(leaf)).item());
        data[i] = orig;
        worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

std::vector<ParamGradReport> grad_check_leaves(const std::function<Tensor()>& loss,
                                               const std::vector<std::pair<std::string, Tensor>>& leaves,
                                               double h, std::size_t max_coords) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    for (auto [name, t] : leaves) t.zero_grad();
    backward(loss());
    std::vector<ParamGradReport> reports;
    NoGradGuard no_grad;
    for (auto [name, t] : leaves) {
        ParamGradReport rep{name, 0, 0.0};
        std::vector<double> analytic(t.size(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        auto data = t.mutable_data();
        const std::size_t n = data.size();
        const std::size_t step = n <= max_coords ? 1 : (n + max_coords - 1) / max_coords;
        for (std::size_t i = 0; i < n; i += step) {
            const double orig = data[i];
            data[i] = orig + h;
            const double up = finite_or_throw(loss().item());
            data[i] = orig - h;
            const double down = finite_or_throw(loss().item());
            data[i] = orig;
            rep.max_rel_error = std::max(rep.max_rel_error, rel_error(analytic[i], (up - down) / (2.0 * h)));
            ++rep.coords_checked;
        }
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace dex
