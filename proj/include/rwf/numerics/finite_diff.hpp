#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rwf/numerics/matrix.hpp"

namespace rwf {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences, one coordinate at a time. Reference oracle for every
// analytic gradient in the project.
inline std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
    std::vector<double> point(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + eps;
        const double up = f(point);
        point[i] = orig - eps;
        const double down = f(point);
        point[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_diff_grad: non-finite function value");
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

}  // namespace rwf
