#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "rwf/numerics/matrix.hpp"

namespace rwf {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Matrix first;
    Matrix second;

    static AdamMoments zeros_like(const Matrix& param) {
        return {Matrix(param.rows(), param.cols()), Matrix(param.rows(), param.cols())};
    }
};

// One bias-corrected Adam update. `step` is the 1-based index of this update.
inline void adam_step(Matrix& param, const Matrix& grad, AdamMoments& moments, std::uint64_t step,
                      const AdamConfig& cfg) {
    if (grad.rows() != param.rows() || grad.cols() != param.cols() || moments.first.rows() != param.rows() ||
        moments.first.cols() != param.cols() || moments.second.rows() != param.rows() ||
        moments.second.cols() != param.cols()) {
        throw std::invalid_argument("adam_step: shape mismatch");
    }
    if (step == 0) throw std::invalid_argument("adam_step: step is 1-based");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    auto p = param.data();
    auto g = grad.data();
    auto m = moments.first.data();
    auto v = moments.second.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
    require_finite(param, "adam_step");
}

}  // namespace rwf
