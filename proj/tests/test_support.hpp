#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rwf/numerics/matrix.hpp"

namespace rwf::test {

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

inline Matrix naive_transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// Softmax written without max subtraction; only for moderate inputs.
inline Matrix naive_softmax(const Matrix& s, double scale) {
    Matrix out(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) z += std::exp(scale * s(i, j));
        for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) = std::exp(scale * s(i, j)) / z;
    }
    return out;
}

inline Matrix naive_layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= n;
        for (std::size_t j = 0; j < x.cols(); ++j)
            out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * gain(0, j) + bias(0, j);
    }
    return out;
}

// Golden files live in tests/golden. Set RWF_UPDATE_GOLDEN=1 to (re)record.
inline void expect_golden(const std::string& name, const Matrix& actual, double tol = 1e-12) {
    const std::filesystem::path path = std::filesystem::path(RWF_GOLDEN_DIR) / (name + ".json");
    const char* update = std::getenv("RWF_UPDATE_GOLDEN");
    if (update && std::string(update) == "1") {
        nlohmann::json j;
        j["rows"] = actual.rows();
        j["cols"] = actual.cols();
        j["data"] = std::vector<double>(actual.data().begin(), actual.data().end());
        std::ofstream(path) << j.dump(1) << '\n';
        return;
    }
    std::ifstream in(path);
    ASSERT_TRUE(in.good()) << "missing golden file " << path;
    const auto j = nlohmann::json::parse(in);
    ASSERT_EQ(j.at("rows").get<std::size_t>(), actual.rows());
    ASSERT_EQ(j.at("cols").get<std::size_t>(), actual.cols());
    const auto data = j.at("data").get<std::vector<double>>();
    for (std::size_t i = 0; i < data.size(); ++i)
        EXPECT_NEAR(actual.data()[i], data[i], tol * std::max(1.0, std::abs(data[i]))) << name << " entry " << i;
}

inline void expect_golden_text(const std::string& name, const std::string& actual) {
    const std::filesystem::path path = std::filesystem::path(RWF_GOLDEN_DIR) / name;
    const char* update = std::getenv("RWF_UPDATE_GOLDEN");
    if (update && std::string(update) == "1") {
        std::ofstream(path) << actual << '\n';
        return;
    }
    std::ifstream in(path);
    ASSERT_TRUE(in.good()) << "missing golden file " << path;
    std::string expected;
    std::getline(in, expected);
    EXPECT_EQ(actual, expected) << name;
}

}  // namespace rwf::test
