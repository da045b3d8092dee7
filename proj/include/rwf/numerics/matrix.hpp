#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwf/errors.hpp"

namespace rwf {

// Dense row-major 2-D array. T is float for bulk storage, double for
// everything that gets verified against an oracle.
template <typename T>
class BasicMatrix {
public:
    using value_type = T;

    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("BasicMatrix: data length " + std::to_string(data_.size()) +
                                        " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }
    BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw std::invalid_argument("BasicMatrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static BasicMatrix identity(std::size_t n) {
        BasicMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    // Views are only handed out from lvalues; a span into a temporary would dangle.
    std::span<T> row(std::size_t r) & noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const& noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const&& = delete;

    std::span<T> data() & noexcept { return data_; }
    std::span<const T> data() const& noexcept { return data_; }
    std::span<const T> data() const&& = delete;
    const std::vector<T>& storage() const noexcept { return data_; }

    bool all_finite() const noexcept {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const BasicMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

template <typename T>
inline void require_finite(const BasicMatrix<T>& m, const char* where) {
    if (!m.all_finite()) throw NumericError(std::string(where) + ": non-finite value");
}

template <typename To, typename From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& m) {
    std::vector<To> out(m.size());
    auto src = m.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
    return BasicMatrix<To>(m.rows(), m.cols(), std::move(out));
}

}  // namespace rwf
