// Dense fp64 tensors in row-major order.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gar {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Raised when a pairwise form is undefined, e.g. all predictions are equal.
struct DegenerateBatch : std::domain_error {
    using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class Tensor {
public:
    Tensor() : data_(1, 0.0) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size())
            throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(Shape shape)
    {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor vector(std::vector<double> values)
    {
        const auto n = values.size();
        return Tensor({n}, std::move(values));
    }

    /// Column vector [N x 1].
    static Tensor column(std::vector<double> values)
    {
        const auto n = values.size();
        return Tensor({n, 1}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows)
    {
        std::vector<double> values;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols)
                throw ShapeError("ragged matrix literal");
            values.insert(values.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    /// Rows of a rank-2 tensor; a rank-1 tensor is treated as a column.
    std::size_t rows() const
    {
        if (shape_.empty())
            return 1;
        return shape_[0];
    }

    std::size_t cols() const
    {
        if (shape_.size() < 2)
            return 1;
        return shape_[1];
    }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const
    {
        if (data_.size() != 1)
            throw ShapeError("item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }

    std::span<double> values() & noexcept { return data_; }
    std::span<const double> values() const& noexcept { return data_; }
    // A view into a temporary would dangle.
    std::span<const double> values() const&& = delete;
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const noexcept
    {
        for (double v : data_)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    /// Copy of column c of a rank-2 tensor, as a rank-1 tensor.
    Tensor column_of(std::size_t c) const
    {
        const auto n = rows(), m = cols();
        if (c >= m)
            throw ShapeError("column index out of range");
        std::vector<double> out(n);
        for (std::size_t r = 0; r < n; ++r)
            out[r] = data_[r * m + c];
        return vector(std::move(out));
    }

    /// Rows selected by index, preserving the column count.
    Tensor gather_rows(std::span<const std::size_t> idx) const
    {
        const auto m = cols();
        std::vector<double> out;
        out.reserve(idx.size() * m);
        for (auto r : idx) {
            if (r >= rows())
                throw ShapeError("row index out of range");
            out.insert(out.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * m),
                       data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * m));
        }
        return Tensor({idx.size(), m}, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace gar
