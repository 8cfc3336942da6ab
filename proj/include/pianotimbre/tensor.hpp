#pragma once

#include "pianotimbre/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace pt {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_to_string(const Dims& dims);

/// Dense row-major tensor. Float is the training precision; double exists so
/// finite-difference gradient checks can be tight.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)), data_(dims_product(dims_), fill)
    {
        check_dims();
    }

    Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data))
    {
        check_dims();
        require(data_.size() == dims_product(dims_), ErrorCode::DimMismatch,
                "data length " + std::to_string(data_.size()) + " does not match dims " + dims_to_string(dims_));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Rank-2 access, row-major.
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * dims_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * dims_[1] + c]; }

    T* row(std::size_t r) noexcept { return data_.data() + r * dims_[1]; }
    const T* row(std::size_t r) const noexcept { return data_.data() + r * dims_[1]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    Tensor reshaped(Dims dims) const
    {
        require(dims_product(dims) == size(), ErrorCode::DimMismatch,
                "cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
        return Tensor(std::move(dims), data_);
    }

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
    }

    Tensor& operator+=(const Tensor& other)
    {
        require(dims_ == other.dims_, ErrorCode::DimMismatch, "+= on " + dims_to_string(dims_));
        for (std::size_t i = 0; i < data_.size(); ++i)
            data_[i] += other.data_[i];
        return *this;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_dims() const
    {
        for (auto d : dims_)
            require(d > 0, ErrorCode::DimMismatch, "tensor extents must be positive, got " + dims_to_string(dims_));
    }

    Dims dims_;
    std::vector<T> data_;
};

/// A learnable tensor with its gradient and Adam moments.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
    long step_count = 0;

    Parameter() = default;
    Parameter(std::string n, Dims dims)
        : name(std::move(n)), value(dims), grad(dims), adam_m(dims), adam_v(dims)
    {
    }

    void zero_grad() { grad.zero(); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

/// When enabled, every layer checks its outputs for NaN/Inf and throws.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks_enabled() noexcept;

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where)
{
    if (finite_checks_enabled() && !t.all_finite())
        fail(ErrorCode::NonFiniteLoss, std::string("non-finite values after ") + where);
}

} // namespace pt
