/********************************************************************************
* Copyright 2026 The kbnet Authors. All Rights Reserved.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*    http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
********************************************************************************/

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kbnet {

/// Thrown when operands disagree on shape or a configuration violates a
/// divisibility constraint.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const noexcept
    {
        return static_cast<std::size_t>(n) * c * h * w;
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense rank-4 array in (batch, channel, height, width) order, row-major.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    Tensor4(int n, int c, int h, int w, T fill = T(0));
    explicit Tensor4(Shape s, T fill = T(0)) : Tensor4(s.n, s.c, s.h, s.w, fill) {}
    Tensor4(Shape s, std::vector<T> data);

    const Shape& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_.n; }
    int c() const noexcept { return shape_.c; }
    int h() const noexcept { return shape_.h; }
    int w() const noexcept { return shape_.w; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    std::size_t offset(int b, int ch, int y, int x) const noexcept
    {
        return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }

    T& operator()(int b, int ch, int y, int x) noexcept { return data_[offset(b, ch, y, x)]; }
    T operator()(int b, int ch, int y, int x) const noexcept { return data_[offset(b, ch, y, x)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Pointer to the h*w plane of (b, ch).
    T* plane(int b, int ch) noexcept { return data_.data() + offset(b, ch, 0, 0); }
    const T* plane(int b, int ch) const noexcept { return data_.data() + offset(b, ch, 0, 0); }

    void fill(T v);
    void set_zero() { fill(T(0)); }

    /// Same element count, new dimensions.
    Tensor4 reshaped(Shape s) const;

    template <typename U>
    Tensor4<U> cast() const
    {
        Tensor4<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

void check_same_shape(const Shape& a, const Shape& b, const char* what);

// Elementwise suite. Binary tensor ops require equal shapes.
template <typename T> Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T> Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T> Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T> Tensor4<T> add(const Tensor4<T>& a, T s);
template <typename T> Tensor4<T> mul(const Tensor4<T>& a, T s);

// In-place accumulation: dst += src, dst += alpha * src.
template <typename T> void add_inplace(Tensor4<T>& dst, const Tensor4<T>& src);
template <typename T> void axpy(T alpha, const Tensor4<T>& src, Tensor4<T>& dst);

// Reductions accumulate in double, walking the buffer in row-major order.
template <typename T> double sum(const Tensor4<T>& a);
template <typename T> double dot(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T> double sum_squares(const Tensor4<T>& a);
template <typename T> double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b);

/// False if any element is NaN or infinite.
template <typename T> bool all_finite(const Tensor4<T>& a);

/// Slices `count` channels starting at `first` into a new tensor.
template <typename T> Tensor4<T> slice_channels(const Tensor4<T>& a, int first, int count);
/// Concatenates along the channel axis.
template <typename T> Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);

} // namespace kbnet
