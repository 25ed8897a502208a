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

#include "kbnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace kbnet {

std::string to_string(const Shape& s)
{
    return "[" + std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
           std::to_string(s.w) + "]";
}

void check_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

template <typename T>
Tensor4<T>::Tensor4(int n, int c, int h, int w, T fill) : shape_{n, c, h, w}
{
    if (n < 1 || c < 1 || h < 1 || w < 1) {
        throw ShapeError("Tensor4: all dimensions must be >= 1, got " + to_string(shape_));
    }
    data_.assign(shape_.numel(), fill);
}

template <typename T>
Tensor4<T>::Tensor4(Shape s, std::vector<T> data) : Tensor4(s.n, s.c, s.h, s.w)
{
    if (data.size() != shape_.numel()) {
        throw ShapeError("Tensor4: buffer of " + std::to_string(data.size()) + " elements does not match " +
                         to_string(s));
    }
    data_ = std::move(data);
}

template <typename T>
void Tensor4<T>::fill(T v)
{
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor4<T> Tensor4<T>::reshaped(Shape s) const
{
    if (s.numel() != shape_.numel()) {
        throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(s) + " changes element count");
    }
    return Tensor4(s, data_);
}

namespace {

template <typename T, typename Op>
Tensor4<T> binary(const Tensor4<T>& a, const Tensor4<T>& b, const char* what, Op op)
{
    check_same_shape(a.shape(), b.shape(), what);
    Tensor4<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        po[i] = op(pa[i], pb[i]);
    }
    return out;
}

} // namespace

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b)
{
    return binary(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b)
{
    return binary(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b)
{
    return binary(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, T s)
{
    Tensor4<T> out = a;
    for (auto& v : out.span()) {
        v += s;
    }
    return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, T s)
{
    Tensor4<T> out = a;
    for (auto& v : out.span()) {
        v *= s;
    }
    return out;
}

template <typename T>
void add_inplace(Tensor4<T>& dst, const Tensor4<T>& src)
{
    check_same_shape(dst.shape(), src.shape(), "add_inplace");
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        d[i] += s[i];
    }
}

template <typename T>
void axpy(T alpha, const Tensor4<T>& src, Tensor4<T>& dst)
{
    check_same_shape(dst.shape(), src.shape(), "axpy");
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        d[i] += alpha * s[i];
    }
}

template <typename T>
double sum(const Tensor4<T>& a)
{
    double acc = 0.0;
    for (T v : a.span()) {
        acc += static_cast<double>(v);
    }
    return acc;
}

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b)
{
    check_same_shape(a.shape(), b.shape(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

template <typename T>
double sum_squares(const Tensor4<T>& a)
{
    return dot(a, a);
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b)
{
    check_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

template <typename T>
bool all_finite(const Tensor4<T>& a)
{
    return std::all_of(a.span().begin(), a.span().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& a, int first, int count)
{
    if (first < 0 || count < 1 || first + count > a.c()) {
        throw ShapeError("slice_channels: [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") out of range for " + to_string(a.shape()));
    }
    Tensor4<T> out(a.n(), count, a.h(), a.w());
    const std::size_t hw = static_cast<std::size_t>(a.h()) * a.w();
    for (int b = 0; b < a.n(); ++b) {
        std::copy_n(a.plane(b, first), count * hw, out.plane(b, 0));
    }
    return out;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b)
{
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw ShapeError("concat_channels: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    Tensor4<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t hw = static_cast<std::size_t>(a.h()) * a.w();
    for (int n = 0; n < a.n(); ++n) {
        std::copy_n(a.plane(n, 0), a.c() * hw, out.plane(n, 0));
        std::copy_n(b.plane(n, 0), b.c() * hw, out.plane(n, a.c()));
    }
    return out;
}

#define KBNET_INSTANTIATE(T)                                                      \
    template class Tensor4<T>;                                                    \
    template Tensor4<T> add(const Tensor4<T>&, const Tensor4<T>&);                \
    template Tensor4<T> sub(const Tensor4<T>&, const Tensor4<T>&);                \
    template Tensor4<T> mul(const Tensor4<T>&, const Tensor4<T>&);                \
    template Tensor4<T> add(const Tensor4<T>&, T);                                \
    template Tensor4<T> mul(const Tensor4<T>&, T);                                \
    template void add_inplace(Tensor4<T>&, const Tensor4<T>&);                    \
    template void axpy(T, const Tensor4<T>&, Tensor4<T>&);                        \
    template double sum(const Tensor4<T>&);                                       \
    template double dot(const Tensor4<T>&, const Tensor4<T>&);                    \
    template double sum_squares(const Tensor4<T>&);                               \
    template double max_abs_diff(const Tensor4<T>&, const Tensor4<T>&);           \
    template bool all_finite(const Tensor4<T>&);                                  \
    template Tensor4<T> slice_channels(const Tensor4<T>&, int, int);              \
    template Tensor4<T> concat_channels(const Tensor4<T>&, const Tensor4<T>&);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
