#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace terse {

// Dense row-major N-d array. float for training, double for gradient checks.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
    Tensor(std::vector<int> s, T fill_value) : shape(std::move(s)), data(count(shape), fill_value) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::size_t>(count(shape)) != data.size())
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) {
            if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // NCHW accessors; bounds are the caller's responsibility on hot paths.
    T& at4(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    const T& at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    Tensor reshaped(std::vector<int> s) const {
        if (count(s) != size())
            throw std::invalid_argument("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
        Tensor out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ']';
        return os.str();
    }
    std::string shape_str() const { return shape_str(shape); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<int>& want, const char* what) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(what) + ": expected shape " +
                                    Tensor<T>::shape_str(want) + ", got " + t.shape_str());
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace terse
