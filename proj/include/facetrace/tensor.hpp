#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "facetrace/errors.hpp"

namespace facetrace {

// Dense row-major nd-array. Feature maps are stored NCHW, embeddings (N, D),
// weights whatever the op documents. Scalar type is a template parameter:
// training runs in float, gradient verification instantiates the same code
// in double.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        data_.assign(size_t(numel_of(dims_)), T(0));
    }

    Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

    static int64_t numel_of(const std::vector<int>& dims) {
        int64_t n = 1;
        for (int d : dims) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
            n *= d;
        }
        return n;
    }

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_.at(size_t(i)); }
    int rank() const { return int(dims_.size()); }
    int64_t numel() const { return int64_t(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[size_t(i)]; }
    const T& operator[](int64_t i) const { return data_[size_t(i)]; }

    // NCHW accessors; rank is trusted, offsets are not range-checked.
    T& at(int n, int c, int h, int w) {
        return data_[size_t(((int64_t(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[size_t(((int64_t(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    T& at(int i, int j) { return data_[size_t(int64_t(i) * dims_[1] + j)]; }
    const T& at(int i, int j) const { return data_[size_t(int64_t(i) * dims_[1] + j)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < dims_.size(); ++i)
            os << (i ? "x" : "") << dims_[i];
        os << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(dims_);
        for (int64_t i = 0; i < numel(); ++i)
            out[i] = U(data_[size_t(i)]);
        return out;
    }

private:
    std::vector<int> dims_;
    std::vector<T> data_;
};

inline std::string shape_str(const std::vector<int>& dims) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < dims.size(); ++i)
        os << (i ? "x" : "") << dims[i];
    os << ")";
    return os.str();
}

template <typename T>
void check_shape(const Tensor<T>& t, const std::vector<int>& want, const char* what) {
    if (t.dims() != want)
        throw ShapeError(std::string(what) + ": expected " + shape_str(want) +
                         ", got " + t.shape_str());
}

} // namespace facetrace
