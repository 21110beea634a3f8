#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace duofit {

// Dense row-major array, rank 0..4. Rank 0 is a scalar with one element.
struct Shape {
    std::array<int64_t, 4> dim{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<int64_t> dims) {
        if (dims.size() > 4) throw std::invalid_argument("Shape: rank > 4");
        rank = static_cast<int>(dims.size());
        int i = 0;
        for (int64_t d : dims) dim[i++] = d;
    }

    int64_t operator[](int i) const { return dim[i]; }
    int64_t& operator[](int i) { return dim[i]; }

    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= dim[i];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (dim[i] != o.dim[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (int i = 0; i < rank; ++i) os << dim[i] << (i + 1 < rank ? "," : "");
        os << ')';
        return os.str();
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s) : shape_(s), data_(static_cast<size_t>(s.numel()), T(0)) {}
    Tensor(Shape s, T fill) : shape_(s), data_(static_cast<size_t>(s.numel()), fill) {}
    Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_.numel())
            throw std::invalid_argument("Tensor: data size does not match shape " + shape_.str());
    }

    static Tensor scalar(T v) {
        Tensor t{Shape{}};
        t.data_[0] = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t dim(int i) const { return shape_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    T& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    const T& at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    T value() const {
        if (numel() != 1) throw std::logic_error("Tensor::value: not a scalar, shape " + shape_.str());
        return data_[0];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out{shape_};
        for (size_t i = 0; i < data_.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<U>(data_[i]);
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

private:
    Shape shape_{};
    std::vector<T> data_ = std::vector<T>(1, T(0));
};

} // namespace duofit
