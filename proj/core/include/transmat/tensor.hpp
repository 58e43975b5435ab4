#pragma once

#include <algorithm>
#include <cstdint>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "transmat/errors.hpp"

namespace transmat {

using Shape = std::vector<int64_t>;

// 64-byte aligned storage. Eigen's vectorised reductions peel an unaligned head,
// so with malloc's 16-byte alignment results would depend on the heap address.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

inline int64_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Spatial feature maps use NHWC layout.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<size_t>(numel(shape_)), fill) {}
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) { check_size(); }
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_size();
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i < 0 ? rank() + i : i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    Storage<T>& storage() { return data_; }
    const Storage<T>& storage() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NHWC element access.
    T& at(int64_t n, int64_t y, int64_t x, int64_t c) { return data_[offset(n, y, x, c)]; }
    const T& at(int64_t n, int64_t y, int64_t x, int64_t c) const { return data_[offset(n, y, x, c)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        Storage<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    size_t offset(int64_t n, int64_t y, int64_t x, int64_t c) const {
        return static_cast<size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c);
    }

    Shape shape_;
    void check_size() const {
        if (static_cast<int64_t>(data_.size()) != numel(shape_)) {
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    Storage<T> data_;
};

}  // namespace transmat
