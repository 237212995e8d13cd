#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gito {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Storage behind a Tensor handle. Op outputs are owned jointly by the
/// handles and the tape that recorded them.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
};

/// Dense row-major array with shared ownership. Copies alias the same
/// storage; use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);
    /// Row-major 2-D tensor from nested rows; all rows must share a length.
    static Tensor matrix(const std::vector<std::vector<T>>& rows, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const T> data() const& { return node_->data; }
    /// Deleted so a span cannot outlive a temporary handle.
    std::span<const T> data() const&& = delete;
    /// Direct write access; reserved for parameter updates and loaders.
    std::span<T> mutable_data() { return node_->data; }
    T item() const;
    T at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    /// Gradient buffer, allocated as zeros on first access.
    std::vector<T>& grad_buffer();
    void zero_grad();

    Tensor clone() const;

    TensorNode<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<TensorNode<T>>& shared_node() const noexcept { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode<T>> node_;
};

}  // namespace gito
