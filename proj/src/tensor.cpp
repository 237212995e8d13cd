#include "gito/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace gito {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>())
{
    if (shape.empty())
        throw ShapeError("tensor shape must have at least one axis");
    if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end())
        throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    if (shape_size(shape) != data.size())
        throw ShapeError("shape " + shape_to_string(shape) + " does not match data length " +
                         std::to_string(data.size()));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return Tensor({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::matrix(const std::vector<std::vector<T>>& rows, bool requires_grad)
{
    if (rows.empty() || rows.front().empty())
        throw ShapeError("matrix needs at least one row and column");
    std::vector<T> data;
    data.reserve(rows.size() * rows.front().size());
    for (const auto& row : rows) {
        if (row.size() != rows.front().size())
            throw ShapeError("ragged rows in matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), rows.front().size()}, std::move(data), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const
{
    if (rank() != 2)
        throw ShapeError("rows() needs a 2-D tensor, got " + shape_to_string(shape()));
    return node_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const
{
    if (rank() != 2)
        throw ShapeError("cols() needs a 2-D tensor, got " + shape_to_string(shape()));
    return node_->shape[1];
}

template <typename T>
T Tensor<T>::item() const
{
    if (size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const
{
    return node_->data.at(row * cols() + col);
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag)
{
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
std::vector<T>& Tensor<T>::grad_buffer()
{
    if (node_->grad.empty())
        node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad()
{
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const
{
    Tensor copy(node_->shape, node_->data, node_->requires_grad);
    return copy;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace gito
