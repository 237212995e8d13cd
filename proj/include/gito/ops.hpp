#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gito/tensor.hpp"

// Differentiable primitives. Every op records itself on the active tape when
// any input requires grad. Unless stated otherwise ops take 2-D operands.
//
// Broadcasting (add/sub/mul/div): `b` may match `a` exactly, match a's
// trailing dimensions (a row vector against a matrix), or be a single value.

namespace gito {

using Index = std::uint32_t;

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T value);

/// Concatenation along the last axis; leading dimensions must agree.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
/// Columns [start, start + count) of the last axis.
template <typename T> Tensor<T> slice_last(const Tensor<T>& a, std::size_t start, std::size_t count);
/// Outer product of an n x 1 column with a row of ones: n x width.
template <typename T> Tensor<T> repeat_cols(const Tensor<T>& column, std::size_t width);

/// Max-shifted softmax along any axis of an n-D tensor.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
/// max(a, floor) elementwise, NaN passing through; the gradient passes only
/// where a > floor.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T floor);

/// Normalises over the last axis, then scales by gamma and shifts by beta
/// (both shaped like the last axis).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// Reduction of every element to a {1} tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Sum over one axis of a 2-D tensor, keeping it as a size-1 axis.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis);

/// out[r] = a[index[r]]
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const Index> index);
/// out[index[r]] += a[r], out has `rows` rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& a, std::span<const Index> index, std::size_t rows);
/// Column-wise softmax within groups of rows sharing a segment id.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& logits, std::span<const Index> segment, std::size_t segments);

/// Same values, cut from the tape.
template <typename T> Tensor<T> detach(const Tensor<T>& a);

/// While alive, records on the current thread the smallest distance of any
/// leaky_relu input from zero and of any clamp_min input from its floor.
/// Finite-difference steps larger than this margin straddle a kink.
class KinkMonitor {
public:
    KinkMonitor();
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    double margin() const noexcept { return margin_; }
    void note(double distance) noexcept { margin_ = distance < margin_ ? distance : margin_; }
    static KinkMonitor* current() noexcept;

private:
    double margin_;
    KinkMonitor* previous_;
};

}  // namespace gito
