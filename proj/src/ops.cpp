#include "gito/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gito/tape.hpp"

namespace gito {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

thread_local KinkMonitor* active_monitor = nullptr;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs)
{
    auto* tape = active_tape<T>();
    if (tape == nullptr)
        return nullptr;
    for (const auto* in : inputs)
        if (in->requires_grad())
            return tape;
    return nullptr;
}

void require_rank2(const Shape& s, const char* op)
{
    if (s.size() != 2)
        throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_to_string(s));
}

/// Product of the trailing dimensions `b` broadcasts over, or throws.
template <typename T>
std::size_t broadcast_width(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (b.size() == 1 || a.shape() == b.shape())
        return b.size();
    Shape bs = b.shape();
    while (bs.size() > 1 && bs.front() == 1)
        bs.erase(bs.begin());
    const Shape& as = a.shape();
    bool ok = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
    if (!ok)
        throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(b.shape()) + " onto " +
                         shape_to_string(a.shape()));
    return b.size();
}

enum class Binary { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name)
{
    const std::size_t width = broadcast_width(a, b, name);
    const std::size_t outer = a.size() / width;
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const T* ar = ad.data() + o * width;
        T* orow = out.data() + o * width;
        for (std::size_t j = 0; j < width; ++j) {
            switch (kind) {
            case Binary::add: orow[j] = ar[j] + bd[j]; break;
            case Binary::sub: orow[j] = ar[j] - bd[j]; break;
            case Binary::mul: orow[j] = ar[j] * bd[j]; break;
            case Binary::div: orow[j] = ar[j] / bd[j]; break;
            }
        }
    }
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        NodePtr<T> an = a.shared_node(), bn = b.shared_node();
        auto* on = result.node();
        tape->record({an, bn}, result.shared_node(),
                     [an, bn, on, kind, width, outer](Tape<T>& t, std::span<const T> g) {
                         const auto& av = an->data;
                         const auto& bv = bn->data;
                         if (an->requires_grad) {
                             auto& ga = t.grad(an.get());
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < width; ++j) {
                                     std::size_t i = o * width + j;
                                     switch (kind) {
                                     case Binary::add:
                                     case Binary::sub: ga[i] += g[i]; break;
                                     case Binary::mul: ga[i] += g[i] * bv[j]; break;
                                     case Binary::div: ga[i] += g[i] / bv[j]; break;
                                     }
                                 }
                         }
                         if (bn->requires_grad) {
                             auto& gb = t.grad(bn.get());
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < width; ++j) {
                                     std::size_t i = o * width + j;
                                     switch (kind) {
                                     case Binary::add: gb[j] += g[i]; break;
                                     case Binary::sub: gb[j] -= g[i]; break;
                                     case Binary::mul: gb[j] += g[i] * av[i]; break;
                                     case Binary::div: gb[j] -= g[i] * on->data[i] / bv[j]; break;
                                     }
                                 }
                         }
                     });
    }
    return result;
}

/// Elementwise unary op given value and derivative (in terms of input x and output y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F forward, D derivative)
{
    std::vector<T> out(a.size());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = forward(ad[i]);
    Tensor<T> result(a.shape(), std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        auto* on = result.node();
        tape->record({an}, result.shared_node(), [an, on, derivative](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * derivative(an->data[i], on->data[i]);
        });
    }
    return result;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_rank2(a.shape(), "matmul");
    require_rank2(b.shape(), "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    std::vector<T> out(n * m);
    MutMap<T>(out.data(), n, m).noalias() =
        ConstMap<T>(a.data().data(), n, k) * ConstMap<T>(b.data().data(), k, m);
    Tensor<T> result({n, m}, std::move(out));
    if (auto* tape = recording_tape({&a, &b})) {
        NodePtr<T> an = a.shared_node(), bn = b.shared_node();
        tape->record({an, bn}, result.shared_node(), [an, bn, n, k, m](Tape<T>& t, std::span<const T> g) {
            ConstMap<T> gm(g.data(), n, m);
            if (an->requires_grad) {
                auto& ga = t.grad(an.get());
                MutMap<T>(ga.data(), n, k).noalias() += gm * ConstMap<T>(bn->data.data(), k, m).transpose();
            }
            if (bn->requires_grad) {
                auto& gb = t.grad(bn.get());
                MutMap<T>(gb.data(), k, m).noalias() += ConstMap<T>(an->data.data(), n, k).transpose() * gm;
            }
        });
    }
    return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a)
{
    require_rank2(a.shape(), "transpose");
    const std::size_t n = a.rows(), m = a.cols();
    std::vector<T> out(n * m);
    MutMap<T>(out.data(), m, n) = ConstMap<T>(a.data().data(), n, m).transpose();
    Tensor<T> result({m, n}, std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        tape->record({an}, result.shared_node(), [an, n, m](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            MutMap<T>(ga.data(), n, m) += ConstMap<T>(g.data(), m, n).transpose();
        });
    }
    return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    if (shape_size(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
    std::vector<T> data(a.data().begin(), a.data().end());
    Tensor<T> result(std::move(shape), std::move(data));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        tape->record({an}, result.shared_node(), [an](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i];
        });
    }
    return result;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary(a, b, Binary::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary(a, b, Binary::sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary(a, b, Binary::mul, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b)
{
    return binary(a, b, Binary::div, "div");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value)
{
    return unary(a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T value)
{
    return unary(a, [value](T x) { return x * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts)
{
    if (parts.empty())
        throw ShapeError("concat of an empty list");
    Shape lead = parts.front().shape();
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        pl.pop_back();
        if (pl != lead)
            throw ShapeError("concat: leading dimensions differ, " + shape_to_string(parts.front().shape()) +
                             " vs " + shape_to_string(p.shape()));
        widths.push_back(p.shape().back());
        total += widths.back();
    }
    const std::size_t outer = shape_size(lead);
    std::vector<T> out(outer * total);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto src = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.data() + o * widths[p], widths[p], out.data() + o * total + offset);
        offset += widths[p];
    }
    Shape shape = lead;
    shape.push_back(total);
    Tensor<T> result(std::move(shape), std::move(out));
    if (auto* tape = active_tape<T>()) {
        bool any = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
        if (any) {
            std::vector<NodePtr<T>> inputs;
            for (const auto& p : parts)
                inputs.push_back(p.shared_node());
            auto captured = inputs;
            tape->record(std::move(inputs), result.shared_node(),
                         [captured, widths, outer, total](Tape<T>& t, std::span<const T> g) {
                             std::size_t off = 0;
                             for (std::size_t p = 0; p < captured.size(); ++p) {
                                 if (captured[p]->requires_grad) {
                                     auto& gp = t.grad(captured[p].get());
                                     for (std::size_t o = 0; o < outer; ++o)
                                         for (std::size_t j = 0; j < widths[p]; ++j)
                                             gp[o * widths[p] + j] += g[o * total + off + j];
                                 }
                                 off += widths[p];
                             }
                         });
        }
    }
    return result;
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t start, std::size_t count)
{
    const std::size_t width = a.shape().back();
    if (count == 0 || start + count > width)
        throw ShapeError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_to_string(a.shape()));
    const std::size_t outer = a.size() / width;
    std::vector<T> out(outer * count);
    auto src = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(src.data() + o * width + start, count, out.data() + o * count);
    Shape shape = a.shape();
    shape.back() = count;
    Tensor<T> result(std::move(shape), std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        tape->record({an}, result.shared_node(), [an, start, count, width, outer](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < count; ++j)
                    ga[o * width + start + j] += g[o * count + j];
        });
    }
    return result;
}

template <typename T>
Tensor<T> repeat_cols(const Tensor<T>& column, std::size_t width)
{
    require_rank2(column.shape(), "repeat_cols");
    if (column.cols() != 1)
        throw ShapeError("repeat_cols expects an n x 1 column, got " + shape_to_string(column.shape()));
    const std::size_t n = column.rows();
    std::vector<T> out(n * width);
    auto src = column.data();
    for (std::size_t i = 0; i < n; ++i)
        std::fill_n(out.data() + i * width, width, src[i]);
    Tensor<T> result({n, width}, std::move(out));
    if (auto* tape = recording_tape({&column})) {
        NodePtr<T> cn = column.shared_node();
        tape->record({cn}, result.shared_node(), [cn, n, width](Tape<T>& t, std::span<const T> g) {
            auto& gc = t.grad(cn.get());
            for (std::size_t i = 0; i < n; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < width; ++j)
                    acc += g[i * width + j];
                gc[i] += acc;
            }
        });
    }
    return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis)
{
    const Shape& s = a.shape();
    if (axis >= s.size())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
    const std::size_t n = s[axis];
    std::vector<T> out(a.size());
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < n; ++k)
                mx = std::max(mx, x[base + k * inner]);
            T total = 0;
            for (std::size_t k = 0; k < n; ++k) {
                T e = std::exp(x[base + k * inner] - mx);
                out[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < n; ++k)
                out[base + k * inner] /= total;
        }
    Tensor<T> result(s, std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        auto* on = result.node();
        tape->record({an}, result.shared_node(), [an, on, outer, inner, n](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            const auto& y = on->data;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    T dot = 0;
                    for (std::size_t k = 0; k < n; ++k)
                        dot += g[base + k * inner] * y[base + k * inner];
                    for (std::size_t k = 0; k < n; ++k) {
                        const std::size_t i = base + k * inner;
                        ga[i] += y[i] * (g[i] - dot);
                    }
                }
        });
    }
    return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a)
{
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) {
            T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
            return cdf + x * pdf;
        });
}

template <typename T>
void note_kinks(const Tensor<T>& a, T kink)
{
    if (auto* monitor = KinkMonitor::current())
        for (T x : a.data())
            monitor->note(std::abs(static_cast<double>(x - kink)));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope)
{
    note_kinks(a, T(0));
    return unary(
        a, [negative_slope](T x) { return x > T(0) ? x : negative_slope * x; },
        [negative_slope](T x, T) { return x > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a)
{
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a)
{
    return unary(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor)
{
    note_kinks(a, floor);
    return unary(
        a, [floor](T x) { return x < floor ? floor : x; }, [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    const std::size_t width = x.shape().back();
    if (gamma.size() != width || beta.size() != width)
        throw ShapeError("layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
                         shape_to_string(beta.shape()) + " do not match last axis of " + shape_to_string(x.shape()));
    const std::size_t outer = x.size() / width;
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> rstd(outer);
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const T* row = xd.data() + o * width;
        T mu = 0;
        for (std::size_t j = 0; j < width; ++j)
            mu += row[j];
        mu /= T(width);
        T var = 0;
        for (std::size_t j = 0; j < width; ++j)
            var += (row[j] - mu) * (row[j] - mu);
        var /= T(width);
        rstd[o] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t i = o * width + j;
            xhat[i] = (row[j] - mu) * rstd[o];
            out[i] = xhat[i] * gd[j] + bd[j];
        }
    }
    Tensor<T> result(x.shape(), std::move(out));
    if (auto* tape = recording_tape({&x, &gamma, &beta})) {
        NodePtr<T> xn = x.shared_node(), gn = gamma.shared_node(), bn = beta.shared_node();
        tape->record({xn, gn, bn}, result.shared_node(),
                     [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), width,
                      outer](Tape<T>& t, std::span<const T> g) {
                         if (gn->requires_grad) {
                             auto& gg = t.grad(gn.get());
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 gg[i % width] += g[i] * xhat[i];
                         }
                         if (bn->requires_grad) {
                             auto& gb = t.grad(bn.get());
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 gb[i % width] += g[i];
                         }
                         if (xn->requires_grad) {
                             auto& gx = t.grad(xn.get());
                             const auto& gam = gn->data;
                             for (std::size_t o = 0; o < outer; ++o) {
                                 T mean_d = 0, mean_dx = 0;
                                 for (std::size_t j = 0; j < width; ++j) {
                                     const std::size_t i = o * width + j;
                                     T d = g[i] * gam[j];
                                     mean_d += d;
                                     mean_dx += d * xhat[i];
                                 }
                                 mean_d /= T(width);
                                 mean_dx /= T(width);
                                 for (std::size_t j = 0; j < width; ++j) {
                                     const std::size_t i = o * width + j;
                                     T d = g[i] * gam[j];
                                     gx[i] += rstd[o] * (d - mean_d - xhat[i] * mean_dx);
                                 }
                             }
                         }
                     });
    }
    return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    T total = 0;
    for (T v : a.data())
        total += v;
    Tensor<T> result = Tensor<T>::scalar(total);
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        tape->record({an}, result.shared_node(), [an](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (auto& v : ga)
                v += g[0];
        });
    }
    return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a)
{
    return mul_scalar(sum(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis)
{
    require_rank2(a.shape(), "sum_axis");
    if (axis > 1)
        throw ShapeError("sum_axis: axis must be 0 or 1");
    const std::size_t n = a.rows(), m = a.cols();
    auto x = a.data();
    std::vector<T> out(axis == 0 ? m : n, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out[axis == 0 ? j : i] += x[i * m + j];
    Shape shape = axis == 0 ? Shape{1, m} : Shape{n, 1};
    Tensor<T> result(std::move(shape), std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        tape->record({an}, result.shared_node(), [an, n, m, axis](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    ga[i * m + j] += g[axis == 0 ? j : i];
        });
    }
    return result;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const Index> index)
{
    require_rank2(a.shape(), "gather_rows");
    const std::size_t n = a.rows(), f = a.cols();
    if (index.empty())
        throw ShapeError("gather_rows: empty index list");
    std::vector<T> out(index.size() * f);
    auto x = a.data();
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= n)
            throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for " +
                             shape_to_string(a.shape()));
        std::copy_n(x.data() + std::size_t(index[r]) * f, f, out.data() + r * f);
    }
    Tensor<T> result({index.size(), f}, std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        std::vector<Index> idx(index.begin(), index.end());
        tape->record({an}, result.shared_node(), [an, idx = std::move(idx), f](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < f; ++j)
                    ga[std::size_t(idx[r]) * f + j] += g[r * f + j];
        });
    }
    return result;
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& a, std::span<const Index> index, std::size_t rows)
{
    require_rank2(a.shape(), "scatter_add_rows");
    const std::size_t f = a.cols();
    if (index.size() != a.rows())
        throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                         shape_to_string(a.shape()));
    std::vector<T> out(rows * f, T(0));
    auto x = a.data();
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= rows)
            throw ShapeError("scatter_add_rows: index " + std::to_string(index[r]) + " out of range for " +
                             std::to_string(rows) + " rows");
        for (std::size_t j = 0; j < f; ++j)
            out[std::size_t(index[r]) * f + j] += x[r * f + j];
    }
    Tensor<T> result({rows, f}, std::move(out));
    if (auto* tape = recording_tape({&a})) {
        NodePtr<T> an = a.shared_node();
        std::vector<Index> idx(index.begin(), index.end());
        tape->record({an}, result.shared_node(), [an, idx = std::move(idx), f](Tape<T>& t, std::span<const T> g) {
            auto& ga = t.grad(an.get());
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < f; ++j)
                    ga[r * f + j] += g[std::size_t(idx[r]) * f + j];
        });
    }
    return result;
}

template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& logits, std::span<const Index> segment, std::size_t segments)
{
    require_rank2(logits.shape(), "segment_softmax");
    const std::size_t m = logits.rows(), h = logits.cols();
    if (segment.size() != m)
        throw ShapeError("segment_softmax: " + std::to_string(segment.size()) + " segment ids for " +
                         shape_to_string(logits.shape()));
    auto x = logits.data();
    std::vector<T> mx(segments * h, -std::numeric_limits<T>::infinity());
    for (std::size_t r = 0; r < m; ++r) {
        if (segment[r] >= segments)
            throw ShapeError("segment_softmax: segment id out of range");
        for (std::size_t j = 0; j < h; ++j) {
            T& slot = mx[std::size_t(segment[r]) * h + j];
            slot = std::max(slot, x[r * h + j]);
        }
    }
    std::vector<T> out(m * h);
    std::vector<T> total(segments * h, T(0));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < h; ++j) {
            const std::size_t s = std::size_t(segment[r]) * h + j;
            out[r * h + j] = std::exp(x[r * h + j] - mx[s]);
            total[s] += out[r * h + j];
        }
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < h; ++j)
            out[r * h + j] /= total[std::size_t(segment[r]) * h + j];
    Tensor<T> result({m, h}, std::move(out));
    if (auto* tape = recording_tape({&logits})) {
        NodePtr<T> ln = logits.shared_node();
        auto* on = result.node();
        std::vector<Index> seg(segment.begin(), segment.end());
        tape->record({ln}, result.shared_node(),
                     [ln, on, seg = std::move(seg), segments, m, h](Tape<T>& t, std::span<const T> g) {
                         const auto& y = on->data;
                         std::vector<T> dot(segments * h, T(0));
                         for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t j = 0; j < h; ++j)
                                 dot[std::size_t(seg[r]) * h + j] += g[r * h + j] * y[r * h + j];
                         auto& gl = t.grad(ln.get());
                         for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t j = 0; j < h; ++j) {
                                 const std::size_t i = r * h + j;
                                 gl[i] += y[i] * (g[i] - dot[std::size_t(seg[r]) * h + j]);
                             }
                     });
    }
    return result;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& a)
{
    return Tensor<T>(a.shape(), std::vector<T>(a.data().begin(), a.data().end()));
}

#define GITO_INSTANTIATE_OPS(T)                                                                       \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> transpose(const Tensor<T>&);                                                   \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                               \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                               \
    template Tensor<T> concat(const std::vector<Tensor<T>>&);                                         \
    template Tensor<T> slice_last(const Tensor<T>&, std::size_t, std::size_t);                        \
    template Tensor<T> repeat_cols(const Tensor<T>&, std::size_t);                                    \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                        \
    template Tensor<T> gelu(const Tensor<T>&);                                                        \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                               \
    template Tensor<T> exp(const Tensor<T>&);                                                         \
    template Tensor<T> sqrt(const Tensor<T>&);                                                        \
    template Tensor<T> clamp_min(const Tensor<T>&, T);                                                \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
    template Tensor<T> sum(const Tensor<T>&);                                                         \
    template Tensor<T> mean(const Tensor<T>&);                                                        \
    template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                       \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const Index>);                         \
    template Tensor<T> scatter_add_rows(const Tensor<T>&, std::span<const Index>, std::size_t);       \
    template Tensor<T> segment_softmax(const Tensor<T>&, std::span<const Index>, std::size_t);        \
    template Tensor<T> detach(const Tensor<T>&);

KinkMonitor::KinkMonitor() : margin_(std::numeric_limits<double>::infinity()), previous_(active_monitor)
{
    active_monitor = this;
}

KinkMonitor::~KinkMonitor()
{
    active_monitor = previous_;
}

KinkMonitor* KinkMonitor::current() noexcept
{
    return active_monitor;
}

GITO_INSTANTIATE_OPS(float)
GITO_INSTANTIATE_OPS(double)

}  // namespace gito
