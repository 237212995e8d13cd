#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gito/tensor.hpp"

namespace gito {

/// Central differences of f(x + t) - f(x - t) over steps shrinking from
/// `step` by 1.4 per stage, Richardson-extrapolated (Ridders' method); returns
/// the tableau entry with the smallest estimated error.
template <typename T>
T ridders_derivative(const std::function<T(T)>& f, T step);

/// Derivative of f at x, one coordinate at a time, by ridders_derivative with
/// initial step `eps`.
/// `f` is evaluated with no tape installed and must be deterministic.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps);

/// |a - b| / max(|a|, |b|, floor) in the Euclidean norm over all entries.
template <typename T>
T relative_error(std::span<const T> a, std::span<const T> b, T floor = T(1e-8));

struct GradientCheckResult {
    std::string name;
    double relative_error = 0;
    std::size_t coordinates = 0;
    std::size_t worst_index = 0;  // entry with the largest absolute gap
    double analytic = 0;          // at worst_index
    double numeric = 0;
    double peak = 0;      // largest gradient magnitude in the tensor
};

/// Compares tape gradients of `loss` against central differences for every
/// listed tensor. `loss` is invoked repeatedly and must rebuild its graph
/// from the current tensor values each time.
template <typename T>
std::vector<GradientCheckResult> check_gradients(const std::function<Tensor<T>()>& loss,
                                                 const std::vector<std::pair<std::string, Tensor<T>>>& tensors,
                                                 T eps, T floor);

/// Smallest distance of any LeakyReLU or clamp input from its kink during one
/// evaluation of `loss`.
double kink_margin(const std::function<Tensor<double>()>& loss);

struct KinkSafeSettings {
    double max_step = 1e-3;
    double safety = 100;    // initial step is at most margin / safety
    double floor = 1e-8;    // gradient norm below which errors are absolute
    double scale_floor = 1e-6;  // same, as a fraction of the gradient norm over all tensors
};

/// check_gradients with an initial step that keeps every probe on the same
/// side of each kink as the test point.
std::vector<GradientCheckResult> check_gradients_kink_safe(
    const std::function<Tensor<double>()>& loss, const std::vector<std::pair<std::string, Tensor<double>>>& tensors,
    const KinkSafeSettings& settings = {});

/// Largest relative error in a set of results.
double worst_error(const std::vector<GradientCheckResult>& results);

}  // namespace gito
