#include "gito/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gito/ops.hpp"
#include "gito/tape.hpp"

namespace gito {

template <typename T>
T ridders_derivative(const std::function<T(T)>& f, T step)
{
    constexpr int kTable = 10;
    constexpr T kShrink = T(1.4);
    constexpr T kShrink2 = kShrink * kShrink;
    constexpr T kSafe = T(2);
    T table[kTable][kTable];
    T h = step;
    table[0][0] = (f(h) - f(-h)) / (T(2) * h);
    T best = table[0][0];
    T error = std::numeric_limits<T>::max();
    for (int i = 1; i < kTable; ++i) {
        h /= kShrink;
        table[0][i] = (f(h) - f(-h)) / (T(2) * h);
        T factor = kShrink2;
        for (int j = 1; j <= i; ++j) {
            table[j][i] = (table[j - 1][i] * factor - table[j - 1][i - 1]) / (factor - T(1));
            factor *= kShrink2;
            const T estimate = std::max(std::abs(table[j][i] - table[j - 1][i]),
                                        std::abs(table[j][i] - table[j - 1][i - 1]));
            if (estimate <= error) {
                error = estimate;
                best = table[j][i];
            }
        }
        if (std::abs(table[i][i] - table[i - 1][i - 1]) >= kSafe * error)
            break;
    }
    return best;
}

template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps)
{
    if (!(eps > T(0)))
        throw std::invalid_argument("finite_difference_gradient: eps must be positive");
    Tensor<T> probe = x.clone();
    probe.set_requires_grad(false);
    std::vector<T> grad(x.size());
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T saved = values[i];
        grad[i] = ridders_derivative<T>(
            [&](T offset) {
                values[i] = saved + offset;
                return f(probe);
            },
            eps);
        values[i] = saved;
    }
    return Tensor<T>(x.shape(), std::move(grad));
}

template <typename T>
T relative_error(std::span<const T> a, std::span<const T> b, T floor)
{
    if (a.size() != b.size())
        throw std::invalid_argument("relative_error: length mismatch");
    T gap = 0, norm_a = 0, norm_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        gap += (a[i] - b[i]) * (a[i] - b[i]);
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    return std::sqrt(gap) / std::max({std::sqrt(norm_a), std::sqrt(norm_b), floor});
}

template <typename T>
std::vector<GradientCheckResult> check_gradients(const std::function<Tensor<T>()>& loss,
                                                 const std::vector<std::pair<std::string, Tensor<T>>>& tensors,
                                                 T eps, T floor)
{
    std::vector<std::vector<T>> analytic;
    {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        Tensor<T> value = loss();
        tape.backward(value, false);
        for (const auto& [name, t] : tensors) {
            auto g = tape.gradient(t);
            if (g.empty())
                analytic.emplace_back(t.size(), T(0));
            else
                analytic.emplace_back(g.begin(), g.end());
        }
    }
    std::vector<GradientCheckResult> results;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Tensor<T> target = tensors[k].second;
        std::vector<T> original(target.data().begin(), target.data().end());
        auto f = [&](const Tensor<T>& probe) {
            std::copy(probe.data().begin(), probe.data().end(), target.mutable_data().begin());
            return loss().item();
        };
        Tensor<T> numeric = finite_difference_gradient<T>(f, target, eps);
        std::copy(original.begin(), original.end(), target.mutable_data().begin());
        GradientCheckResult r{tensors[k].first,
                              static_cast<double>(relative_error<T>(analytic[k], numeric.data(), floor)),
                              target.size()};
        double worst_gap = -1;
        for (std::size_t i = 0; i < target.size(); ++i) {
            const double a = analytic[k][i], n = numeric.data()[i];
            r.peak = std::max({r.peak, std::abs(a), std::abs(n)});
            if (std::abs(a - n) > worst_gap) {
                worst_gap = std::abs(a - n);
                r.worst_index = i;
                r.analytic = a;
                r.numeric = n;
            }
        }
        results.push_back(r);
    }
    return results;
}

double kink_margin(const std::function<Tensor<double>()>& loss)
{
    KinkMonitor monitor;
    loss();
    return monitor.margin();
}

std::vector<GradientCheckResult> check_gradients_kink_safe(
    const std::function<Tensor<double>()>& loss, const std::vector<std::pair<std::string, Tensor<double>>>& tensors,
    const KinkSafeSettings& settings)
{
    const double step = std::min(settings.max_step, kink_margin(loss) / settings.safety);
    double total = 0;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> value = loss();
        tape.backward(value, false);
        for (const auto& [name, t] : tensors)
            for (double g : tape.gradient(t))
                total += g * g;
    }
    const double floor = std::max(settings.floor, settings.scale_floor * std::sqrt(total));
    return check_gradients<double>(loss, tensors, step, floor);
}

double worst_error(const std::vector<GradientCheckResult>& results)
{
    double worst = 0;
    for (const auto& r : results)
        worst = std::max(worst, r.relative_error);
    return worst;
}

template std::vector<GradientCheckResult> check_gradients(
    const std::function<Tensor<float>()>&, const std::vector<std::pair<std::string, Tensor<float>>>&, float, float);
template std::vector<GradientCheckResult> check_gradients(
    const std::function<Tensor<double>()>&, const std::vector<std::pair<std::string, Tensor<double>>>&, double,
    double);

template Tensor<float> finite_difference_gradient(const std::function<float(const Tensor<float>&)>&,
                                                  const Tensor<float>&, float);
template Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>&,
                                                   const Tensor<double>&, double);
template float ridders_derivative(const std::function<float(float)>&, float);
template double ridders_derivative(const std::function<double(double)>&, double);
template float relative_error(std::span<const float>, std::span<const float>, float);
template double relative_error(std::span<const double>, std::span<const double>, double);

}  // namespace gito
