#include "gito/tape.hpp"


namespace gito {

namespace {

template <typename T>
Tape<T>*& current_tape() noexcept
{
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

}  // namespace

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward)
{
    for (const auto& in : inputs) {
        if (in->is_leaf && in->requires_grad && leaf_set_.insert(in.get()).second)
            leaves_.push_back(in);
    }
    output->is_leaf = false;
    output->requires_grad = true;
    ops_.push_back(Op{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
std::vector<T>& Tape<T>::grad(const TensorNode<T>* node)
{
    auto& g = grads_[node];
    if (g.empty())
        g.assign(node->data.size(), T(0));
    return g;
}

template <typename T>
std::span<const T> Tape<T>::gradient(const Tensor<T>& t) const
{
    auto it = grads_.find(t.node());
    if (it == grads_.end())
        return {};
    return it->second;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss, bool accumulate)
{
    if (loss.size() != 1)
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    if (!loss.requires_grad())
        return;
    grad(loss.node())[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        auto found = grads_.find(it->output.get());
        if (found == grads_.end())
            continue;
        // unordered_map keeps element references stable across insertions.
        it->backward(*this, std::span<const T>(found->second));
    }
    if (accumulate)
        accumulate_into_leaves();
}

template <typename T>
void Tape<T>::accumulate_into_leaves()
{
    for (const auto& leaf : leaves_) {
        auto it = grads_.find(leaf.get());
        if (it == grads_.end())
            continue;
        if (leaf->grad.empty())
            leaf->grad.assign(leaf->data.size(), T(0));
        for (std::size_t i = 0; i < it->second.size(); ++i)
            leaf->grad[i] += it->second[i];
    }
}

template <typename T>
void Tape<T>::reset()
{
    ops_.clear();
    grads_.clear();
    leaves_.clear();
    leaf_set_.clear();
}

template <typename T>
Tape<T>* active_tape() noexcept
{
    return current_tape<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(current_tape<T>())
{
    current_tape<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope()
{
    current_tape<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss)
{
    if (loss.size() != 1)
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    auto* tape = active_tape<T>();
    if (tape == nullptr)
        return;
    tape->backward(loss, true);
    tape->reset();
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace gito
