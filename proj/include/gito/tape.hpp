#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gito/tensor.hpp"

namespace gito {

/// Records differentiable operations of one forward pass, in execution order,
/// and replays them in reverse to compute gradients.
///
/// Gradients live inside the tape until backward() finishes, at which point
/// leaf gradients are (optionally) accumulated into the leaf tensors. Keeping
/// them tape-local lets several threads run forward/backward over shared
/// parameters and merge the results afterwards.
template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;
    using BackwardFn = std::function<void(Tape&, std::span<const T> out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward);

    /// Mutable gradient accumulator for a node, zero-initialised on first use.
    std::vector<T>& grad(const TensorNode<T>* node);
    /// Gradient computed for `t` by the last backward(), empty if none.
    std::span<const T> gradient(const Tensor<T>& t) const;

    /// Reverse sweep from a scalar loss. Throws ShapeError on non-scalar loss.
    void backward(const Tensor<T>& loss, bool accumulate_into_leaves = true);

    /// Adds this tape's leaf gradients into the leaves' own grad buffers.
    void accumulate_into_leaves();

    void reset();
    std::size_t size() const noexcept { return ops_.size(); }

private:
    struct Op {
        std::vector<NodePtr> inputs;
        NodePtr output;
        BackwardFn backward;
    };

    std::vector<Op> ops_;
    std::unordered_map<const TensorNode<T>*, std::vector<T>> grads_;
    std::vector<NodePtr> leaves_;
    std::unordered_set<const TensorNode<T>*> leaf_set_;
};

/// The tape ops record into on the current thread, or nullptr.
template <typename T>
Tape<T>* active_tape() noexcept;

/// Installs a tape as the current thread's recording target for its lifetime.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Runs backward on the active tape and resets it. A loss that does not
/// require grad leaves every gradient untouched.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace gito
