#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "relbal/tensor.hpp"

namespace relbal {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Gradients produced by Tape::backward, keyed by the source tensor that was
// registered with Tape::leaf. Leaves that do not require grad, or that the
// loss does not reach, have no entry.
class Gradients {
public:
    const Tensor* find(const Tensor& source) const;
    bool contains(const Tensor& source) const { return find(source) != nullptr; }
    std::size_t size() const noexcept { return grads_.size(); }

    void insert(const Tensor* source, Tensor grad);

private:
    std::unordered_map<const Tensor*, Tensor> grads_;
};

// Ordered record of executed primitive ops. Replaying it in reverse yields
// the gradient of a scalar loss with respect to every reachable leaf.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Gradient is attributed to `source` when source.requires_grad() is set.
    Var leaf(const Tensor& source);
    Var constant(Tensor value);
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
    Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
    // Zero-initialised on first access.
    Tensor& grad(std::size_t id);
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    Gradients backward(Var loss);
    std::size_t size() const noexcept { return nodes_.size(); }

    // Non-differentiable ops (relu, clamps, min selection) fold their branch
    // decisions into a signature when tracking is on. Finite-difference checks
    // compare signatures to detect a perturbation that crossed a kink.
    void track_branches(bool on) noexcept { track_branches_ = on; }
    bool tracking_branches() const noexcept { return track_branches_; }
    void note_branch(std::uint64_t decision) noexcept;
    std::uint64_t branch_signature() const noexcept { return branch_signature_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        const Tensor* source = nullptr;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool track_branches_ = false;
    std::uint64_t branch_signature_ = 1469598103934665603ULL;
};

}  // namespace relbal
