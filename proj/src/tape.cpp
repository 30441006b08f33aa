#include "relbal/tape.hpp"

#include "relbal/error.hpp"

namespace relbal {

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->value(id_);
}

const Tensor* Gradients::find(const Tensor& source) const {
    auto it = grads_.find(&source);
    return it == grads_.end() ? nullptr : &it->second;
}

void Gradients::insert(const Tensor* source, Tensor grad) {
    auto [it, inserted] = grads_.try_emplace(source, std::move(grad));
    if (!inserted) {
        // Same source registered twice on one tape: gradients add.
        auto dst = it->second.values();
        auto src = grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

Var Tape::leaf(const Tensor& source) {
    Node node;
    node.value = source;
    node.source = &source;
    node.needs_grad = source.requires_grad();
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const auto& p : parents) {
        if (p.tape() != this) throw ContractError("op mixes values from different tapes");
        node.needs_grad = node.needs_grad || nodes_[p.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
    return node.grad;
}

Gradients Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (value(loss.id()).size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_string(value(loss.id()).shape()));
    Gradients out;
    if (!nodes_[loss.id()].needs_grad) return out;

    grad(loss.id()).fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.needs_grad || node.grad.empty()) continue;
        if (node.backward) node.backward(*this, i);
    }
    for (auto& node : nodes_) {
        if (node.source && node.needs_grad && !node.grad.empty()) out.insert(node.source, node.grad);
    }
    return out;
}

void Tape::note_branch(std::uint64_t decision) noexcept {
    if (!track_branches_) return;
    branch_signature_ ^= decision + 0x9e3779b97f4a7c15ULL;
    branch_signature_ *= 1099511628211ULL;
}

}  // namespace relbal
