#include "relbal/parameters.hpp"

#include "relbal/error.hpp"

namespace relbal {

Tensor& ParameterSet::add(std::string name, Tensor value, bool trainable) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    value.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return entries_.back().tensor;
}

Tensor& ParameterSet::get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
    return entries_[it->second].tensor;
}

const Tensor& ParameterSet::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
    return entries_[it->second].tensor;
}

bool ParameterSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

}  // namespace relbal
