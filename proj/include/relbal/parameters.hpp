#pragma once

#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "relbal/tensor.hpp"

namespace relbal {

// Named tensors in insertion order. Trainable entries have requires_grad set;
// non-trainable entries are buffers (e.g. batch-norm running statistics).
// References stay valid while the set is alive.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    Tensor& add(std::string name, Tensor value, bool trainable = true);
    Tensor& get(std::string_view name);
    const Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;

    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

private:
    std::deque<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace relbal
