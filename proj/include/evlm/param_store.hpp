#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "evlm/tensor.hpp"

namespace evlm {

// Named parameter container. Iteration follows registration order, which
// is fixed by the model builder, so every walk over the store (updates,
// hashing, serialization) is deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    void zero_grads();
    /// Sets requires_grad per parameter; `trainable` aligns with names().
    void set_trainable(const std::vector<uint8_t>& trainable);

    int64_t total_elements() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

} // namespace evlm
