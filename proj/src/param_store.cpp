#include "evlm/param_store.hpp"

#include "evlm/errors.hpp"

namespace evlm {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    return tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return tensors_[it->second];
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const std::string& n : names_) {
        if (n.rfind(prefix, 0) == 0) out.push_back(n);
    }
    return out;
}

void ParamStore::zero_grads() {
    for (Tensor& t : tensors_) t.zero_grad();
}

void ParamStore::set_trainable(const std::vector<uint8_t>& trainable) {
    if (trainable.size() != tensors_.size()) {
        throw ConfigError("trainable mask size " + std::to_string(trainable.size()) +
                          " does not match parameter count " + std::to_string(tensors_.size()));
    }
    for (size_t i = 0; i < tensors_.size(); ++i) tensors_[i].set_requires_grad(trainable[i] != 0);
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.numel();
    return n;
}

} // namespace evlm
