#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "evlm/param_store.hpp"

namespace evlm {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled
};

// AdamW with decoupled weight decay. Moment buffers exist only for the
// parameter names passed to step(); the step counter advances once per
// step() call.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    /// Applies one update to `names` (in the given order) using the
    /// gradients currently accumulated on the parameters.
    void step(ParamStore& params, const std::vector<std::string>& names);

    /// Rescales gradients of `names` so their global L2 norm is at most
    /// `max_norm`. Returns the pre-clip norm.
    static double clip_global_norm(ParamStore& params, const std::vector<std::string>& names,
                                   double max_norm);

    int64_t step_count() const { return step_count_; }
    bool has_state(const std::string& name) const { return moments_.count(name) > 0; }
    size_t state_size() const { return moments_.size(); }
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamWConfig cfg_;
    int64_t step_count_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

} // namespace evlm
