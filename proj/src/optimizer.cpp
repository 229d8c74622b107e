#include "evlm/optimizer.hpp"

#include <cmath>

#include "evlm/errors.hpp"

namespace evlm {

void AdamW::step(ParamStore& params, const std::vector<std::string>& names) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));

    for (const std::string& name : names) {
        Tensor& p = params.get(name);
        const std::vector<double>& g = p.grad();
        for (double gv : g) {
            if (!std::isfinite(gv)) {
                throw NumericError("non-finite gradient for parameter '" + name + "' at step " +
                                   std::to_string(step_count_));
            }
        }
        Moments& st = moments_[name];
        if (st.m.empty()) {
            st.m.assign(g.size(), 0.0);
            st.v.assign(g.size(), 0.0);
        }
        std::vector<double>& pv = p.value();
        for (size_t i = 0; i < g.size(); ++i) {
            st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
            st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            pv[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * pv[i]);
        }
    }
}

double AdamW::clip_global_norm(ParamStore& params, const std::vector<std::string>& names,
                               double max_norm) {
    double sq = 0.0;
    for (const std::string& name : names) {
        for (double g : params.get(name).grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const std::string& name : names) {
            for (double& g : params.get(name).grad()) g *= s;
        }
    }
    return norm;
}

} // namespace evlm
