#pragma once

// Shared finite-difference helpers for unit tests. Central differences
// with h = 1e-5 at float64; only forward passes run on the oracle side.

#include <cmath>
#include <functional>
#include <vector>

#include "evlm/rng.hpp"
#include "evlm/tensor.hpp"

namespace testutil {

inline evlm::Tensor random_tensor(evlm::Rng& rng, const evlm::Shape& shape, double lo = -2.0,
                                  double hi = 2.0) {
    std::vector<double> v(static_cast<size_t>(evlm::numel_of(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return evlm::Tensor(shape, std::move(v));
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& f) {
    double diff = 0.0, am = 0.0, fm = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - f[i]));
        am = std::max(am, std::abs(a[i]));
        fm = std::max(fm, std::abs(f[i]));
    }
    return diff / std::max({1.0, am, fm});
}

/// Analytic grads (tape) vs central differences of sum(out) over every
/// input element; returns the relative error.
inline double gradcheck_sum(const std::vector<evlm::Tensor>& inputs,
                            const std::function<evlm::Tensor(const std::vector<evlm::Tensor>&)>& fwd,
                            double h = 1e-5) {
    std::vector<evlm::Tensor> tracked;
    for (const evlm::Tensor& in : inputs) {
        evlm::Tensor t(in.shape(), in.value());
        t.set_requires_grad(true);
        tracked.push_back(t);
    }
    std::vector<double> analytic;
    {
        evlm::Tape tape;
        evlm::Tensor loss = evlm::sum_all(fwd(tracked));
        tape.backward(loss);
    }
    for (const evlm::Tensor& t : tracked) {
        analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
    }

    std::vector<evlm::Tensor> work;
    for (const evlm::Tensor& in : inputs) work.emplace_back(in.shape(), in.value());
    auto value = [&]() {
        double s = 0.0;
        for (double v : fwd(work).value()) s += v;
        return s;
    };
    std::vector<double> fd;
    for (auto& w : work) {
        for (size_t j = 0; j < w.value().size(); ++j) {
            const double orig = w.value()[j];
            w.value()[j] = orig + h;
            const double up = value();
            w.value()[j] = orig - h;
            const double down = value();
            w.value()[j] = orig;
            fd.push_back((up - down) / (2.0 * h));
        }
    }
    return rel_err(analytic, fd);
}

} // namespace testutil
