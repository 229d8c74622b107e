#include "evlm/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "evlm/model.hpp"
#include "evlm/rng.hpp"
#include "evlm/tensor.hpp"

namespace evlm {

namespace {

constexpr double kStep = 1e-5;
constexpr double kLinearTol = 1e-6;
constexpr double kNonlinearTol = 1e-4;

using Forward = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(static_cast<size_t>(numel_of(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v));
}

double rel_err(const std::vector<double>& analytic, const std::vector<double>& fd) {
    double diff = 0.0, a_max = 0.0, f_max = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - fd[i]));
        a_max = std::max(a_max, std::abs(analytic[i]));
        f_max = std::max(f_max, std::abs(fd[i]));
    }
    return diff / std::max({1.0, a_max, f_max});
}

// Scalar objective: sum(out * w) with fixed random weights, so gradient
// directions vary across the output.
double objective(const Forward& fwd, const std::vector<Tensor>& inputs, const Tensor& w) {
    const Tensor out = fwd(inputs);
    double total = 0.0;
    for (size_t i = 0; i < out.value().size(); ++i) total += out.value()[i] * w.value()[i];
    return total;
}

// One random instance: analytic grads via the tape vs central differences
// on every element of every input. Returns the relative error.
double check_instance(Rng& rng, const std::vector<Tensor>& inputs, const Forward& fwd) {
    Tensor probe = fwd(inputs);
    Tensor w = random_tensor(rng, probe.shape(), -1.0, 1.0);

    std::vector<Tensor> tracked;
    tracked.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        Tensor t(in.shape(), in.value());
        t.set_requires_grad(true);
        tracked.push_back(t);
    }
    std::vector<double> analytic, fd;
    {
        Tape tape;
        Tensor out = fwd(tracked);
        Tensor loss = sum_all(mul(out, w));
        tape.backward(loss);
    }
    for (const Tensor& t : tracked) {
        analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
    }

    std::vector<Tensor> work;
    for (const Tensor& in : inputs) work.emplace_back(in.shape(), in.value());
    for (size_t i = 0; i < work.size(); ++i) {
        for (size_t j = 0; j < work[i].value().size(); ++j) {
            const double orig = work[i].value()[j];
            work[i].value()[j] = orig + kStep;
            const double up = objective(fwd, work, w);
            work[i].value()[j] = orig - kStep;
            const double down = objective(fwd, work, w);
            work[i].value()[j] = orig;
            fd.push_back((up - down) / (2.0 * kStep));
        }
    }
    return rel_err(analytic, fd);
}

struct OpCase {
    std::string name;
    bool linear = false;
    std::function<double(Rng&)> run; // one instance -> rel err
};

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;

    cases.push_back({"matmul", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) {
            return matmul(x[0], x[1]);
        });
    }});
    cases.push_back({"add", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 5}), random_tensor(rng, {3, 5})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return add(x[0], x[1]); });
    }});
    cases.push_back({"add_bias", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {4, 6}), random_tensor(rng, {6})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return add_bias(x[0], x[1]); });
    }});
    cases.push_back({"mul", false, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 5}), random_tensor(rng, {3, 5})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return mul(x[0], x[1]); });
    }});
    cases.push_back({"scale", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {2, 7})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return scale(x[0], -1.7); });
    }});
    cases.push_back({"transpose", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 5})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return transpose(x[0]); });
    }});
    cases.push_back({"reshape", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {2, 6})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return reshape(x[0], {3, 4}); });
    }});
    cases.push_back({"slice", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {4, 6})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return slice(x[0], 1, 2, 3); });
    }});
    cases.push_back({"concat", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {2, 3}), random_tensor(rng, {4, 3}),
                                  random_tensor(rng, {1, 3})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return concat(x, 0); });
    }});
    for (int axis = 0; axis < 3; ++axis) {
        cases.push_back({"mean_over_axis(" + std::to_string(axis) + ")", true, [axis](Rng& rng) {
            std::vector<Tensor> in = {random_tensor(rng, {2, 3, 4})};
            return check_instance(rng, in, [axis](const std::vector<Tensor>& x) {
                return mean_over_axis(x[0], axis);
            });
        }});
    }
    cases.push_back({"max_over_axis", false, [](Rng& rng) {
        // fd breaks at argmax ties; random reals never tie.
        std::vector<Tensor> in = {random_tensor(rng, {3, 4, 2})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return max_over_axis(x[0], 1); });
    }});
    cases.push_back({"softmax", false, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {4, 6})};
        return check_instance(rng, in,
                              [](const std::vector<Tensor>& x) { return softmax(x[0], 1); });
    }});
    cases.push_back({"layer_norm", false, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {5, 8}), random_tensor(rng, {8}, 0.5, 1.5),
                                  random_tensor(rng, {8}, -0.5, 0.5)};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) {
            return layer_norm(x[0], x[1], x[2]);
        });
    }});
    cases.push_back({"gelu", false, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {4, 5})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return gelu(x[0]); });
    }});
    cases.push_back({"embedding_gather", true, [](Rng& rng) {
        std::vector<int> ids;
        for (int i = 0; i < 6; ++i) ids.push_back(static_cast<int>(rng.below(9)));
        std::vector<Tensor> in = {random_tensor(rng, {9, 4})};
        return check_instance(rng, in, [ids](const std::vector<Tensor>& x) {
            return embedding_gather(x[0], ids);
        });
    }});
    cases.push_back({"sum_all", true, [](Rng& rng) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 4})};
        return check_instance(rng, in, [](const std::vector<Tensor>& x) { return sum_all(x[0]); });
    }});
    cases.push_back({"cross_entropy", false, [](Rng& rng) {
        const int rows = 5, vocab = 7;
        std::vector<int> targets;
        std::vector<uint8_t> mask;
        for (int i = 0; i < rows; ++i) {
            targets.push_back(static_cast<int>(rng.below(vocab)));
            mask.push_back(i == 2 ? 0 : 1);
        }
        std::vector<Tensor> in = {random_tensor(rng, {rows, vocab})};
        return check_instance(rng, in, [targets, mask](const std::vector<Tensor>& x) {
            return cross_entropy_with_logits(x[0], targets, mask);
        });
    }});
    return cases;
}

// ---------------------------------------------------------------------------
// End-to-end: masked loss through the whole model on a tiny config.

ModelConfig tiny_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.image_side = 16;
    cfg.patch_side = 8;
    cfg.enc_dim = 8;
    cfg.enc_depth = 1;
    cfg.enc_heads = 2;
    cfg.proj_hidden = 8;
    cfg.llm_dim = 16;
    cfg.llm_depth = 1;
    cfg.llm_heads = 2;
    cfg.max_seq = 64;
    cfg.num_bins = 2;
    cfg.init_seed = seed;
    return cfg;
}

double end_to_end_instance(Rng& rng, int probes_per_instance) {
    const ModelConfig cfg = tiny_config(rng.next_u64());
    ParamStore params = build_params(cfg);

    VoxelGrid grid;
    grid.num_bins = cfg.num_bins;
    grid.height = grid.width = cfg.image_side;
    grid.data = random_tensor(rng, {cfg.num_bins, 2, cfg.image_side, cfg.image_side}, 0.0, 4.0);

    const std::vector<int> prompt = tokenize("What shape?");
    const std::vector<int> answer = tokenize("A dot.");

    auto loss_value = [&]() {
        Tensor prefix = event_prefix(grid, params, cfg, true, true);
        AssembledSequence seq = assemble_sequence(prefix, prompt, answer, true, params, cfg);
        Tensor logits = forward_logits(seq.embedded, params, cfg);
        Tensor shifted = slice(logits, 0, 0, logits.dim(0) - 1);
        std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
        std::vector<uint8_t> mask(seq.supervised.begin() + 1, seq.supervised.end());
        return cross_entropy_with_logits(shifted, targets, mask);
    };

    std::vector<uint8_t> all(params.size(), 1);
    params.set_trainable(all);
    params.zero_grads();
    {
        Tape tape;
        Tensor loss = loss_value();
        tape.backward(loss);
    }

    std::vector<double> analytic, fd;
    for (int probe = 0; probe < probes_per_instance; ++probe) {
        const std::string& name = params.names()[rng.below(params.size())];
        Tensor& p = params.get(name);
        const size_t elem = rng.below(static_cast<uint64_t>(p.numel()));
        analytic.push_back(p.grad()[elem]);

        const double orig = p.value()[elem];
        p.value()[elem] = orig + kStep;
        const double up = loss_value().item();
        p.value()[elem] = orig - kStep;
        const double down = loss_value().item();
        p.value()[elem] = orig;
        fd.push_back((up - down) / (2.0 * kStep));
    }
    return rel_err(analytic, fd);
}

} // namespace

bool GradCheckReport::all_passed() const {
    for (const GradCheckEntry& e : entries) {
        if (!e.passed) return false;
    }
    return !entries.empty();
}

std::string GradCheckReport::to_text() const {
    std::ostringstream os;
    for (const GradCheckEntry& e : entries) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-22s max rel err %10.3e  (tol %7.0e, n=%d)  %s\n",
                      e.op.c_str(), e.max_rel_err, e.tolerance, e.instances,
                      e.passed ? "PASS" : "FAIL");
        os << buf;
    }
    return os.str();
}

GradCheckReport run_gradcheck(uint64_t seed, int instances_per_op) {
    GradCheckReport report;
    Rng rng(mix_seed(seed, 0x67726164));

    for (const OpCase& c : op_cases()) {
        GradCheckEntry entry;
        entry.op = c.name;
        entry.tolerance = c.linear ? kLinearTol : kNonlinearTol;
        entry.instances = instances_per_op;
        for (int i = 0; i < instances_per_op; ++i) {
            entry.max_rel_err = std::max(entry.max_rel_err, c.run(rng));
        }
        entry.passed = entry.max_rel_err < entry.tolerance;
        report.entries.push_back(entry);
    }

    GradCheckEntry e2e;
    e2e.op = "end_to_end_loss";
    e2e.tolerance = kNonlinearTol;
    e2e.instances = instances_per_op;
    for (int i = 0; i < instances_per_op; ++i) {
        e2e.max_rel_err = std::max(e2e.max_rel_err, end_to_end_instance(rng, 10));
    }
    e2e.passed = e2e.max_rel_err < e2e.tolerance;
    report.entries.push_back(e2e);
    return report;
}

} // namespace evlm
