#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evlm/errors.hpp"
#include "evlm/optimizer.hpp"
#include "evlm/rng.hpp"

using namespace evlm;

namespace {

ParamStore one_param(double value) {
    ParamStore p;
    Tensor t = Tensor::scalar(value);
    t.set_requires_grad(true);
    p.add("w", std::move(t));
    return p;
}

} // namespace

TEST_CASE("zero gradient and zero weight decay leave parameters unchanged") {
    ParamStore p = one_param(1.25);
    AdamW opt(AdamWConfig{});
    for (int i = 0; i < 3; ++i) opt.step(p, {"w"});
    CHECK(p.get("w").item() == 1.25);
}

TEST_CASE("first step with constant gradient 1 moves by about -lr (bias corrected)") {
    ParamStore p = one_param(0.0);
    p.get("w").grad()[0] = 1.0;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    AdamW opt(cfg);
    opt.step(p, {"w"});
    // mhat = 1, vhat = 1 after bias correction, so the step is lr/(1+eps).
    CHECK(p.get("w").item() == doctest::Approx(-0.1).epsilon(1e-7));
}

TEST_CASE("two identical runs are bit-identical after 100 steps") {
    auto run = []() {
        ParamStore p = one_param(0.5);
        Tensor extra = Tensor({4}, {0.1, -0.2, 0.3, -0.4});
        extra.set_requires_grad(true);
        p.add("m", std::move(extra));
        AdamWConfig cfg;
        cfg.lr = 1e-2;
        cfg.weight_decay = 0.01;
        AdamW opt(cfg);
        Rng rng(99);
        for (int step = 0; step < 100; ++step) {
            p.get("w").grad()[0] = rng.normal();
            for (double& g : p.get("m").grad()) g = rng.normal();
            opt.step(p, {"w", "m"});
        }
        std::vector<double> out = p.get("m").value();
        out.push_back(p.get("w").item());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("non-finite gradient aborts with the parameter name") {
    ParamStore p = one_param(0.0);
    Tensor bad = Tensor::zeros({2});
    bad.set_requires_grad(true);
    p.add("m2", std::move(bad));
    p.get("m2").grad()[1] = std::nan("");
    AdamW opt(AdamWConfig{});
    CHECK_THROWS_WITH_AS(opt.step(p, {"w", "m2"}), doctest::Contains("m2"), NumericError);
}

TEST_CASE("moment buffers exist only for stepped parameters") {
    ParamStore p = one_param(0.0);
    p.add("frozen", Tensor::zeros({3}));
    AdamW opt(AdamWConfig{});
    opt.step(p, {"w"});
    CHECK(opt.has_state("w"));
    CHECK_FALSE(opt.has_state("frozen"));
    CHECK(opt.state_size() == 1);
}

TEST_CASE("step counter advances once per apply") {
    ParamStore p = one_param(0.0);
    AdamW opt(AdamWConfig{});
    CHECK(opt.step_count() == 0);
    opt.step(p, {"w"});
    opt.step(p, {"w"});
    CHECK(opt.step_count() == 2);
}

TEST_CASE("global norm clipping rescales to the bound") {
    ParamStore p;
    Tensor a = Tensor({2}, {3.0, 0.0});
    a.set_requires_grad(true);
    a.grad() = {3.0, 0.0};
    Tensor b = Tensor({1}, {4.0});
    b.set_requires_grad(true);
    b.grad() = {4.0};
    p.add("a", std::move(a));
    p.add("b", std::move(b));
    const double pre_norm = AdamW::clip_global_norm(p, {"a", "b"}, 1.0);
    CHECK(pre_norm == doctest::Approx(5.0));
    double sq = 0.0;
    for (double g : p.get("a").grad()) sq += g * g;
    for (double g : p.get("b").grad()) sq += g * g;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0));
}
