#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evlm/errors.hpp"
#include "evlm/tensor.hpp"
#include "support/gradcheck_util.hpp"

using namespace evlm;
using testutil::gradcheck_sum;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor out = matmul(eye, a);
    CHECK(out.value() == a.value());

    Tensor row = Tensor::matrix(1, 2, {1, 2});
    Tensor col = Tensor::matrix(2, 1, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences on 3x4 . 4x2") {
    Rng rng(42);
    for (int i = 0; i < 5; ++i) {
        std::vector<Tensor> in = {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})};
        const double err = gradcheck_sum(in, [](const std::vector<Tensor>& x) {
            return matmul(x[0], x[1]);
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("mean_over_axis hand case, constant case, gradients") {
    Tensor x = Tensor::matrix(2, 2, {1, 3, 5, 7});
    Tensor m0 = mean_over_axis(x, 0);
    CHECK(m0.value() == std::vector<double>{3, 5});

    Tensor c = Tensor::full({3, 4}, 2.5);
    Tensor mc = mean_over_axis(c, 1);
    CHECK(mc.shape() == Shape{3});
    for (double v : mc.value()) CHECK(v == doctest::Approx(2.5));

    Rng rng(7);
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<Tensor> in = {random_tensor(rng, {2, 3, 4})};
        const double err = gradcheck_sum(in, [axis](const std::vector<Tensor>& x) {
            return mean_over_axis(x[0], axis);
        });
        CHECK(err < 1e-6);
    }
    CHECK_THROWS_AS(mean_over_axis(x, 2), IndexError);
}

TEST_CASE("concat basics and identity") {
    Tensor a = Tensor::matrix(1, 2, {3, 5});
    Tensor b = Tensor::matrix(1, 2, {2, 6});
    Tensor out = concat({a, b}, 0);
    CHECK(out.shape() == Shape{2, 2});
    CHECK(out.value() == std::vector<double>{3, 5, 2, 6});

    Tensor single = concat({a}, 0);
    CHECK(single.value() == a.value());

    Tensor c = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(concat({a, c}, 0), ShapeError);
}

TEST_CASE("concat round-trip: slicing at recorded offsets recovers inputs bit-exactly") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int axis = static_cast<int>(rng.below(2));
        const int other = 1 + static_cast<int>(rng.below(4));
        std::vector<Tensor> parts;
        std::vector<int> lens;
        const int n_parts = 2 + static_cast<int>(rng.below(3));
        for (int i = 0; i < n_parts; ++i) {
            const int len = 1 + static_cast<int>(rng.below(4));
            lens.push_back(len);
            Shape shape = axis == 0 ? Shape{len, other} : Shape{other, len};
            parts.push_back(random_tensor(rng, shape));
        }
        Tensor whole = concat(parts, axis);
        int offset = 0;
        for (int i = 0; i < n_parts; ++i) {
            Tensor back = slice(whole, axis, offset, lens[static_cast<size_t>(i)]);
            CHECK(back.value() == parts[static_cast<size_t>(i)].value());
            offset += lens[static_cast<size_t>(i)];
        }
    }
}

TEST_CASE("softmax symmetry, simplex, stability") {
    Tensor x = Tensor({3}, {0, 0, 0});
    Tensor y = softmax(x, 0);
    for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3.0));

    Rng rng(9);
    Tensor big = random_tensor(rng, {6, 5}, -500.0, 500.0);
    Tensor sm = softmax(big, 1);
    for (int r = 0; r < 6; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 5; ++c) {
            const double v = sm.at({r, c});
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("layer_norm zero-variance row and pre-affine moments") {
    Tensor x = Tensor::full({1, 8}, 3.0);
    Tensor g = Tensor::full({8}, 1.0);
    Tensor b = Tensor::zeros({8});
    Tensor y = layer_norm(x, g, b);
    for (double v : y.value()) CHECK(std::abs(v) < 1e-6);

    Rng rng(11);
    Tensor r = random_tensor(rng, {4, 64}, -3.0, 3.0);
    Tensor yn = layer_norm(r, Tensor::full({64}, 1.0), Tensor::zeros({64}));
    for (int row = 0; row < 4; ++row) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 64; ++j) mean += yn.at({row, j});
        mean /= 64.0;
        for (int j = 0; j < 64; ++j) {
            const double cc = yn.at({row, j}) - mean;
            var += cc * cc;
        }
        var /= 64.0;
        CHECK(std::abs(mean) < 1e-7);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("gelu endpoints and gradient") {
    Tensor x = Tensor({3}, {-10.0, 0.0, 10.0});
    Tensor y = gelu(x);
    CHECK(y.value()[0] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == doctest::Approx(10.0).epsilon(1e-8));

    Rng rng(13);
    std::vector<Tensor> in = {random_tensor(rng, {4, 5})};
    CHECK(gradcheck_sum(in, [](const std::vector<Tensor>& t) { return gelu(t[0]); }) < 1e-4);
}

TEST_CASE("embedding_gather values and id range") {
    Tensor table = Tensor::matrix(3, 2, {0, 1, 10, 11, 20, 21});
    Tensor out = embedding_gather(table, {2, 0});
    CHECK(out.value() == std::vector<double>{20, 21, 0, 1});
    CHECK_THROWS_WITH_AS(embedding_gather(table, {3}), doctest::Contains("vocabulary"), IndexError);
}

TEST_CASE("transpose, reshape, slice gradients") {
    Rng rng(17);
    std::vector<Tensor> a = {random_tensor(rng, {3, 5})};
    CHECK(gradcheck_sum(a, [](const std::vector<Tensor>& t) { return transpose(t[0]); }) < 1e-6);
    CHECK(gradcheck_sum(a, [](const std::vector<Tensor>& t) { return reshape(t[0], {5, 3}); }) < 1e-6);
    CHECK(gradcheck_sum(a, [](const std::vector<Tensor>& t) { return slice(t[0], 1, 1, 3); }) < 1e-6);
}

TEST_CASE("cross entropy: uniform logits give ln V") {
    const int v = 256;
    Tensor logits = Tensor::zeros({4, v});
    Tensor loss = cross_entropy_with_logits(logits, {7, 99, 0, 255}, {1, 1, 1, 1});
    CHECK(loss.item() == doctest::Approx(std::log(256.0)).epsilon(1e-12));
    CHECK(loss.item() == doctest::Approx(5.5452).epsilon(1e-4));
}

TEST_CASE("cross entropy: one-hot margin limit") {
    const int v = 9;
    std::vector<double> row(v, 0.0);
    row[4] = 20.0; // margin 20 on the correct class
    Tensor logits = Tensor({1, v}, row);
    Tensor loss = cross_entropy_with_logits(logits, {4}, {1});
    CHECK(loss.item() < 1e-3);
}

TEST_CASE("cross entropy vs independent log-sum-exp oracle, value and gradient") {
    Rng rng(23);
    Tensor logits = random_tensor(rng, {5, 7});
    std::vector<int> targets = {3, 0, 6, 2, 5};
    std::vector<uint8_t> mask = {1, 1, 0, 1, 1};

    // Direct oracle expression, written independently of the op.
    int m_count = 0;
    for (uint8_t m : mask) {
        if (m) ++m_count;
    }
    double expected = 0.0;
    std::vector<double> grad_oracle(5 * 7, 0.0);
    for (int t = 0; t < 5; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        double lse = 0.0;
        for (int j = 0; j < 7; ++j) lse += std::exp(logits.at({t, j}));
        lse = std::log(lse);
        expected += lse - logits.at({t, targets[static_cast<size_t>(t)]});
        for (int j = 0; j < 7; ++j) {
            grad_oracle[static_cast<size_t>(t * 7 + j)] =
                (std::exp(logits.at({t, j}) - lse) -
                 (j == targets[static_cast<size_t>(t)] ? 1.0 : 0.0)) /
                m_count;
        }
    }
    expected /= m_count;

    Tensor tracked(logits.shape(), logits.value());
    tracked.set_requires_grad(true);
    double got = 0.0;
    {
        Tape tape;
        Tensor loss = cross_entropy_with_logits(tracked, targets, mask);
        got = loss.item();
        tape.backward(loss);
    }
    CHECK(std::abs(got - expected) < 1e-8);
    for (size_t i = 0; i < grad_oracle.size(); ++i) {
        CHECK(std::abs(tracked.grad()[i] - grad_oracle[i]) < 1e-8);
    }
}

TEST_CASE("cross entropy error paths") {
    Tensor logits = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, {0, 1}, {0, 0}), NumericError);
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, {0, 9}, {1, 1}), IndexError);
}

TEST_CASE("backward twice without re-forward is rejected") {
    Tensor x = Tensor::scalar(2.0);
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = scale(x, 3.0);
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("backward never mutates forward values") {
    Rng rng(31);
    Tensor x = random_tensor(rng, {4, 4});
    x.set_requires_grad(true);
    std::vector<double> x_before = x.value();
    std::vector<double> y_value;
    {
        Tape tape;
        Tensor y = softmax(matmul(x, x), 1);
        y_value = y.value();
        Tensor loss = sum_all(mul(y, y));
        tape.backward(loss);
        CHECK(y.value() == y_value);
    }
    CHECK(x.value() == x_before);
}

TEST_CASE("ops are pure: same inputs give bit-identical outputs") {
    Rng rng(37);
    Tensor a = random_tensor(rng, {6, 6});
    Tensor b = random_tensor(rng, {6, 6});
    CHECK(matmul(a, b).value() == matmul(a, b).value());
    CHECK(softmax(a, 1).value() == softmax(a, 1).value());
    CHECK(gelu(b).value() == gelu(b).value());
}

TEST_CASE("only one tape may be active per thread") {
    Tape tape;
    CHECK_THROWS_AS(Tape(), Error);
}

TEST_CASE("max_over_axis routes gradient to the argmax") {
    Tensor x = Tensor::matrix(2, 3, {1, 9, 2, 8, 3, 4});
    Tensor tracked(x.shape(), x.value());
    tracked.set_requires_grad(true);
    Tensor y;
    {
        Tape tape;
        y = max_over_axis(tracked, 1);
        tape.backward(sum_all(y));
    }
    CHECK(y.value() == std::vector<double>{9, 8});
    CHECK(tracked.grad() == std::vector<double>{0, 1, 0, 1, 0, 0});
}
