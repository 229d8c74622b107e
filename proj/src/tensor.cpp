#include "evlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace evlm {

int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
}

// Splits a shape around `axis` into (outer, len, inner) strides.
struct AxisSplit {
    int64_t outer = 1;
    int64_t len = 1;
    int64_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    s.len = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

// C[m x n] += or = A[m x k] . B[k x n]; all row-major contiguous.
void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
              bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            const double* bk = b + kk * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

// dA[m x k] += dC[m x n] . B^T. B is transposed up front so the inner
// loop streams contiguously (a row-dot formulation defeats the
// vectorizer, which may not reassociate float reductions).
void gemm_abt_acc(const double* dc, const double* b, double* da, int64_t m, int64_t k, int64_t n) {
    std::vector<double> bt(static_cast<size_t>(k * n));
    for (int64_t kk = 0; kk < k; ++kk) {
        for (int64_t j = 0; j < n; ++j) bt[static_cast<size_t>(j * k + kk)] = b[kk * n + j];
    }
    for (int64_t i = 0; i < m; ++i) {
        const double* dci = dc + i * n;
        double* dai = da + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double dv = dci[j];
            if (dv == 0.0) continue;
            const double* btj = bt.data() + j * k;
            for (int64_t kk = 0; kk < k; ++kk) dai[kk] += dv * btj[kk];
        }
    }
}

// dB[k x n] += A^T . dC  (row axpy).
void gemm_atb_acc(const double* a, const double* dc, double* db, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* dci = dc + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            double* dbk = db + kk * n;
            for (int64_t j = 0; j < n; ++j) dbk[j] += av * dci[j];
        }
    }
}

bool grads_wanted(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data) {
    check_shape_valid(shape);
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

Tensor Tensor::zeros(Shape shape) {
    check_shape_valid(shape);
    const int64_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
    check_shape_valid(shape);
    const int64_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::matrix(int rows, int cols, std::initializer_list<double> vals) {
    return Tensor(Shape{rows, cols}, std::vector<double>(vals));
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw IndexError("index rank mismatch for shape " + shape_str(shape()));
    }
    int64_t flat = 0;
    size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= node_->shape[k]) throw IndexError("index out of range");
        flat = flat * node_->shape[k] + i;
        ++k;
    }
    return node_->value[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->value.size()) {
        node_->grad.assign(node_->value.size(), 0.0);
    }
    if (!on) node_->grad.clear();
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_->requires_grad) throw Error("grad() on tensor without requires_grad");
    return node_->grad;
}

std::vector<double>& Tensor::grad() {
    if (!node_->requires_grad) throw Error("grad() on tensor without requires_grad");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    if (g_active_tape != nullptr) throw Error("a tape is already active on this thread");
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw Error("backward already run on this tape; re-run the forward pass");
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw Error("loss does not require grad; nothing recorded");
    consumed_ = true;
    loss.node()->grad[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

namespace {

// Marks the output differentiable and registers the node.
void record_op(Tensor& out, std::function<void()> backward_fn) {
    out.set_requires_grad(true);
    Tape::active()->record(std::move(backward_fn));
}

} // namespace

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul needs rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({static_cast<int>(m), static_cast<int>(n)});
    gemm_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n, false);

    if (grads_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        record_op(out, [an, bn, on = out.node(), m, k, n]() {
            if (an->requires_grad) gemm_abt_acc(on->grad.data(), bn->value.data(), an->grad.data(), m, k, n);
            if (bn->requires_grad) gemm_atb_acc(an->value.data(), on->grad.data(), bn->grad.data(), m, k, n);
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];

    if (grads_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        record_op(out, [an, bn, on = out.node(), n]() {
            if (an->requires_grad)
                for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != bias.dim(0)) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
    }
    const int64_t d = bias.dim(0);
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.value().data() + r * d;
        double* or_ = out.value().data() + r * d;
        const double* bv = bias.value().data();
        for (int64_t j = 0; j < d; ++j) or_[j] = xr[j] + bv[j];
    }

    if (grads_wanted({&x, &bias})) {
        auto xn = x.node(), bn = bias.node();
        record_op(out, [xn, bn, on = out.node(), rows, d]() {
            if (xn->requires_grad) {
                for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                for (int64_t r = 0; r < rows; ++r) {
                    const double* gr = on->grad.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += gr[j];
                }
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];

    if (grads_wanted({&a, &b})) {
        auto an = a.node(), bn = b.node();
        record_op(out, [an, bn, on = out.node(), n]() {
            if (an->requires_grad)
                for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
            if (bn->requires_grad)
                for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    const size_t n = x.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = x.value()[i] * s;

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), s, n]() {
            for (size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * s;
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose needs rank-2 input, got " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(n), static_cast<int>(m)});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out.value()[static_cast<size_t>(j * m + i)] = x.value()[static_cast<size_t>(i * n + j)];

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), m, n]() {
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    xn->grad[static_cast<size_t>(i * n + j)] += on->grad[static_cast<size_t>(j * m + i)];
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape_valid(shape);
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    Tensor out(shape, x.value());

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node()]() {
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const AxisSplit s = split_axis(x.shape(), axis);
    if (start < 0 || len <= 0 || start + len > s.len) {
        throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    for (int64_t o = 0; o < s.outer; ++o) {
        const double* src = x.value().data() + (o * s.len + start) * s.inner;
        double* dst = out.value().data() + o * len * s.inner;
        std::copy(src, src + static_cast<int64_t>(len) * s.inner, dst);
    }

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), s, start, len]() {
            for (int64_t o = 0; o < s.outer; ++o) {
                double* dst = xn->grad.data() + (o * s.len + start) * s.inner;
                const double* src = on->grad.data() + o * len * s.inner;
                for (int64_t i = 0; i < static_cast<int64_t>(len) * s.inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat of zero tensors");
    const Shape& ref = xs[0].shape();
    int total = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != static_cast<int>(ref.size())) {
            throw ShapeError("concat rank mismatch: " + shape_str(ref) + " vs " + shape_str(t.shape()));
        }
        for (int i = 0; i < t.rank(); ++i) {
            if (i != axis && t.dim(i) != ref[static_cast<size_t>(i)]) {
                throw ShapeError("concat off-axis mismatch at axis " + std::to_string(i) + ": " +
                                 shape_str(ref) + " vs " + shape_str(t.shape()));
            }
        }
        total += t.dim(axis);
    }
    const AxisSplit s = split_axis(ref, axis);
    Shape out_shape = ref;
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::zeros(out_shape);

    int offset = 0;
    for (const Tensor& t : xs) {
        const int len = t.dim(axis);
        for (int64_t o = 0; o < s.outer; ++o) {
            const double* src = t.value().data() + o * len * s.inner;
            double* dst = out.value().data() + (o * total + offset) * s.inner;
            std::copy(src, src + static_cast<int64_t>(len) * s.inner, dst);
        }
        offset += len;
    }

    bool any_grad = false;
    for (const Tensor& t : xs)
        if (t.requires_grad()) any_grad = true;
    if (Tape::active() != nullptr && any_grad) {
        std::vector<std::shared_ptr<detail::TensorNode>> ins;
        std::vector<int> lens;
        for (const Tensor& t : xs) {
            ins.push_back(t.node());
            lens.push_back(t.dim(axis));
        }
        record_op(out, [ins, lens, on = out.node(), s, total]() {
            int off = 0;
            for (size_t idx = 0; idx < ins.size(); ++idx) {
                const int len = lens[idx];
                if (ins[idx]->requires_grad) {
                    for (int64_t o = 0; o < s.outer; ++o) {
                        const double* src = on->grad.data() + (o * total + off) * s.inner;
                        double* dst = ins[idx]->grad.data() + o * len * s.inner;
                        for (int64_t i = 0; i < static_cast<int64_t>(len) * s.inner; ++i) dst[i] += src[i];
                    }
                }
                off += len;
            }
        });
    }
    return out;
}

Tensor mean_over_axis(const Tensor& x, int axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);

    const double inv = 1.0 / static_cast<double>(s.len);
    for (int64_t o = 0; o < s.outer; ++o) {
        double* dst = out.value().data() + o * s.inner;
        for (int64_t t = 0; t < s.len; ++t) {
            const double* src = x.value().data() + (o * s.len + t) * s.inner;
            for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
        for (int64_t i = 0; i < s.inner; ++i) dst[i] *= inv;
    }

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), s, inv]() {
            for (int64_t o = 0; o < s.outer; ++o) {
                const double* src = on->grad.data() + o * s.inner;
                for (int64_t t = 0; t < s.len; ++t) {
                    double* dst = xn->grad.data() + (o * s.len + t) * s.inner;
                    for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i] * inv;
                }
            }
        });
    }
    return out;
}

Tensor max_over_axis(const Tensor& x, int axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);

    // argmax recorded for the backward route; first maximum wins ties.
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(s.outer * s.inner), 0);
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
            double best = x.value()[static_cast<size_t>((o * s.len) * s.inner + i)];
            int64_t best_t = 0;
            for (int64_t t = 1; t < s.len; ++t) {
                const double v = x.value()[static_cast<size_t>((o * s.len + t) * s.inner + i)];
                if (v > best) {
                    best = v;
                    best_t = t;
                }
            }
            out.value()[static_cast<size_t>(o * s.inner + i)] = best;
            (*arg)[static_cast<size_t>(o * s.inner + i)] = best_t;
        }
    }

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), s, arg]() {
            for (int64_t o = 0; o < s.outer; ++o) {
                for (int64_t i = 0; i < s.inner; ++i) {
                    const int64_t t = (*arg)[static_cast<size_t>(o * s.inner + i)];
                    xn->grad[static_cast<size_t>((o * s.len + t) * s.inner + i)] +=
                        on->grad[static_cast<size_t>(o * s.inner + i)];
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t t = 0; t < s.len; ++t)
                m = std::max(m, x.value()[static_cast<size_t>((o * s.len + t) * s.inner + i)]);
            double z = 0.0;
            for (int64_t t = 0; t < s.len; ++t) {
                const double e = std::exp(x.value()[static_cast<size_t>((o * s.len + t) * s.inner + i)] - m);
                out.value()[static_cast<size_t>((o * s.len + t) * s.inner + i)] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (int64_t t = 0; t < s.len; ++t)
                out.value()[static_cast<size_t>((o * s.len + t) * s.inner + i)] *= inv;
        }
    }

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), s]() {
            for (int64_t o = 0; o < s.outer; ++o) {
                for (int64_t i = 0; i < s.inner; ++i) {
                    double dot = 0.0;
                    for (int64_t t = 0; t < s.len; ++t) {
                        const size_t idx = static_cast<size_t>((o * s.len + t) * s.inner + i);
                        dot += on->grad[idx] * on->value[idx];
                    }
                    for (int64_t t = 0; t < s.len; ++t) {
                        const size_t idx = static_cast<size_t>((o * s.len + t) * s.inner + i);
                        xn->grad[idx] += on->value[idx] * (on->grad[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
    const int64_t d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    // Normalized rows and inverse stddevs are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(x.value().size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.value().data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        double* hr = xhat->data() + r * d;
        double* or_ = out.value().data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            or_[j] = hr[j] * gain.value()[static_cast<size_t>(j)] + bias.value()[static_cast<size_t>(j)];
        }
    }

    if (grads_wanted({&x, &gain, &bias})) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        record_op(out, [xn, gn, bn, on = out.node(), xhat, inv_std, rows, d]() {
            for (int64_t r = 0; r < rows; ++r) {
                const double* go = on->grad.data() + r * d;
                const double* hr = xhat->data() + r * d;
                if (gn->requires_grad || bn->requires_grad) {
                    for (int64_t j = 0; j < d; ++j) {
                        if (gn->requires_grad) gn->grad[static_cast<size_t>(j)] += go[j] * hr[j];
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += go[j];
                    }
                }
                if (xn->requires_grad) {
                    // dxhat = go * gain; dx = inv/d * (d*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dh = go[j] * gn->value[static_cast<size_t>(j)];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    const double inv = (*inv_std)[static_cast<size_t>(r)];
                    double* gx = xn->grad.data() + r * d;
                    const double invd = inv / static_cast<double>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const double dh = go[j] * gn->value[static_cast<size_t>(j)];
                        gx[j] += invd * (static_cast<double>(d) * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const size_t n = x.value().size();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < n; ++i) {
        const double v = x.value()[i];
        out.value()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node(), n]() {
            constexpr double kInvSqrt2Pi = 0.39894228040143267794;
            for (size_t i = 0; i < n; ++i) {
                const double v = xn->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                xn->grad[i] += on->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape()));
    if (ids.empty()) throw ShapeError("embedding_gather with empty id list");
    const int v = table.dim(0), d = table.dim(1);
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= v) {
            throw IndexError("id " + std::to_string(ids[r]) + " at position " + std::to_string(r) +
                             " outside vocabulary of size " + std::to_string(v));
        }
    }
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r) {
        const double* src = table.value().data() + static_cast<int64_t>(ids[r]) * d;
        std::copy(src, src + d, out.value().data() + static_cast<int64_t>(r) * d);
    }

    if (grads_wanted({&table})) {
        auto tn = table.node();
        record_op(out, [tn, on = out.node(), ids, d]() {
            for (size_t r = 0; r < ids.size(); ++r) {
                double* dst = tn->grad.data() + static_cast<int64_t>(ids[r]) * d;
                const double* src = on->grad.data() + static_cast<int64_t>(r) * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double total = 0.0;
    for (double v : x.value()) total += v;
    Tensor out = Tensor::scalar(total);

    if (grads_wanted({&x})) {
        auto xn = x.node();
        record_op(out, [xn, on = out.node()]() {
            const double g = on->grad[0];
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
    }
    return out;
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& mask) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects [T x V] logits, got " + shape_str(logits.shape()));
    const int64_t t_len = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != t_len || static_cast<int64_t>(mask.size()) != t_len) {
        throw ShapeError("cross_entropy: targets/mask length must equal " + std::to_string(t_len));
    }
    int64_t supervised = 0;
    for (int64_t t = 0; t < t_len; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        ++supervised;
        if (targets[static_cast<size_t>(t)] < 0 || targets[static_cast<size_t>(t)] >= v) {
            throw IndexError("target id " + std::to_string(targets[static_cast<size_t>(t)]) +
                             " at position " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(v));
        }
    }
    if (supervised == 0) throw NumericError("cross_entropy on a fully masked batch");

    double total = 0.0;
    for (int64_t t = 0; t < t_len; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        const double* row = logits.value().data() + t * v;
        double m = row[0];
        for (int64_t j = 1; j < v; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
        total += (m + std::log(z)) - row[targets[static_cast<size_t>(t)]];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(supervised));

    if (grads_wanted({&logits})) {
        auto ln = logits.node();
        record_op(out, [ln, on = out.node(), targets, mask, t_len, v, supervised]() {
            const double g = on->grad[0] / static_cast<double>(supervised);
            for (int64_t t = 0; t < t_len; ++t) {
                if (!mask[static_cast<size_t>(t)]) continue;
                const double* row = ln->value.data() + t * v;
                double* grow = ln->grad.data() + t * v;
                double m = row[0];
                for (int64_t j = 1; j < v; ++j) m = std::max(m, row[j]);
                double z = 0.0;
                for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
                const double inv = 1.0 / z;
                for (int64_t j = 0; j < v; ++j) grow[j] += g * std::exp(row[j] - m) * inv;
                grow[targets[static_cast<size_t>(t)]] -= g;
            }
        });
    }
    return out;
}

} // namespace evlm
