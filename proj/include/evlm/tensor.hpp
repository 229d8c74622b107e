#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "evlm/errors.hpp"

namespace evlm {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated iff requires_grad
    bool requires_grad = false;
};

} // namespace detail

// Dense row-major float64 array with optional gradient buffer. Copies
// share the underlying node; all ops return fresh tensors and never
// mutate their inputs' values.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    /// Row-major 2-D convenience constructor for tests.
    static Tensor matrix(int rows, int cols, std::initializer_list<double> vals);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& value() { return node_->value; }
    double item() const;
    double at(std::initializer_list<int> idx) const;

    bool requires_grad() const { return node_->requires_grad; }
    /// Enables (or disables) gradient accumulation for this tensor.
    Tensor& set_requires_grad(bool on);
    const std::vector<double>& grad() const;
    std::vector<double>& grad();
    void zero_grad();

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Dynamic tape: ops executed while a tape is alive are recorded in
// execution order; backward() replays them once in reverse. One tape
// may be alive per thread at a time, and a tape accepts exactly one
// backward pass (a second call throws, by contract).
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Seeds d(loss)/d(loss) = 1 and sweeps the recorded ops in reverse.
    void backward(const Tensor& loss);

    size_t node_count() const { return records_.size(); }

    static Tape* active();
    void record(std::function<void()> backward_fn);

private:
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Output requires_grad iff any input does and a tape
// is active; gradients for inputs with requires_grad=false are skipped.

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
/// [... x d] + [d], bias broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Elementwise product, identical shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Copies [start, start+len) along axis.
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor max_over_axis(const Tensor& x, int axis);
/// Max-subtracted, rows along axis sum to 1.
Tensor softmax(const Tensor& x, int axis);
/// Normalizes the last axis to zero mean / unit variance, then applies
/// gain and bias (both shaped like the last axis). Epsilon 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
/// Rows of `table` selected by id: [V x D], ids -> [n x D].
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
/// Scalar sum of all entries.
Tensor sum_all(const Tensor& x);

/// Mean over unmasked rows of -log softmax(logits[t])[targets[t]].
/// logits is [T x V]; mask marks supervised rows; at least one required.
Tensor cross_entropy_with_logits(const Tensor& logits,
                                 const std::vector<int>& targets,
                                 const std::vector<uint8_t>& mask);

constexpr double kLayerNormEps = 1e-5;

} // namespace evlm
