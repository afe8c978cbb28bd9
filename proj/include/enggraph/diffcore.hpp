#pragma once

// Reverse-mode differentiable dense arrays on a recording tape, plus Adam.
//
// Every tensor is a row-major float64 array. Most kernels treat a tensor as a
// matrix with rows() = shape[0] and cols() = product of the remaining dims;
// scalars are 1x1.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "enggraph/error.hpp"

namespace enggraph {

using Shape = std::vector<std::size_t>;
using Index = std::int64_t;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Plain dense array with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const noexcept;
    bool empty() const noexcept { return values_.empty(); }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::vector<double>& storage() noexcept { return values_; }
    const std::vector<double>& storage() const noexcept { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    void reshape(Shape shape);
    void fill(double v);

private:
    Shape shape_;
    std::vector<double> values_;
};

/// A named trainable array that outlives individual tapes. Gradients from a
/// backward pass are accumulated into `grad`.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Named parameter collection with stable element addresses.
class ParamSet {
public:
    Parameter& add(const std::string& name, Tensor value);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    std::size_t scalar_count() const;
    void zero_grad();
    /// Copies values from `other`; names and shapes must match.
    void assign(const ParamSet& other);
    ParamSet clone() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a tensor recorded on a tape (the differentiable tensor).
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records operations in execution order; backward replays them in exact
/// reverse order. A tape can be differentiated once.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a trainable parameter; its grad receives dloss/dparam on backward.
    Var param(Parameter& p);
    /// Non-trainable input whose gradient is still computed (inspection, gradient checks).
    Var input(Tensor value);
    /// Constant: no gradient is propagated into it.
    Var constant(Tensor value);

    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    void backward(const Var& loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad(std::size_t id) const;
    /// Gradient buffer of node `id`, allocated (zeroed) on first use.
    Tensor& grad_buffer(std::size_t id);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    /// Ids of the nodes visited by the last backward pass, in visit order.
    const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::size_t> trace_;
    bool consumed_ = false;
    static const Tensor empty_;
};

/// Differentiable primitives. All inputs must live on the same tape.
namespace ops {

Var matmul(const Var& a, const Var& b);
/// Elementwise with row-wise broadcasting: `b` may match `a`, be 1 x cols
/// (broadcast over rows), rows x 1 (broadcast over columns) or a scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var exp(const Var& a);
Var log(const Var& a);
Var clamp_min(const Var& a, double lo);
/// x^p for x >= 0.
Var pow(const Var& a, double p);
Var softmax_rows(const Var& a);
/// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& parts, int axis = 1);
Var gather_rows(const Var& a, const std::vector<Index>& index);
Var scatter_add_rows(const Var& a, const std::vector<Index>& index, std::size_t out_rows);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);
Var reduce_sum(const Var& a);
Var reduce_mean(const Var& a);
/// rows x 1 sums over columns.
Var row_sum(const Var& a);
/// Inverted dropout: surviving entries are scaled by 1/keep.
Var dropout_mask(const Var& a, double keep, std::mt19937_64& rng);
/// Y = S * X for a constant sparse S.
Var spmm(const SparseMatrix& s, const Var& x);

// Graph kernels (fused for memory traffic; each has a direct gradient rule).

/// Softmax of each column of `logits` (edges x heads) within the groups given
/// by `segment` (typically the receiving node of each edge).
Var segment_softmax(const Var& logits, const std::vector<Index>& segment, std::size_t segments);
/// out[dst[e], h*d + k] += alpha[e, h] * x[src[e], h*d + k].
Var gat_aggregate(const Var& alpha, const Var& x, const std::vector<Index>& src,
                  const std::vector<Index>& dst, std::size_t out_rows);
/// out[dst[e], h*f + k] += alpha[e, h] * r[e, k]; r is per-edge, shared by heads.
Var edge_aggregate(const Var& alpha, const Var& r, const std::vector<Index>& dst,
                   std::size_t out_rows);
/// out[n, h] = sum_k x[n, h*d + k] * a[h, k].
Var head_dot(const Var& x, const Var& a);
/// out[n, h*d + j] = sum_k x[n, h*f + k] * w[h*f + k, j]; w is (heads*f) x d.
Var per_head_linear(const Var& x, const Var& w, std::size_t heads);
/// Row standardization (x - mean) / sqrt(var + eps) without affine terms.
Var layer_norm_rows(const Var& a, double eps = 1e-5);

}  // namespace ops

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers mirror the parameter shapes.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {});

    /// Applies one update from the accumulated `grad` of every parameter.
    /// Throws DivergenceError naming the first parameter with a NaN gradient.
    void step(ParamSet& params);

    long step_count() const noexcept { return step_; }
    AdamConfig& config() noexcept { return cfg_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    AdamConfig cfg_;
    long step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace enggraph
