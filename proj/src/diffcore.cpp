#include "enggraph/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace enggraph {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t) { return MatMap(t.data(), t.rows(), t.cols()); }
ConstMatMap as_mat(const Tensor& t) { return ConstMatMap(t.data(), t.rows(), t.cols()); }

Tape& same_tape(std::initializer_list<const Var*> vars) {
    Tape* tape = nullptr;
    for (const Var* v : vars) {
        if (!v->valid()) throw StateError("operation on an unrecorded tensor");
        if (tape == nullptr) tape = v->tape();
        else if (tape != v->tape()) throw StateError("operands belong to different tapes");
    }
    return *tape;
}

void check_index(Index i, std::size_t bound, const char* what) {
    if (i < 0 || static_cast<std::size_t>(i) >= bound) {
        std::ostringstream os;
        os << what << " index " << i << " out of range [0, " << bound << ")";
        throw DimensionError(os.str());
    }
}

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols() && a.size() == b.size()) return Broadcast::Same;
    if (b.size() == 1) return Broadcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    if (b.rows() == a.rows() && b.cols() == 1) return Broadcast::Col;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
}

// Index into b for element (r, c) of a.
inline std::size_t bidx(Broadcast m, std::size_t r, std::size_t c, std::size_t cols) {
    switch (m) {
        case Broadcast::Same: return r * cols + c;
        case Broadcast::Row: return c;
        case Broadcast::Col: return r;
        case Broadcast::Scalar: return 0;
    }
    return 0;
}

template <typename F>
Var unary(const Var& a, F&& f, Tape::BackwardFn back) {
    Tape& tape = same_tape({&a});
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return tape.record(std::move(y), {a.id()}, std::move(back));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
        throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                             std::to_string(values_.size()) + " values");
    }
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.size() <= 1) return shape_.empty() ? 1 : 1;
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
}

void Tensor::reshape(Shape shape) {
    if (shape_size(shape) != values_.size()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

// ---------------------------------------------------------------------------
// ParamSet

Parameter& ParamSet::add(const std::string& name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Tensor(value.shape());
    p->value = std::move(value);
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParamSet::get(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return *p;
    throw ContractError("unknown parameter '" + name + "'");
}

const Parameter& ParamSet::get(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return *p;
    throw ContractError("unknown parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) {
        if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.shape());
        else p->grad.fill(0.0);
    }
}

void ParamSet::assign(const ParamSet& other) {
    if (other.size() != size()) throw ContractError("parameter set size mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
        if (other[i].name != params_[i]->name || other[i].value.shape() != params_[i]->value.shape()) {
            throw ContractError("parameter '" + params_[i]->name + "' does not match '" + other[i].name + "'");
        }
        params_[i]->value = other[i].value;
    }
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    for (const auto& p : params_) out.add(p->name, p->value);
    return out;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor Tape::empty_{};

Tape::Tape() {
    // Keep large tensor buffers on the heap between tapes instead of mapping
    // fresh zeroed pages for every allocation.
    static std::once_flag once;
    std::call_once(once, [] {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
#endif
    });
}

const Tensor& Var::value() const {
    if (!tape_) throw StateError("unrecorded tensor");
    return tape_->value(id_);
}

const Tensor& Var::grad() const {
    if (!tape_) throw StateError("unrecorded tensor");
    return tape_->grad(id_);
}

Var Tape::param(Parameter& p) {
    if (consumed_) throw StateError("tape already differentiated; record a new tape");
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
    if (consumed_) throw StateError("tape already differentiated; record a new tape");
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    if (consumed_) throw StateError("tape already differentiated; record a new tape");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    if (consumed_) throw StateError("tape already differentiated; record a new tape");
    Node n;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.size() == n.value.size() ? n.grad : empty_;
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw StateError("loss is not recorded on this tape");
    if (consumed_) throw StateError("backward already ran on this tape");
    if (loss.value().size() != 1) {
        throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.value().shape()));
    }
    consumed_ = true;
    trace_.clear();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        trace_.push_back(i);
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
        if (n.backward) n.backward(*this, i);
    }
    for (Node& n : nodes_) {
        if (n.param == nullptr) continue;
        Tensor& g = n.param->grad;
        if (g.size() != n.param->value.size()) g = Tensor(n.param->value.shape());
        if (n.grad.size() == g.size())
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
}

// ---------------------------------------------------------------------------
// Primitives

namespace ops {

Var matmul(const Var& a, const Var& b) {
    Tape& tape = same_tape({&a, &b});
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()) +
                             " (inner dims " + std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) + ")");
    }
    Tensor Y({A.rows(), B.cols()});
    as_mat(Y).noalias() = as_mat(A) * as_mat(B);
    std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(Y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        if (t.requires_grad(ia)) as_mat(t.grad_buffer(ia)).noalias() += as_mat(dY) * as_mat(t.value(ib)).transpose();
        if (t.requires_grad(ib)) as_mat(t.grad_buffer(ib)).noalias() += as_mat(t.value(ia)).transpose() * as_mat(dY);
    });
}

namespace {

enum class Elementwise { Add, Sub, Mul };

Var binary(const Var& a, const Var& b, Elementwise kind, const char* name) {
    Tape& tape = same_tape({&a, &b});
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    Broadcast mode = broadcast_mode(A, B, name);
    Tensor Y(A.shape());
    const std::size_t R = A.rows(), C = A.cols();
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            double x = A[r * C + c], y = B[bidx(mode, r, c, C)];
            Y[r * C + c] = kind == Elementwise::Add ? x + y : kind == Elementwise::Sub ? x - y : x * y;
        }
    }
    std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(Y), {ia, ib}, [ia, ib, mode, kind, R, C](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        if (t.requires_grad(ia)) {
            Tensor& dA = t.grad_buffer(ia);
            if (kind == Elementwise::Mul) {
                const Tensor& B = t.value(ib);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) dA[r * C + c] += dY[r * C + c] * B[bidx(mode, r, c, C)];
            } else {
                for (std::size_t i = 0; i < R * C; ++i) dA[i] += dY[i];
            }
        }
        if (t.requires_grad(ib)) {
            Tensor& dB = t.grad_buffer(ib);
            const Tensor& A = t.value(ia);
            const double sign = kind == Elementwise::Sub ? -1.0 : 1.0;
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t c = 0; c < C; ++c) {
                    double g = dY[r * C + c];
                    if (kind == Elementwise::Mul) g *= A[r * C + c];
                    dB[bidx(mode, r, c, C)] += sign * g;
                }
            }
        }
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, Elementwise::Add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, Elementwise::Sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, Elementwise::Mul, "mul"); }

Var scale(const Var& a, double s) {
    std::size_t ia = a.id();
    return unary(a, [s](double x) { return s * x; }, [ia, s](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += s * dY[i];
    });
}

Var add_scalar(const Var& a, double s) {
    std::size_t ia = a.id();
    return unary(a, [s](double x) { return x + s; }, [ia](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i];
    });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
    std::size_t ia = a.id();
    return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; }, [ia, slope](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ia);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += X[i] > 0.0 ? dY[i] : slope * dY[i];
    });
}

Var exp(const Var& a) {
    for (double x : a.value().values()) {
        if (!std::isfinite(x) || x > 700.0) throw DomainError("exp overflow for argument " + std::to_string(x));
    }
    std::size_t ia = a.id();
    return unary(a, [](double x) { return std::exp(x); }, [ia](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& Y = t.value(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] * Y[i];
    });
}

Var log(const Var& a) {
    for (double x : a.value().values()) {
        if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
    }
    std::size_t ia = a.id();
    return unary(a, [](double x) { return std::log(x); }, [ia](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ia);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] / X[i];
    });
}

Var clamp_min(const Var& a, double lo) {
    std::size_t ia = a.id();
    return unary(a, [lo](double x) { return x < lo ? lo : x; }, [ia, lo](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ia);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i)
            if (X[i] >= lo) dA[i] += dY[i];
    });
}

Var pow(const Var& a, double p) {
    for (double x : a.value().values()) {
        if (x < 0.0) throw DomainError("pow of negative base " + std::to_string(x));
    }
    std::size_t ia = a.id();
    return unary(a, [p](double x) { return p == 0.0 ? 1.0 : std::pow(x, p); }, [ia, p](Tape& t, std::size_t self) {
        if (p == 0.0) return;
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ia);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) {
            if (X[i] == 0.0 && p < 1.0) continue;
            dA[i] += dY[i] * p * std::pow(X[i], p - 1.0);
        }
    });
}

Var softmax_rows(const Var& a) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    const std::size_t R = X.rows(), C = X.cols();
    Tensor Y(X.shape());
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = X.data() + r * C;
        double* y = Y.data() + r * C;
        double m = *std::max_element(x, x + C);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += (y[c] = std::exp(x[c] - m));
        for (std::size_t c = 0; c < C; ++c) y[c] /= s;
    }
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, R, C](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& Y = t.value(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += dY[r * C + c] * Y[r * C + c];
            for (std::size_t c = 0; c < C; ++c) dA[r * C + c] += Y[r * C + c] * (dY[r * C + c] - dot);
        }
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    Tape& tape = same_tape({&parts[0]});
    for (const Var& p : parts) same_tape({&parts[0], &p});
    std::vector<std::size_t> ids;
    if (axis == 1) {
        const std::size_t R = parts[0].rows();
        std::size_t C = 0;
        std::vector<std::size_t> offsets;
        for (const Var& p : parts) {
            if (p.rows() != R) {
                throw DimensionError("concat(axis=1): row counts differ (" + std::to_string(R) + " vs " +
                                     std::to_string(p.rows()) + ")");
            }
            offsets.push_back(C);
            C += p.cols();
            ids.push_back(p.id());
        }
        Tensor Y({R, C});
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const Tensor& X = parts[k].value();
            const std::size_t ck = X.cols();
            for (std::size_t r = 0; r < R; ++r)
                std::copy_n(X.data() + r * ck, ck, Y.data() + r * C + offsets[k]);
        }
        return tape.record(std::move(Y), ids, [ids, offsets, R, C](Tape& t, std::size_t self) {
            const Tensor& dY = t.grad(self);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (!t.requires_grad(ids[k])) continue;
                Tensor& dX = t.grad_buffer(ids[k]);
                const std::size_t ck = dX.cols();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < ck; ++c) dX[r * ck + c] += dY[r * C + offsets[k] + c];
            }
        });
    }
    if (axis != 0) throw DimensionError("concat axis must be 0 or 1");
    const std::size_t C = parts[0].cols();
    std::size_t R = 0;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        if (p.cols() != C) throw DimensionError("concat(axis=0): column counts differ");
        offsets.push_back(R * C);
        R += p.rows();
        ids.push_back(p.id());
    }
    Tensor Y({R, C});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& X = parts[k].value();
        std::copy(X.data(), X.data() + X.size(), Y.data() + offsets[k]);
    }
    return tape.record(std::move(Y), ids, [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            Tensor& dX = t.grad_buffer(ids[k]);
            for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dY[offsets[k] + i];
        }
    });
}

Var gather_rows(const Var& a, const std::vector<Index>& index) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    const std::size_t C = X.cols();
    Tensor Y({index.size(), C});
    for (std::size_t e = 0; e < index.size(); ++e) {
        check_index(index[e], X.rows(), "gather_rows");
        std::copy_n(X.data() + static_cast<std::size_t>(index[e]) * C, C, Y.data() + e * C);
    }
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, index, C](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t e = 0; e < index.size(); ++e) {
            double* dst = dA.data() + static_cast<std::size_t>(index[e]) * C;
            const double* src = dY.data() + e * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
    });
}

Var scatter_add_rows(const Var& a, const std::vector<Index>& index, std::size_t out_rows) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    if (index.size() != X.rows()) {
        throw DimensionError("scatter_add_rows: " + std::to_string(X.rows()) + " rows but " +
                             std::to_string(index.size()) + " indices");
    }
    const std::size_t C = X.cols();
    Tensor Y({out_rows, C});
    for (std::size_t e = 0; e < index.size(); ++e) {
        check_index(index[e], out_rows, "scatter_add_rows");
        double* dst = Y.data() + static_cast<std::size_t>(index[e]) * C;
        const double* src = X.data() + e * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
    }
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, index, C](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t e = 0; e < index.size(); ++e) {
            const double* src = dY.data() + static_cast<std::size_t>(index[e]) * C;
            double* dst = dA.data() + e * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    const std::size_t R = X.rows(), C = X.cols();
    if (begin >= end || end > C) {
        throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             std::to_string(C) + " columns");
    }
    const std::size_t W = end - begin;
    Tensor Y({R, W});
    for (std::size_t r = 0; r < R; ++r) std::copy_n(X.data() + r * C + begin, W, Y.data() + r * W);
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, R, C, W, begin](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < W; ++c) dA[r * C + begin + c] += dY[r * W + c];
    });
}

Var reshape(const Var& a, Shape shape) {
    Tape& tape = same_tape({&a});
    Tensor Y = a.value();
    Y.reshape(std::move(shape));
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i];
    });
}

Var reduce_sum(const Var& a) {
    Tape& tape = same_tape({&a});
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    std::size_t ia = a.id();
    return tape.record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
        double g = t.grad(self)[0];
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += g;
    });
}

Var reduce_mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw DimensionError("reduce_mean of empty tensor");
    return scale(reduce_sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(const Var& a) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    const std::size_t R = X.rows(), C = X.cols();
    Tensor Y({R, 1});
    for (std::size_t r = 0; r < R; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += X[r * C + c];
        Y[r] = s;
    }
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, R, C](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) dA[r * C + c] += dY[r];
    });
}

Var dropout_mask(const Var& a, double keep, std::mt19937_64& rng) {
    if (!(keep > 0.0 && keep <= 1.0)) throw ParameterError("dropout keep probability must be in (0,1]");
    Tape& tape = same_tape({&a});
    if (keep == 1.0) return reshape(a, a.value().shape());
    Tensor mask(a.value().shape());
    std::bernoulli_distribution coin(keep);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = coin(rng) ? 1.0 / keep : 0.0;
    return mul(a, tape.constant(std::move(mask)));
}

Var spmm(const SparseMatrix& s, const Var& x) {
    Tape& tape = same_tape({&x});
    const Tensor& X = x.value();
    if (static_cast<std::size_t>(s.cols()) != X.rows()) {
        throw DimensionError("spmm: operator has " + std::to_string(s.cols()) + " columns, operand " +
                             std::to_string(X.rows()) + " rows");
    }
    Tensor Y({static_cast<std::size_t>(s.rows()), X.cols()});
    as_mat(Y).noalias() = s * as_mat(X);
    std::size_t ix = x.id();
    auto op = std::make_shared<SparseMatrix>(s.transpose());
    return tape.record(std::move(Y), {ix}, [ix, op](Tape& t, std::size_t self) {
        as_mat(t.grad_buffer(ix)).noalias() += (*op) * as_mat(t.grad(self));
    });
}

Var segment_softmax(const Var& logits, const std::vector<Index>& segment, std::size_t segments) {
    Tape& tape = same_tape({&logits});
    const Tensor& X = logits.value();
    const std::size_t E = X.rows(), H = X.cols();
    if (segment.size() != E) throw DimensionError("segment_softmax: segment ids must match row count");
    std::vector<double> mx(segments * H, -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < E; ++e) {
        check_index(segment[e], segments, "segment_softmax");
        double* m = mx.data() + static_cast<std::size_t>(segment[e]) * H;
        for (std::size_t h = 0; h < H; ++h) m[h] = std::max(m[h], X[e * H + h]);
    }
    Tensor Y(X.shape());
    std::vector<double> den(segments * H, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
        const std::size_t s = static_cast<std::size_t>(segment[e]) * H;
        for (std::size_t h = 0; h < H; ++h) den[s + h] += (Y[e * H + h] = std::exp(X[e * H + h] - mx[s + h]));
    }
    for (std::size_t e = 0; e < E; ++e) {
        const std::size_t s = static_cast<std::size_t>(segment[e]) * H;
        for (std::size_t h = 0; h < H; ++h) Y[e * H + h] /= den[s + h];
    }
    std::size_t ia = logits.id();
    return tape.record(std::move(Y), {ia}, [ia, segment, segments, E, H](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& Y = t.value(self);
        std::vector<double> dot(segments * H, 0.0);
        for (std::size_t e = 0; e < E; ++e) {
            const std::size_t s = static_cast<std::size_t>(segment[e]) * H;
            for (std::size_t h = 0; h < H; ++h) dot[s + h] += dY[e * H + h] * Y[e * H + h];
        }
        Tensor& dA = t.grad_buffer(ia);
        for (std::size_t e = 0; e < E; ++e) {
            const std::size_t s = static_cast<std::size_t>(segment[e]) * H;
            for (std::size_t h = 0; h < H; ++h) dA[e * H + h] += Y[e * H + h] * (dY[e * H + h] - dot[s + h]);
        }
    });
}

Var gat_aggregate(const Var& alpha, const Var& x, const std::vector<Index>& src, const std::vector<Index>& dst,
                  std::size_t out_rows) {
    Tape& tape = same_tape({&alpha, &x});
    const Tensor& A = alpha.value();
    const Tensor& X = x.value();
    const std::size_t E = A.rows(), H = A.cols(), C = X.cols();
    if (src.size() != E || dst.size() != E) throw DimensionError("gat_aggregate: edge index length mismatch");
    if (C % H != 0) throw DimensionError("gat_aggregate: feature width not divisible by head count");
    const std::size_t D = C / H;
    Tensor Y({out_rows, C});
    for (std::size_t e = 0; e < E; ++e) {
        check_index(src[e], X.rows(), "gat_aggregate src");
        check_index(dst[e], out_rows, "gat_aggregate dst");
        const double* xs = X.data() + static_cast<std::size_t>(src[e]) * C;
        double* y = Y.data() + static_cast<std::size_t>(dst[e]) * C;
        for (std::size_t h = 0; h < H; ++h) {
            const double w = A[e * H + h];
            for (std::size_t k = 0; k < D; ++k) y[h * D + k] += w * xs[h * D + k];
        }
    }
    std::size_t ia = alpha.id(), ix = x.id();
    return tape.record(std::move(Y), {ia, ix}, [ia, ix, src, dst, E, H, D](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& A = t.value(ia);
        const Tensor& X = t.value(ix);
        const std::size_t C = H * D;
        const bool ga = t.requires_grad(ia), gx = t.requires_grad(ix);
        double* __restrict dA = ga ? t.grad_buffer(ia).data() : nullptr;
        double* __restrict dX = gx ? t.grad_buffer(ix).data() : nullptr;
        const double* __restrict a = A.data();
        const double* __restrict xv = X.data();
        const double* __restrict g = dY.data();
        for (std::size_t e = 0; e < E; ++e) {
            const double* dy = g + static_cast<std::size_t>(dst[e]) * C;
            const std::size_t so = static_cast<std::size_t>(src[e]) * C;
            if (ga) {
                const double* xs = xv + so;
                for (std::size_t h = 0; h < H; ++h) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < D; ++k) s += dy[h * D + k] * xs[h * D + k];
                    dA[e * H + h] += s;
                }
            }
            if (gx) {
                double* dx = dX + so;
                for (std::size_t h = 0; h < H; ++h) {
                    const double w = a[e * H + h];
                    for (std::size_t k = 0; k < D; ++k) dx[h * D + k] += w * dy[h * D + k];
                }
            }
        }
    });
}

Var edge_aggregate(const Var& alpha, const Var& r, const std::vector<Index>& dst, std::size_t out_rows) {
    Tape& tape = same_tape({&alpha, &r});
    const Tensor& A = alpha.value();
    const Tensor& R = r.value();
    const std::size_t E = A.rows(), H = A.cols(), F = R.cols();
    if (R.rows() != E || dst.size() != E) throw DimensionError("edge_aggregate: edge count mismatch");
    const std::size_t C = H * F;
    Tensor Y({out_rows, C});
    for (std::size_t e = 0; e < E; ++e) {
        check_index(dst[e], out_rows, "edge_aggregate dst");
        double* y = Y.data() + static_cast<std::size_t>(dst[e]) * C;
        const double* re = R.data() + e * F;
        for (std::size_t h = 0; h < H; ++h) {
            const double w = A[e * H + h];
            for (std::size_t k = 0; k < F; ++k) y[h * F + k] += w * re[k];
        }
    }
    std::size_t ia = alpha.id(), ir = r.id();
    return tape.record(std::move(Y), {ia, ir}, [ia, ir, dst, E, H, F](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& A = t.value(ia);
        const Tensor& R = t.value(ir);
        const std::size_t C = H * F;
        const bool ga = t.requires_grad(ia), gr = t.requires_grad(ir);
        double* __restrict dA = ga ? t.grad_buffer(ia).data() : nullptr;
        double* __restrict dR = gr ? t.grad_buffer(ir).data() : nullptr;
        const double* __restrict a = A.data();
        const double* __restrict rv = R.data();
        const double* __restrict g = dY.data();
        for (std::size_t e = 0; e < E; ++e) {
            const double* dy = g + static_cast<std::size_t>(dst[e]) * C;
            const double* re = rv + e * F;
            if (ga) {
                for (std::size_t h = 0; h < H; ++h) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < F; ++k) s += dy[h * F + k] * re[k];
                    dA[e * H + h] += s;
                }
            }
            if (gr) {
                double* dr = dR + e * F;
                for (std::size_t h = 0; h < H; ++h) {
                    const double w = a[e * H + h];
                    for (std::size_t k = 0; k < F; ++k) dr[k] += w * dy[h * F + k];
                }
            }
        }
    });
}

Var head_dot(const Var& x, const Var& a) {
    Tape& tape = same_tape({&x, &a});
    const Tensor& X = x.value();
    const Tensor& Aw = a.value();
    const std::size_t N = X.rows(), H = Aw.rows(), D = Aw.cols();
    if (X.cols() != H * D) {
        throw DimensionError("head_dot: features " + std::to_string(X.cols()) + " != heads*dim " +
                             std::to_string(H * D));
    }
    Tensor Y({N, H});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < H; ++h) {
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k) s += X[n * H * D + h * D + k] * Aw[h * D + k];
            Y[n * H + h] = s;
        }
    std::size_t ix = x.id(), ia = a.id();
    return tape.record(std::move(Y), {ix, ia}, [ix, ia, N, H, D](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ix);
        const Tensor& Aw = t.value(ia);
        const bool gx = t.requires_grad(ix), ga = t.requires_grad(ia);
        Tensor* dX = gx ? &t.grad_buffer(ix) : nullptr;
        Tensor* dA = ga ? &t.grad_buffer(ia) : nullptr;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t h = 0; h < H; ++h) {
                const double g = dY[n * H + h];
                for (std::size_t k = 0; k < D; ++k) {
                    if (gx) (*dX)[n * H * D + h * D + k] += g * Aw[h * D + k];
                    if (ga) (*dA)[h * D + k] += g * X[n * H * D + h * D + k];
                }
            }
    });
}

Var per_head_linear(const Var& x, const Var& w, std::size_t heads) {
    Tape& tape = same_tape({&x, &w});
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    if (heads == 0 || X.cols() % heads != 0 || W.rows() != X.cols()) {
        throw DimensionError("per_head_linear: input " + shape_str(X.shape()) + ", weight " + shape_str(W.shape()) +
                             ", heads " + std::to_string(heads));
    }
    const std::size_t N = X.rows(), F = X.cols() / heads, D = W.cols();
    Tensor Y({N, heads * D});
    Eigen::Map<RowMat, 0, Eigen::OuterStride<>> ymap(Y.data(), N, heads * D, Eigen::OuterStride<>(heads * D));
    for (std::size_t h = 0; h < heads; ++h) {
        Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> xh(X.data() + h * F, N, F, Eigen::OuterStride<>(heads * F));
        Eigen::Map<RowMat, 0, Eigen::OuterStride<>> yh(Y.data() + h * D, N, D, Eigen::OuterStride<>(heads * D));
        yh.noalias() = xh * ConstMatMap(W.data() + h * F * D, F, D);
    }
    std::size_t ix = x.id(), iw = w.id();
    return tape.record(std::move(Y), {ix, iw}, [ix, iw, heads, N, F, D](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& X = t.value(ix);
        const Tensor& W = t.value(iw);
        for (std::size_t h = 0; h < heads; ++h) {
            Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> dyh(dY.data() + h * D, N, D,
                                                                  Eigen::OuterStride<>(heads * D));
            if (t.requires_grad(ix)) {
                Tensor& dX = t.grad_buffer(ix);
                Eigen::Map<RowMat, 0, Eigen::OuterStride<>> dxh(dX.data() + h * F, N, F,
                                                               Eigen::OuterStride<>(heads * F));
                dxh.noalias() += dyh * ConstMatMap(W.data() + h * F * D, F, D).transpose();
            }
            if (t.requires_grad(iw)) {
                Tensor& dW = t.grad_buffer(iw);
                Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> xh(X.data() + h * F, N, F,
                                                                     Eigen::OuterStride<>(heads * F));
                MatMap(dW.data() + h * F * D, F, D).noalias() += xh.transpose() * dyh;
            }
        }
    });
}

Var layer_norm_rows(const Var& a, double eps) {
    Tape& tape = same_tape({&a});
    const Tensor& X = a.value();
    const std::size_t R = X.rows(), C = X.cols();
    Tensor Y(X.shape());
    std::vector<double> inv_std(R);
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = X.data() + r * C;
        double mean = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += x[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= static_cast<double>(C);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c) Y[r * C + c] = (x[c] - mean) * inv_std[r];
    }
    std::size_t ia = a.id();
    return tape.record(std::move(Y), {ia}, [ia, R, C, inv_std](Tape& t, std::size_t self) {
        const Tensor& dY = t.grad(self);
        const Tensor& Y = t.value(self);
        Tensor& dA = t.grad_buffer(ia);
        const double inv_c = 1.0 / static_cast<double>(C);
        for (std::size_t r = 0; r < R; ++r) {
            const double* dy = dY.data() + r * C;
            const double* y = Y.data() + r * C;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                m1 += dy[c];
                m2 += dy[c] * y[c];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t c = 0; c < C; ++c) dA[r * C + c] += inv_std[r] * (dy[c] - m1 - y[c] * m2);
        }
    });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0 && cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0 &&
          cfg_.eps > 0.0)) {
        throw ParameterError("Adam hyperparameters must be positive with betas in (0,1)");
    }
}

void Adam::step(ParamSet& params) {
    if (m_.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params[i].value.shape());
            v_.emplace_back(params[i].value.shape());
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam state does not match parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params[i];
        if (p.grad.size() != p.value.size()) throw ContractError("parameter '" + p.name + "' has no gradient");
        if (m_[i].size() != p.value.size()) throw ContractError("Adam state shape mismatch for '" + p.name + "'");
        for (double g : p.grad.values()) {
            if (std::isnan(g)) throw DivergenceError(p.name, "NaN gradient in parameter '" + p.name + "'");
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
            p.value[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        }
    }
}

}  // namespace enggraph
