#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vicon/tensor.hpp"

namespace vicon {

template <typename T>
class Tape;

/// Handle to a tensor recorded on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int32_t id = -1;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape; }
    int64_t numel() const { return value().numel(); }
};

/// Ordered record of primitive operations. Creation order is a topological
/// order of the computation graph, so backward is a single reverse sweep with
/// exactly one accumulation per recorded edge.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&, int32_t self)>;

    /// Record an input tensor. Parameters pass requires_grad = true.
    Var<T> leaf(Tensor<T> value, bool requires_grad = false);

    /// Record an operation result. Every parent id must already be on the tape.
    Var<T> emit(const char* op, Tensor<T> value, const std::vector<int32_t>& parents, BackwardFn backward);

    const Tensor<T>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs; }

    /// Gradient buffer of a node, allocated as zeros on first use.
    Tensor<T>& grad(int32_t id);
    bool grad_touched(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad_ready; }
    void accumulate(int32_t id, const Tensor<T>& g);

    /// Seed d(loss)/d(loss) = 1 and sweep the tape in reverse creation order.
    void backward(const Var<T>& loss);

    /// Gradient of a node after backward(); zeros if it never participated.
    Tensor<T> grad_of(const Var<T>& v) const;

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool grad_ready = false;
        bool needs = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

template <typename T>
inline const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// ---------------------------------------------------------------------------
// Primitive set. All ops validate shapes, check outputs for non-finite values
// and record a backward closure on the tape of their inputs.
// ---------------------------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

/// Elementwise add; also broadcasts a [1,n] row across a [m,n] matrix.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);

template <typename T> Var<T> gelu(Var<T> a);

/// Row-wise layer normalization with affine terms; gamma/beta are [n] or [1,n].
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

/// Row-wise softmax over allowed columns; disallowed positions get exactly
/// zero weight. A row with no allowed column is an error.
template <typename T> Var<T> softmax_masked(Var<T> scores, const Mask& mask);

template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape new_shape);
template <typename T> Var<T> slice_rows(Var<T> a, int64_t start, int64_t count);
template <typename T> Var<T> slice_cols(Var<T> a, int64_t start, int64_t count);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);

template <typename T> Var<T> sum_all(Var<T> a);
template <typename T> Var<T> mean_all(Var<T> a);
/// Population variance over all elements.
template <typename T> Var<T> variance_all(Var<T> a);
template <typename T> Var<T> mse(Var<T> pred, Var<T> target);
/// sum(w * (pred-target)^2) / sum(w); w is a constant weight field.
template <typename T> Var<T> weighted_mse(Var<T> pred, Var<T> target, const Tensor<T>& weights);

/// Scaled dot-product attention over one head with a boolean mask.
/// Q,K,V are [L, dh]; mask is [L, L].
template <typename T> Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const Mask& mask);

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
/// The drop pattern comes from the caller's generator, so a fixed seed gives
/// a fixed pattern.
template <typename T> Var<T> dropout(Var<T> a, double p, class Rng& rng);

/// Gradients of a scalar loss with respect to a named parameter set.
/// Parameters that did not participate get zero gradients of their own shape.
template <typename T>
std::map<std::string, Tensor<T>> grad(Var<T> loss, const std::map<std::string, Var<T>>& params);

// Raw matmul kernels shared with optimizer code; C = op(A) * op(B).
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

}  // namespace vicon
