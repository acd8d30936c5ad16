#include "vicon/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vicon/rng.hpp"

namespace vicon {

// ---------------------------------------------------------------------------
// matmul kernels
// ---------------------------------------------------------------------------

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
void mm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T aip = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T. B is transposed into scratch once so the bulk
// of the work runs through the row-major kernel above.
template <typename T>
void mm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        for (int64_t p = 0; p < k; ++p) scratch[static_cast<size_t>(p * n + j)] = brow[p];
    }
    mm_nn(a, scratch.data(), c, m, k, n, accumulate);
}

// C[m,n] = A[k,m]^T * B[k,n]
template <typename T>
void mm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    for (int64_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const T api = arow[i];
            if (api == T(0)) continue;
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    require_finite(value, "leaf");
    Node node;
    node.value = std::move(value);
    node.needs = requires_grad;
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::emit(const char* op, Tensor<T> value, const std::vector<int32_t>& parents, BackwardFn backward) {
    require_finite(value, op);
    const int32_t self = static_cast<int32_t>(nodes_.size());
    bool needs = false;
    for (int32_t p : parents) {
        if (p < 0 || p >= self) {
            throw std::runtime_error(std::string("tape cycle detected in ") + op);
        }
        needs = needs || nodes_[static_cast<size_t>(p)].needs;
    }
    Node node;
    node.value = std::move(value);
    node.needs = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>{this, self};
}

template <typename T>
Tensor<T>& Tape<T>::grad(int32_t id) {
    Node& node = nodes_[static_cast<size_t>(id)];
    if (!node.grad_ready) {
        node.grad = Tensor<T>(node.value.shape);
        node.grad_ready = true;
    }
    return node.grad;
}

template <typename T>
void Tape<T>::accumulate(int32_t id, const Tensor<T>& g) {
    Tensor<T>& dst = grad(id);
    if (!dst.same_shape(g)) {
        throw std::runtime_error("gradient shape " + shape_str(g.shape) + " does not match value shape " +
                                 shape_str(dst.shape));
    }
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
    if (loss.tape != this) throw std::runtime_error("backward: loss lives on another tape");
    const Tensor<T>& lv = value(loss.id);
    if (lv.numel() != 1) {
        throw std::runtime_error("backward: loss must be a scalar, got shape " + shape_str(lv.shape));
    }
    grad(loss.id).data[0] = T(1);
    for (int32_t id = loss.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<size_t>(id)];
        if (node.grad_ready && node.backward) node.backward(*this, id);
    }
}

template <typename T>
Tensor<T> Tape<T>::grad_of(const Var<T>& v) const {
    const Node& node = nodes_[static_cast<size_t>(v.id)];
    if (!node.grad_ready) return Tensor<T>(node.value.shape);
    return node.grad;
}

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void require_2d(const Var<T>& v, const char* op) {
    if (v.shape().size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(v.shape()));
    }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

}  // namespace

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "matmul");
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw std::invalid_argument("matmul shape mismatch " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    }
    const int64_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor<T> out({m, n});
    mm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);

    auto bw = [a, b, m, k, n](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        const Tensor<T>& av2 = tape.value(a.id);
        const Tensor<T>& bv2 = tape.value(b.id);
        if (tape.requires_grad(a.id)) {
            mm_nt(dc.data.data(), bv2.data.data(), tape.grad(a.id).data.data(), m, n, k, true);
        }
        if (tape.requires_grad(b.id)) {
            mm_tn(av2.data.data(), dc.data.data(), tape.grad(b.id).data.data(), k, m, n, true);
        }
    };
    return a.tape->emit("matmul", std::move(out), {a.id, b.id}, bw);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "add");
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool row_broadcast = av.shape.size() == 2 && bv.shape.size() == 2 && bv.rows() == 1 &&
                               av.cols() == bv.cols() && av.rows() != 1;
    if (!row_broadcast && !av.same_shape(bv)) {
        throw std::invalid_argument("add shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    }
    Tensor<T> out = av;
    if (row_broadcast) {
        const int64_t n = av.cols();
        for (int64_t i = 0; i < av.rows(); ++i) {
            T* row = out.data.data() + i * n;
            for (int64_t j = 0; j < n; ++j) row[j] += bv.data[static_cast<size_t>(j)];
        }
    } else {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    }

    auto bw = [a, b, row_broadcast](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        if (tape.requires_grad(a.id)) tape.accumulate(a.id, dc);
        if (tape.requires_grad(b.id)) {
            if (row_broadcast) {
                Tensor<T>& db = tape.grad(b.id);
                const int64_t n = db.cols();
                for (int64_t i = 0; i < dc.rows(); ++i) {
                    const T* row = dc.data.data() + i * n;
                    for (int64_t j = 0; j < n; ++j) db.data[static_cast<size_t>(j)] += row[j];
                }
            } else {
                tape.accumulate(b.id, dc);
            }
        }
    };
    return a.tape->emit("add", std::move(out), {a.id, b.id}, bw);
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "sub");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::invalid_argument("sub shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    }
    Tensor<T> out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];

    auto bw = [a, b](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        if (tape.requires_grad(a.id)) tape.accumulate(a.id, dc);
        if (tape.requires_grad(b.id)) {
            Tensor<T>& db = tape.grad(b.id);
            for (size_t i = 0; i < db.data.size(); ++i) db.data[i] -= dc.data[i];
        }
    };
    return a.tape->emit("sub", std::move(out), {a.id, b.id}, bw);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_tape(a, b, "mul");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::invalid_argument("mul shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    }
    Tensor<T> out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];

    auto bw = [a, b](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        if (tape.requires_grad(a.id)) {
            Tensor<T>& da = tape.grad(a.id);
            const Tensor<T>& bv2 = tape.value(b.id);
            for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += dc.data[i] * bv2.data[i];
        }
        if (tape.requires_grad(b.id)) {
            Tensor<T>& db = tape.grad(b.id);
            const Tensor<T>& av2 = tape.value(a.id);
            for (size_t i = 0; i < db.data.size(); ++i) db.data[i] += dc.data[i] * av2.data[i];
        }
    };
    return a.tape->emit("mul", std::move(out), {a.id, b.id}, bw);
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (T& v : out.data) v *= factor;
    auto bw = [a, factor](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += factor * dc.data[i];
    };
    return a.tape->emit("scale", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> gelu(Var<T> a) {
    static const T inv_sqrt2 = T(0.70710678118654752440);
    static const T inv_sqrt2pi = T(0.39894228040143267794);
    const auto& av = a.value();
    Tensor<T> out = av;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const T x = av.data[i];
        out.data[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    auto bw = [a](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        const Tensor<T>& av2 = tape.value(a.id);
        Tensor<T>& da = tape.grad(a.id);
        for (size_t i = 0; i < da.data.size(); ++i) {
            const T x = av2.data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            da.data[i] += dc.data[i] * (cdf + x * pdf);
        }
    };
    return a.tape->emit("gelu", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    require_same_tape(x, gamma, "layer_norm");
    require_same_tape(x, beta, "layer_norm");
    require_2d(x, "layer_norm");
    const auto& xv = x.value();
    const int64_t m = xv.rows(), n = xv.cols();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    if (gv.numel() != n || bv.numel() != n) {
        throw std::invalid_argument("layer_norm affine shape mismatch: x " + shape_str(xv.shape) + ", gamma " +
                                    shape_str(gv.shape) + ", beta " + shape_str(bv.shape));
    }

    Tensor<T> out({m, n});
    Tensor<T> xhat({m, n});
    std::vector<T> inv_std(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        const T* row = xv.data.data() + i * n;
        T mean = 0;
        for (int64_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<T>(n);
        T var = 0;
        for (int64_t j = 0; j < n; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        T* hrow = xhat.data.data() + i * n;
        T* orow = out.data.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
            hrow[j] = (row[j] - mean) * inv;
            orow[j] = gv.data[static_cast<size_t>(j)] * hrow[j] + bv.data[static_cast<size_t>(j)];
        }
    }

    auto bw = [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](Tape<T>& tape,
                                                                                           int32_t self) {
        const Tensor<T>& dy = tape.grad(self);
        const Tensor<T>& gv2 = tape.value(gamma.id);
        if (tape.requires_grad(gamma.id)) {
            Tensor<T>& dg = tape.grad(gamma.id);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    dg.data[static_cast<size_t>(j)] +=
                        dy.data[static_cast<size_t>(i * n + j)] * xhat.data[static_cast<size_t>(i * n + j)];
                }
            }
        }
        if (tape.requires_grad(beta.id)) {
            Tensor<T>& db = tape.grad(beta.id);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    db.data[static_cast<size_t>(j)] += dy.data[static_cast<size_t>(i * n + j)];
                }
            }
        }
        if (tape.requires_grad(x.id)) {
            Tensor<T>& dx = tape.grad(x.id);
            for (int64_t i = 0; i < m; ++i) {
                const T* dyrow = dy.data.data() + i * n;
                const T* hrow = xhat.data.data() + i * n;
                T* dxrow = dx.data.data() + i * n;
                T mean_dh = 0, mean_dh_h = 0;
                for (int64_t j = 0; j < n; ++j) {
                    const T dh = dyrow[j] * gv2.data[static_cast<size_t>(j)];
                    mean_dh += dh;
                    mean_dh_h += dh * hrow[j];
                }
                mean_dh /= static_cast<T>(n);
                mean_dh_h /= static_cast<T>(n);
                const T inv = inv_std[static_cast<size_t>(i)];
                for (int64_t j = 0; j < n; ++j) {
                    const T dh = dyrow[j] * gv2.data[static_cast<size_t>(j)];
                    dxrow[j] += inv * (dh - mean_dh - hrow[j] * mean_dh_h);
                }
            }
        }
    };
    return x.tape->emit("layer_norm", std::move(out), {x.id, gamma.id, beta.id}, bw);
}

template <typename T>
Var<T> softmax_masked(Var<T> scores, const Mask& mask) {
    require_2d(scores, "softmax_masked");
    const auto& sv = scores.value();
    const int64_t m = sv.rows(), n = sv.cols();
    if (mask.rows != m || mask.cols != n) {
        throw std::invalid_argument("softmax mask shape [" + std::to_string(mask.rows) + "," +
                                    std::to_string(mask.cols) + "] does not match scores " + shape_str(sv.shape));
    }
    Tensor<T> out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const T* row = sv.data.data() + i * n;
        T* orow = out.data.data() + i * n;
        T max_val = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (int64_t j = 0; j < n; ++j) {
            if (mask.at(i, j)) {
                any = true;
                max_val = std::max(max_val, row[j]);
            }
        }
        if (!any) throw std::runtime_error("empty attention row " + std::to_string(i));
        T denom = 0;
        for (int64_t j = 0; j < n; ++j) {
            if (mask.at(i, j)) {
                orow[j] = std::exp(row[j] - max_val);
                denom += orow[j];
            } else {
                orow[j] = T(0);
            }
        }
        const T inv = T(1) / denom;
        for (int64_t j = 0; j < n; ++j) orow[j] *= inv;
    }

    auto mask_copy = std::make_shared<const Mask>(mask);
    auto bw = [scores, mask_copy, m, n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(scores.id)) return;
        const Tensor<T>& dy = tape.grad(self);
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& dx = tape.grad(scores.id);
        for (int64_t i = 0; i < m; ++i) {
            const T* dyrow = dy.data.data() + i * n;
            const T* yrow = y.data.data() + i * n;
            T* dxrow = dx.data.data() + i * n;
            T dot = 0;
            for (int64_t j = 0; j < n; ++j) dot += dyrow[j] * yrow[j];
            for (int64_t j = 0; j < n; ++j) {
                if (mask_copy->at(i, j)) dxrow[j] += yrow[j] * (dyrow[j] - dot);
            }
        }
    };
    return scores.tape->emit("softmax_masked", std::move(out), {scores.id}, bw);
}

template <typename T>
Var<T> transpose(Var<T> a) {
    require_2d(a, "transpose");
    const auto& av = a.value();
    const int64_t m = av.rows(), n = av.cols();
    Tensor<T> out({n, m});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) out.data[static_cast<size_t>(j * m + i)] = av.data[static_cast<size_t>(i * n + j)];
    }
    auto bw = [a, m, n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                da.data[static_cast<size_t>(i * n + j)] += dc.data[static_cast<size_t>(j * m + i)];
            }
        }
    };
    return a.tape->emit("transpose", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> reshape(Var<T> a, Shape new_shape) {
    const auto& av = a.value();
    if (numel_of(new_shape) != av.numel()) {
        throw std::invalid_argument("reshape " + shape_str(av.shape) + " -> " + shape_str(new_shape) +
                                    " changes element count");
    }
    Tensor<T> out(new_shape, av.data);
    auto bw = [a](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += dc.data[i];
    };
    return a.tape->emit("reshape", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> slice_rows(Var<T> a, int64_t start, int64_t count) {
    require_2d(a, "slice_rows");
    const auto& av = a.value();
    if (start < 0 || count < 1 || start + count > av.rows()) {
        throw std::invalid_argument("slice_rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                                    ") out of range for " + shape_str(av.shape));
    }
    const int64_t n = av.cols();
    Tensor<T> out({count, n});
    std::copy(av.data.begin() + start * n, av.data.begin() + (start + count) * n, out.data.begin());
    auto bw = [a, start, count, n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (int64_t i = 0; i < count; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                da.data[static_cast<size_t>((start + i) * n + j)] += dc.data[static_cast<size_t>(i * n + j)];
            }
        }
    };
    return a.tape->emit("slice_rows", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> slice_cols(Var<T> a, int64_t start, int64_t count) {
    require_2d(a, "slice_cols");
    const auto& av = a.value();
    if (start < 0 || count < 1 || start + count > av.cols()) {
        throw std::invalid_argument("slice_cols [" + std::to_string(start) + "," + std::to_string(start + count) +
                                    ") out of range for " + shape_str(av.shape));
    }
    const int64_t m = av.rows(), n = av.cols();
    Tensor<T> out({m, count});
    for (int64_t i = 0; i < m; ++i) {
        std::copy(av.data.begin() + i * n + start, av.data.begin() + i * n + start + count,
                  out.data.begin() + i * count);
    }
    auto bw = [a, start, count, m, n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < count; ++j) {
                da.data[static_cast<size_t>(i * n + start + j)] += dc.data[static_cast<size_t>(i * count + j)];
            }
        }
    };
    return a.tape->emit("slice_cols", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int64_t n = parts[0].value().cols();
    int64_t total = 0;
    std::vector<int32_t> ids;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        require_same_tape(parts[0], p, "concat_rows");
        if (p.value().cols() != n) {
            throw std::invalid_argument("concat_rows column mismatch " + shape_str(p.value().shape));
        }
        total += p.value().rows();
        ids.push_back(p.id);
    }
    Tensor<T> out({total, n});
    int64_t row = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + row * n);
        row += pv.rows();
    }
    auto bw = [parts, n](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        int64_t row2 = 0;
        for (const auto& p : parts) {
            const int64_t rows = tape.value(p.id).rows();
            if (tape.requires_grad(p.id)) {
                Tensor<T>& dp = tape.grad(p.id);
                for (int64_t i = 0; i < rows * n; ++i) {
                    dp.data[static_cast<size_t>(i)] += dc.data[static_cast<size_t>(row2 * n + i)];
                }
            }
            row2 += rows;
        }
    };
    return parts[0].tape->emit("concat_rows", std::move(out), ids, bw);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t m = parts[0].value().rows();
    int64_t total = 0;
    std::vector<int32_t> ids;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        require_same_tape(parts[0], p, "concat_cols");
        if (p.value().rows() != m) {
            throw std::invalid_argument("concat_cols row mismatch " + shape_str(p.value().shape));
        }
        total += p.value().cols();
        ids.push_back(p.id);
    }
    Tensor<T> out({m, total});
    int64_t col = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        const int64_t pc = pv.cols();
        for (int64_t i = 0; i < m; ++i) {
            std::copy(pv.data.begin() + i * pc, pv.data.begin() + (i + 1) * pc, out.data.begin() + i * total + col);
        }
        col += pc;
    }
    auto bw = [parts, m, total](Tape<T>& tape, int32_t self) {
        const Tensor<T>& dc = tape.grad(self);
        int64_t col2 = 0;
        for (const auto& p : parts) {
            const int64_t pc = tape.value(p.id).cols();
            if (tape.requires_grad(p.id)) {
                Tensor<T>& dp = tape.grad(p.id);
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < pc; ++j) {
                        dp.data[static_cast<size_t>(i * pc + j)] += dc.data[static_cast<size_t>(i * total + col2 + j)];
                    }
                }
            }
            col2 += pc;
        }
    };
    return parts[0].tape->emit("concat_cols", std::move(out), ids, bw);
}

template <typename T>
Var<T> sum_all(Var<T> a) {
    const auto& av = a.value();
    T acc = 0;
    for (T v : av.data) acc += v;
    Tensor<T> out({1}, std::vector<T>{acc});
    auto bw = [a](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const T up = tape.grad(self).data[0];
        Tensor<T>& da = tape.grad(a.id);
        for (T& v : da.data) v += up;
    };
    return a.tape->emit("sum", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> mean_all(Var<T> a) {
    const auto& av = a.value();
    T acc = 0;
    for (T v : av.data) acc += v;
    const T inv_n = T(1) / static_cast<T>(av.numel());
    Tensor<T> out({1}, std::vector<T>{acc * inv_n});
    auto bw = [a, inv_n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const T up = tape.grad(self).data[0] * inv_n;
        Tensor<T>& da = tape.grad(a.id);
        for (T& v : da.data) v += up;
    };
    return a.tape->emit("mean", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> variance_all(Var<T> a) {
    const auto& av = a.value();
    const T inv_n = T(1) / static_cast<T>(av.numel());
    T mean = 0;
    for (T v : av.data) mean += v;
    mean *= inv_n;
    T var = 0;
    for (T v : av.data) var += (v - mean) * (v - mean);
    var *= inv_n;
    Tensor<T> out({1}, std::vector<T>{var});
    auto bw = [a, mean, inv_n](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const T up = tape.grad(self).data[0];
        const Tensor<T>& av2 = tape.value(a.id);
        Tensor<T>& da = tape.grad(a.id);
        for (size_t i = 0; i < da.data.size(); ++i) {
            da.data[i] += up * T(2) * inv_n * (av2.data[i] - mean);
        }
    };
    return a.tape->emit("variance", std::move(out), {a.id}, bw);
}

template <typename T>
Var<T> mse(Var<T> pred, Var<T> target) {
    require_same_tape(pred, target, "mse");
    const auto& pv = pred.value();
    const auto& tv = target.value();
    if (!pv.same_shape(tv)) {
        throw std::invalid_argument("mse shape mismatch " + shape_str(pv.shape) + " vs " + shape_str(tv.shape));
    }
    const T inv_n = T(1) / static_cast<T>(pv.numel());
    T acc = 0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
        const T d = pv.data[i] - tv.data[i];
        acc += d * d;
    }
    Tensor<T> out({1}, std::vector<T>{acc * inv_n});
    auto bw = [pred, target, inv_n](Tape<T>& tape, int32_t self) {
        const T up = tape.grad(self).data[0];
        const Tensor<T>& pv2 = tape.value(pred.id);
        const Tensor<T>& tv2 = tape.value(target.id);
        if (tape.requires_grad(pred.id)) {
            Tensor<T>& dp = tape.grad(pred.id);
            for (size_t i = 0; i < dp.data.size(); ++i) {
                dp.data[i] += up * T(2) * inv_n * (pv2.data[i] - tv2.data[i]);
            }
        }
        if (tape.requires_grad(target.id)) {
            Tensor<T>& dt = tape.grad(target.id);
            for (size_t i = 0; i < dt.data.size(); ++i) {
                dt.data[i] -= up * T(2) * inv_n * (pv2.data[i] - tv2.data[i]);
            }
        }
    };
    return pred.tape->emit("mse", std::move(out), {pred.id, target.id}, bw);
}

template <typename T>
Var<T> weighted_mse(Var<T> pred, Var<T> target, const Tensor<T>& weights) {
    require_same_tape(pred, target, "weighted_mse");
    const auto& pv = pred.value();
    const auto& tv = target.value();
    if (!pv.same_shape(tv)) {
        throw std::invalid_argument("weighted_mse shape mismatch " + shape_str(pv.shape) + " vs " +
                                    shape_str(tv.shape));
    }
    if (weights.numel() != pv.numel()) {
        throw std::invalid_argument("weighted_mse weights " + shape_str(weights.shape) + " do not match " +
                                    shape_str(pv.shape));
    }
    T wsum = 0;
    for (T w : weights.data) wsum += w;
    if (!(wsum > T(0))) throw std::runtime_error("weighted_mse: zero total weight");
    T acc = 0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
        const T d = pv.data[i] - tv.data[i];
        acc += weights.data[i] * d * d;
    }
    Tensor<T> out({1}, std::vector<T>{acc / wsum});
    auto w = std::make_shared<const Tensor<T>>(weights);
    auto bw = [pred, target, w, wsum](Tape<T>& tape, int32_t self) {
        const T up = tape.grad(self).data[0] / wsum;
        const Tensor<T>& pv2 = tape.value(pred.id);
        const Tensor<T>& tv2 = tape.value(target.id);
        if (tape.requires_grad(pred.id)) {
            Tensor<T>& dp = tape.grad(pred.id);
            for (size_t i = 0; i < dp.data.size(); ++i) {
                dp.data[i] += up * T(2) * w->data[i] * (pv2.data[i] - tv2.data[i]);
            }
        }
        if (tape.requires_grad(target.id)) {
            Tensor<T>& dt = tape.grad(target.id);
            for (size_t i = 0; i < dt.data.size(); ++i) {
                dt.data[i] -= up * T(2) * w->data[i] * (pv2.data[i] - tv2.data[i]);
            }
        }
    };
    return pred.tape->emit("weighted_mse", std::move(out), {pred.id, target.id}, bw);
}

template <typename T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const Mask& mask) {
    require_2d(q, "masked_attention");
    require_2d(k, "masked_attention");
    require_2d(v, "masked_attention");
    const int64_t L = q.value().rows();
    const int64_t dh = q.value().cols();
    if (dh < 1) throw std::invalid_argument("masked_attention: head dim must be >= 1");
    if (k.value().rows() != L || k.value().cols() != dh || v.value().rows() != L) {
        throw std::invalid_argument("masked_attention shape mismatch: Q " + shape_str(q.shape()) + ", K " +
                                    shape_str(k.shape()) + ", V " + shape_str(v.shape()));
    }
    if (mask.rows != L || mask.cols != L) {
        throw std::invalid_argument("masked_attention: mask must be [" + std::to_string(L) + "," +
                                    std::to_string(L) + "]");
    }
    Var<T> scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(dh)));
    Var<T> weights = softmax_masked(scores, mask);
    return matmul(weights, v);
}

template <typename T>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: probability must lie in [0,1)");
    const auto& av = a.value();
    auto keep = std::make_shared<std::vector<uint8_t>>(av.data.size());
    const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> out = av;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const bool kept = rng.uniform() >= p;
        (*keep)[i] = kept ? 1 : 0;
        out.data[i] = kept ? out.data[i] * inv_keep : T(0);
    }
    auto bw = [a, keep, inv_keep](Tape<T>& tape, int32_t self) {
        if (!tape.requires_grad(a.id)) return;
        const Tensor<T>& dc = tape.grad(self);
        Tensor<T>& da = tape.grad(a.id);
        for (size_t i = 0; i < da.data.size(); ++i) {
            if ((*keep)[i]) da.data[i] += dc.data[i] * inv_keep;
        }
    };
    return a.tape->emit("dropout", std::move(out), {a.id}, bw);
}

template <typename T>
std::map<std::string, Tensor<T>> grad(Var<T> loss, const std::map<std::string, Var<T>>& params) {
    for (const auto& [name, p] : params) {
        if (p.tape != loss.tape) {
            throw std::invalid_argument("grad: parameter '" + name + "' lives on a different tape");
        }
    }
    loss.tape->backward(loss);
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, p] : params) out.emplace(name, loss.tape->grad_of(p));
    return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define VICON_INSTANTIATE(T)                                                                          \
    template class Tape<T>;                                                                           \
    template void mm_nn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, bool);                  \
    template void mm_nt<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, bool);                  \
    template void mm_tn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, bool);                  \
    template Var<T> matmul<T>(Var<T>, Var<T>);                                                        \
    template Var<T> add<T>(Var<T>, Var<T>);                                                           \
    template Var<T> sub<T>(Var<T>, Var<T>);                                                           \
    template Var<T> mul<T>(Var<T>, Var<T>);                                                           \
    template Var<T> scale<T>(Var<T>, T);                                                              \
    template Var<T> gelu<T>(Var<T>);                                                                  \
    template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                         \
    template Var<T> softmax_masked<T>(Var<T>, const Mask&);                                           \
    template Var<T> transpose<T>(Var<T>);                                                             \
    template Var<T> reshape<T>(Var<T>, Shape);                                                        \
    template Var<T> slice_rows<T>(Var<T>, int64_t, int64_t);                                          \
    template Var<T> slice_cols<T>(Var<T>, int64_t, int64_t);                                          \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                       \
    template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                       \
    template Var<T> sum_all<T>(Var<T>);                                                               \
    template Var<T> mean_all<T>(Var<T>);                                                              \
    template Var<T> variance_all<T>(Var<T>);                                                          \
    template Var<T> mse<T>(Var<T>, Var<T>);                                                           \
    template Var<T> weighted_mse<T>(Var<T>, Var<T>, const Tensor<T>&);                                \
    template Var<T> masked_attention<T>(Var<T>, Var<T>, Var<T>, const Mask&);                         \
    template Var<T> dropout<T>(Var<T>, double, Rng&);                                                 \
    template std::map<std::string, Tensor<T>> grad<T>(Var<T>, const std::map<std::string, Var<T>>&);

VICON_INSTANTIATE(float)
VICON_INSTANTIATE(double)

#undef VICON_INSTANTIATE

}  // namespace vicon
