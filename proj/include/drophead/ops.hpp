#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "drophead/rng.hpp"
#include "drophead/tensor.hpp"

namespace drophead {

namespace detail {

template <typename T>
bool track(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
    if (!tape) return false;
    for (const Tensor<T>* t : ins)
        if ((*t).requires_grad()) return true;
    return false;
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) {
        throw shape_error(std::string(op) + ": expected rank-2 tensor, got " +
                          shape_str(t.shape()));
    }
}

}  // namespace detail

// C[m x n] = A[m x k] * B[k x n]
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw shape_error("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* po = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    check_finite(out, "matmul");
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([ah = a.handle(), bh = b.handle(), oh = out.handle(), m, k, n] {
            if (oh->grad.empty()) return;
            const T* g = oh->grad.data();
            if (ah->requires_grad) {
                if (ah->grad.empty()) ah->grad.assign(ah->value.size(), T(0));
                T* da = ah->grad.data();
                const T* pb = bh->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        for (std::size_t kk = 0; kk < k; ++kk)
                            da[i * k + kk] += gij * pb[kk * n + j];
                    }
            }
            if (bh->requires_grad) {
                if (bh->grad.empty()) bh->grad.assign(bh->value.size(), T(0));
                T* db = bh->grad.data();
                const T* pa = ah->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T aik = pa[i * k + kk];
                        const T* grow = g + i * n;
                        T* drow = db + kk * n;
                        for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
                    }
            }
        });
    }
    return out;
}

// C[m x n] = A[m x k] * B[n x k]^T
template <typename T>
Tensor<T> matmul_nt(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw shape_error("matmul_nt: inner extents disagree, " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()) + " transposed");
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* po = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            const T* arow = pa + i * k;
            const T* brow = pb + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            po[i * n + j] = acc;
        }
    }
    check_finite(out, "matmul_nt");
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([ah = a.handle(), bh = b.handle(), oh = out.handle(), m, k, n] {
            if (oh->grad.empty()) return;
            const T* g = oh->grad.data();
            if (ah->requires_grad) {
                if (ah->grad.empty()) ah->grad.assign(ah->value.size(), T(0));
                T* da = ah->grad.data();
                const T* pb = bh->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        const T* brow = pb + j * k;
                        T* drow = da + i * k;
                        for (std::size_t kk = 0; kk < k; ++kk) drow[kk] += gij * brow[kk];
                    }
            }
            if (bh->requires_grad) {
                if (bh->grad.empty()) bh->grad.assign(bh->value.size(), T(0));
                T* db = bh->grad.data();
                const T* pa = ah->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        const T* arow = pa + i * k;
                        T* drow = db + j * k;
                        for (std::size_t kk = 0; kk < k; ++kk) drow[kk] += gij * arow[kk];
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shapes differ, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
    check_finite(out, "add");
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([ah = a.handle(), bh = b.handle(), oh = out.handle()] {
            if (oh->grad.empty()) return;
            for (auto* h : {ah.get(), bh.get()}) {
                if (!h->requires_grad) continue;
                if (h->grad.empty()) h->grad.assign(h->value.size(), T(0));
                for (std::size_t i = 0; i < h->grad.size(); ++i) h->grad[i] += oh->grad[i];
            }
        });
    }
    return out;
}

// y[i,j] = x[i,j] + b[j]
template <typename T>
Tensor<T> add_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& b) {
    detail::require_matrix(x, "add_bias");
    if (b.rank() != 1 || b.numel() != x.cols()) {
        throw shape_error("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                          shape_str(x.shape()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = x(i, j) + b.at(j);
    check_finite(out, "add_bias");
    if (detail::track(tape, {&x, &b})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), bh = b.handle(), oh = out.handle(), m, n] {
            if (oh->grad.empty()) return;
            const T* g = oh->grad.data();
            if (xh->requires_grad) {
                if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
                for (std::size_t i = 0; i < m * n; ++i) xh->grad[i] += g[i];
            }
            if (bh->requires_grad) {
                if (bh->grad.empty()) bh->grad.assign(bh->value.size(), T(0));
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bh->grad[j] += g[i * n + j];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("mul: shapes differ, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
    check_finite(out, "mul");
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([ah = a.handle(), bh = b.handle(), oh = out.handle()] {
            if (oh->grad.empty()) return;
            if (ah->requires_grad) {
                if (ah->grad.empty()) ah->grad.assign(ah->value.size(), T(0));
                for (std::size_t i = 0; i < ah->grad.size(); ++i)
                    ah->grad[i] += bh->value[i] * oh->grad[i];
            }
            if (bh->requires_grad) {
                if (bh->grad.empty()) bh->grad.assign(bh->value.size(), T(0));
                for (std::size_t i = 0; i < bh->grad.size(); ++i)
                    bh->grad[i] += ah->value[i] * oh->grad[i];
            }
        });
    }
    return out;
}

// y = c * x for a plain constant c.
template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, double c) {
    const T cv = static_cast<T>(c);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = cv * x.at(i);
    check_finite(out, "scale");
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), oh = out.handle(), cv] {
            if (oh->grad.empty() || !xh->requires_grad) return;
            if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
            for (std::size_t i = 0; i < xh->grad.size(); ++i) xh->grad[i] += cv * oh->grad[i];
        });
    }
    return out;
}

// y = g * x where g is a scalar tensor (e.g. a head gate).
template <typename T>
Tensor<T> scale_by(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& g) {
    if (g.numel() != 1) {
        throw shape_error("scale_by: gate must be scalar, got " + shape_str(g.shape()));
    }
    const T gv = g.at(0);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = gv * x.at(i);
    check_finite(out, "scale_by");
    if (detail::track(tape, {&x, &g})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), gh = g.handle(), oh = out.handle(), gv] {
            if (oh->grad.empty()) return;
            if (xh->requires_grad) {
                if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
                for (std::size_t i = 0; i < xh->grad.size(); ++i)
                    xh->grad[i] += gv * oh->grad[i];
            }
            if (gh->requires_grad) {
                if (gh->grad.empty()) gh->grad.assign(1, T(0));
                T acc = 0;
                for (std::size_t i = 0; i < xh->value.size(); ++i)
                    acc += xh->value[i] * oh->grad[i];
                gh->grad[0] += acc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at(i) > T(0) ? x.at(i) : T(0);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), oh = out.handle()] {
            if (oh->grad.empty() || !xh->requires_grad) return;
            if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
            for (std::size_t i = 0; i < xh->grad.size(); ++i)
                if (xh->value[i] > T(0)) xh->grad[i] += oh->grad[i];
        });
    }
    return out;
}

// Row mask for softmax: entries excluded by causality or key padding get
// weight exactly 0 and receive exactly zero gradient.
struct SoftmaxMask {
    bool causal = false;
    const std::vector<std::uint8_t>* key_valid = nullptr;  // length = cols, 1 = attendable
};

template <typename T>
Tensor<T> softmax_rows(Tape<T>* tape, const Tensor<T>& x, const SoftmaxMask& mask = {}) {
    detail::require_matrix(x, "softmax_rows");
    check_finite(x, "softmax_rows(input)");
    const std::size_t m = x.rows(), n = x.cols();
    if (mask.key_valid && mask.key_valid->size() != n) {
        throw shape_error("softmax_rows: key mask length " +
                          std::to_string(mask.key_valid->size()) + " != cols " +
                          std::to_string(n));
    }
    auto admissible = [&](std::size_t i, std::size_t j) {
        if (mask.causal && j > i) return false;
        if (mask.key_valid && !(*mask.key_valid)[j]) return false;
        return true;
    };
    Tensor<T> out = Tensor<T>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        T mx = T(0);
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (!admissible(i, j)) continue;
            if (!any || x(i, j) > mx) mx = x(i, j);
            any = true;
        }
        if (!any) {
            throw numeric_error("softmax_rows: row " + std::to_string(i) +
                                " has no admissible entries");
        }
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!admissible(i, j)) continue;
            const T e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (admissible(i, j)) out(i, j) /= sum;
        }
    }
    check_finite(out, "softmax_rows");
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), oh = out.handle(), m, n] {
            if (oh->grad.empty() || !xh->requires_grad) return;
            if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = oh->value.data() + i * n;
                const T* gy = oh->grad.data() + i * n;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
                T* gx = xh->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// Per-vector standardization over the last extent, then affine transform.
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = 1e-5) {
    const std::size_t d = x.rank() == 2 ? x.cols() : x.numel();
    const std::size_t m = x.rank() == 2 ? x.rows() : 1;
    if (gain.numel() != d || bias.numel() != d) {
        throw shape_error("layer_norm: gain/bias length must be " + std::to_string(d));
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<T> xhat(m * d), istds(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.values().data() + i * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
        istds[i] = istd;
        for (std::size_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mu) * istd;
            xhat[i * d + j] = xh;
            out.at(i * d + j) = gain.at(j) * xh + bias.at(j);
        }
    }
    check_finite(out, "layer_norm");
    if (detail::track(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), gh = gain.handle(), bh = bias.handle(),
                      oh = out.handle(), xhat = std::move(xhat), istds = std::move(istds), m,
                      d] {
            if (oh->grad.empty()) return;
            for (std::size_t i = 0; i < m; ++i) {
                const T* gy = oh->grad.data() + i * d;
                const T* xr = xhat.data() + i * d;
                if (gh->requires_grad) {
                    if (gh->grad.empty()) gh->grad.assign(d, T(0));
                    for (std::size_t j = 0; j < d; ++j) gh->grad[j] += gy[j] * xr[j];
                }
                if (bh->requires_grad) {
                    if (bh->grad.empty()) bh->grad.assign(d, T(0));
                    for (std::size_t j = 0; j < d; ++j) bh->grad[j] += gy[j];
                }
                if (xh->requires_grad) {
                    if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
                    const T istd = istds[i];
                    T sum_g = 0, sum_gx = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = gy[j] * gh->value[j];
                        sum_g += dxh;
                        sum_gx += dxh * xr[j];
                    }
                    const T inv_d = T(1) / static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = gy[j] * gh->value[j];
                        xh->grad[i * d + j] +=
                            istd * (dxh - inv_d * sum_g - xr[j] * inv_d * sum_gx);
                    }
                }
            }
        });
    }
    return out;
}

// Mean negative log-softmax probability of the targets; rows with
// row_valid == 0 contribute exactly nothing.
template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const int> targets,
                        const std::vector<std::uint8_t>* row_valid = nullptr) {
    detail::require_matrix(logits, "cross_entropy");
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n) {
        throw shape_error("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(n) + " rows");
    }
    if (row_valid && row_valid->size() != n) {
        throw shape_error("cross_entropy: row mask length mismatch");
    }
    std::size_t n_valid = 0;
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (row_valid && !(*row_valid)[i]) continue;
        const int t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                                    " out of range for " + std::to_string(v) +
                                    " classes at row " + std::to_string(i));
        }
        const T* row = logits.values().data() + i * v;
        T mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[static_cast<std::size_t>(t)];
        ++n_valid;
    }
    if (n_valid == 0) throw shape_error("cross_entropy: no valid rows");
    Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n_valid));
    check_finite(out, "cross_entropy");
    if (detail::track(tape, {&logits})) {
        out.set_requires_grad(true);
        std::vector<int> tts(targets.begin(), targets.end());
        std::vector<std::uint8_t> valid =
            row_valid ? *row_valid : std::vector<std::uint8_t>(n, 1);
        tape->record([lh = logits.handle(), oh = out.handle(), tts = std::move(tts),
                      valid = std::move(valid), n, v, n_valid] {
            if (oh->grad.empty() || !lh->requires_grad) return;
            if (lh->grad.empty()) lh->grad.assign(lh->value.size(), T(0));
            const T g = oh->grad[0] / static_cast<T>(n_valid);
            for (std::size_t i = 0; i < n; ++i) {
                if (!valid[i]) continue;
                const T* row = lh->value.data() + i * v;
                T mx = row[0];
                for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                T sum = 0;
                for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
                T* grow = lh->grad.data() + i * v;
                for (std::size_t j = 0; j < v; ++j) {
                    T p = std::exp(row[j] - mx) / sum;
                    if (j == static_cast<std::size_t>(tts[i])) p -= T(1);
                    grow[j] += g * p;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> embedding_lookup(Tape<T>* tape, const Tensor<T>& table, std::span<const int> ids) {
    detail::require_matrix(table, "embedding_lookup");
    const std::size_t v = table.rows(), d = table.cols(), l = ids.size();
    for (std::size_t i = 0; i < l; ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw std::out_of_range("embedding_lookup: index " + std::to_string(ids[i]) +
                                    " out of range for vocab " + std::to_string(v));
        }
    }
    Tensor<T> out = Tensor<T>::zeros({l, d});
    for (std::size_t i = 0; i < l; ++i) {
        const T* row = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(row, row + d, out.values().data() + i * d);
    }
    check_finite(out, "embedding_lookup");
    if (detail::track(tape, {&table})) {
        out.set_requires_grad(true);
        std::vector<int> ids_copy(ids.begin(), ids.end());
        tape->record([th = table.handle(), oh = out.handle(), ids = std::move(ids_copy), d] {
            if (oh->grad.empty() || !th->requires_grad) return;
            if (th->grad.empty()) th->grad.assign(th->value.size(), T(0));
            for (std::size_t i = 0; i < ids.size(); ++i) {
                T* dst = th->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                const T* src = oh->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Column-wise concatenation of same-height matrices.
template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.rows() != m) {
            throw shape_error("concat_cols: row counts differ, " +
                              shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        total += p.cols();
    }
    Tensor<T> out = Tensor<T>::zeros({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p(i, j);
        off += p.cols();
    }
    bool any_grad = false;
    for (const auto& p : parts) any_grad |= p.requires_grad();
    if (tape && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<T>>> handles;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            handles.push_back(p.handle());
            widths.push_back(p.cols());
        }
        tape->record([handles = std::move(handles), widths = std::move(widths),
                      oh = out.handle(), m, total] {
            if (oh->grad.empty()) return;
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < handles.size(); ++pi) {
                auto& h = *handles[pi];
                const std::size_t w = widths[pi];
                if (h.requires_grad) {
                    if (h.grad.empty()) h.grad.assign(h.value.size(), T(0));
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            h.grad[i * w + j] += oh->grad[i * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

// Mean over (valid) rows -> [1 x d].
template <typename T>
Tensor<T> mean_rows(Tape<T>* tape, const Tensor<T>& x,
                    const std::vector<std::uint8_t>* row_valid = nullptr) {
    detail::require_matrix(x, "mean_rows");
    const std::size_t m = x.rows(), d = x.cols();
    if (row_valid && row_valid->size() != m) {
        throw shape_error("mean_rows: row mask length mismatch");
    }
    std::size_t cnt = 0;
    Tensor<T> out = Tensor<T>::zeros({1, d});
    for (std::size_t i = 0; i < m; ++i) {
        if (row_valid && !(*row_valid)[i]) continue;
        for (std::size_t j = 0; j < d; ++j) out.at(j) += x(i, j);
        ++cnt;
    }
    if (cnt == 0) throw shape_error("mean_rows: no valid rows");
    for (std::size_t j = 0; j < d; ++j) out.at(j) /= static_cast<T>(cnt);
    check_finite(out, "mean_rows");
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        std::vector<std::uint8_t> valid =
            row_valid ? *row_valid : std::vector<std::uint8_t>(m, 1);
        tape->record(
            [xh = x.handle(), oh = out.handle(), valid = std::move(valid), m, d, cnt] {
                if (oh->grad.empty() || !xh->requires_grad) return;
                if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
                const T inv = T(1) / static_cast<T>(cnt);
                for (std::size_t i = 0; i < m; ++i) {
                    if (!valid[i]) continue;
                    for (std::size_t j = 0; j < d; ++j)
                        xh->grad[i * d + j] += oh->grad[j] * inv;
                }
            });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    T total = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) total += x.at(i);
    Tensor<T> out = Tensor<T>::scalar(total);
    check_finite(out, "sum_all");
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([xh = x.handle(), oh = out.handle()] {
            if (oh->grad.empty() || !xh->requires_grad) return;
            if (xh->grad.empty()) xh->grad.assign(xh->value.size(), T(0));
            for (std::size_t i = 0; i < xh->grad.size(); ++i) xh->grad[i] += oh->grad[0];
        });
    }
    return out;
}

// Inverted unit dropout: kept entries scaled by 1/(1-p). p == 0 returns the
// input unchanged so the op is an exact no-op.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double p, RngStream rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(p));
    }
    if (p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.numel());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.next_bernoulli(p) ? T(0) : keep_scale;
    Tensor<T> mask_t = Tensor<T>::from(x.shape(), std::move(mask));
    return mul(tape, x, mask_t);
}

}  // namespace drophead
