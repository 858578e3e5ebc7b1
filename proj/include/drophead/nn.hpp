#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drophead/ops.hpp"
#include "drophead/rng.hpp"
#include "drophead/tensor.hpp"

namespace drophead {

enum class Mode { training, inference };
enum class MaskGranularity { per_example, per_batch };

// Per-layer binary keep vector xi (1 = kept) plus the rescale factor
// gamma = count_ones(xi) / H. All-dropped vectors are never constructed.
struct HeadMask {
    std::vector<std::uint8_t> xi;
    double gamma = 1.0;

    int num_heads() const { return static_cast<int>(xi.size()); }
    int count_ones() const {
        int c = 0;
        for (auto b : xi) c += b ? 1 : 0;
        return c;
    }
    static HeadMask keep_all(int h) { return {std::vector<std::uint8_t>(h, 1), 1.0}; }
    static HeadMask from_bits(std::vector<std::uint8_t> bits) {
        HeadMask m{std::move(bits), 1.0};
        const int ones = m.count_ones();
        if (ones < 1) throw std::invalid_argument("HeadMask: all-dropped mask");
        m.gamma = static_cast<double>(ones) / static_cast<double>(m.xi.size());
        return m;
    }
};

struct DropHeadConfig {
    double p = 0.0;  // probability that a head is dropped
    Mode mode = Mode::training;
    MaskGranularity granularity = MaskGranularity::per_example;
    StreamKey stream;              // (seed, layer/site, step [, example])
    bool rescale_after_wo = false; // default rescales head outputs before W^O
};

// Each head independently dropped with probability p; if every head comes up
// dropped the whole vector is resampled. Deterministic in cfg.stream.
inline HeadMask sample_head_mask(const DropHeadConfig& cfg, int num_heads) {
    if (cfg.mode != Mode::training) {
        throw std::invalid_argument("sample_head_mask: only valid in training mode");
    }
    if (!(cfg.p >= 0.0 && cfg.p < 1.0)) {
        throw std::invalid_argument("sample_head_mask: rate must be in [0,1), got " +
                                    std::to_string(cfg.p));
    }
    if (num_heads < 1) throw std::invalid_argument("sample_head_mask: need >= 1 head");
    StreamKey key = cfg.stream;
    if (cfg.granularity == MaskGranularity::per_batch) key.example = 0;
    key.tag = stream_tag::drophead;
    RngStream rng(key);
    HeadMask mask;
    mask.xi.resize(num_heads);
    int ones = 0;
    do {
        ones = 0;
        for (int i = 0; i < num_heads; ++i) {
            const bool dropped = rng.next_bernoulli(cfg.p);
            mask.xi[i] = dropped ? 0 : 1;
            ones += dropped ? 0 : 1;
        }
    } while (ones == 0);
    mask.gamma = static_cast<double>(ones) / static_cast<double>(num_heads);
    return mask;
}

// Zeroes dropped heads and scales kept heads by 1/gamma = H/count_ones(xi).
// Dropped heads receive exactly zero gradient.
template <typename T>
std::vector<Tensor<T>> apply_drophead(Tape<T>* tape, const std::vector<Tensor<T>>& heads,
                                      const HeadMask& mask, bool rescale = true) {
    if (static_cast<int>(heads.size()) != mask.num_heads()) {
        throw shape_error("apply_drophead: " + std::to_string(heads.size()) + " heads vs mask of " +
                          std::to_string(mask.num_heads()));
    }
    const double keep_coeff = rescale ? 1.0 / mask.gamma : 1.0;
    std::vector<Tensor<T>> out;
    out.reserve(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i) {
        out.push_back(scale(tape, heads[i], mask.xi[i] ? keep_coeff : 0.0));
    }
    return out;
}

struct AttentionMask {
    bool causal = false;
    const std::vector<std::uint8_t>* key_valid = nullptr;
};

template <typename T>
struct AttentionOut {
    Tensor<T> output;
    Tensor<T> weights;
};

// output = softmax(Q K^T / sqrt(d_k)) V with optional causal / key-padding
// masking applied inside the softmax (masked weights are exactly 0).
template <typename T>
AttentionOut<T> scaled_dot_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                                     const Tensor<T>& v, const AttentionMask& mask = {},
                                     double attn_dropout_p = 0.0,
                                     const StreamKey* dropout_key = nullptr) {
    detail::require_matrix(q, "scaled_dot_attention");
    detail::require_matrix(k, "scaled_dot_attention");
    detail::require_matrix(v, "scaled_dot_attention");
    if (q.cols() != k.cols()) {
        throw shape_error("scaled_dot_attention: d_k mismatch, Q " + shape_str(q.shape()) +
                          " vs K " + shape_str(k.shape()));
    }
    if (k.rows() != v.rows()) {
        throw shape_error("scaled_dot_attention: l_k mismatch, K " + shape_str(k.shape()) +
                          " vs V " + shape_str(v.shape()));
    }
    if (mask.causal && q.rows() != k.rows()) {
        throw shape_error("scaled_dot_attention: causal masking needs l_q == l_k, got " +
                          std::to_string(q.rows()) + " vs " + std::to_string(k.rows()));
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor<T> logits = scale(tape, matmul_nt(tape, q, k), inv_sqrt_dk);
    SoftmaxMask sm{mask.causal, mask.key_valid};
    Tensor<T> weights = softmax_rows(tape, logits, sm);
    Tensor<T> applied = weights;
    if (attn_dropout_p > 0.0) {
        StreamKey key = dropout_key ? *dropout_key : StreamKey{};
        key.tag = stream_tag::attn_dropout;
        applied = dropout(tape, weights, attn_dropout_p, RngStream(key));
    }
    return {matmul(tape, applied, v), weights};
}

// Per-head projections W_i^Q, W_i^K, W_i^V (d x d_head each) plus the output
// projection W^O (d x d) and optional output bias.
template <typename T>
struct AttentionParams {
    int num_heads = 0;
    int d_model = 0;
    int d_head = 0;
    std::vector<Tensor<T>> wq, wk, wv;
    Tensor<T> wo;
    Tensor<T> bo;  // undefined() when the projection has no bias

    static AttentionParams init(int num_heads, int d_model, RngStream& rng, bool bias = true) {
        if (num_heads < 1 || d_model < 1 || d_model % num_heads != 0) {
            throw std::invalid_argument("AttentionParams: num_heads must divide d_model, got H=" +
                                        std::to_string(num_heads) +
                                        " d=" + std::to_string(d_model));
        }
        AttentionParams p;
        p.num_heads = num_heads;
        p.d_model = d_model;
        p.d_head = d_model / num_heads;
        auto randn = [&rng](std::size_t r, std::size_t c) {
            std::vector<T> v(r * c);
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(r));
            for (auto& x : v) x = static_cast<T>(rng.next_normal() * std_dev);
            return Tensor<T>::param({r, c}, std::move(v));
        };
        for (int i = 0; i < num_heads; ++i) {
            p.wq.push_back(randn(d_model, p.d_head));
            p.wk.push_back(randn(d_model, p.d_head));
            p.wv.push_back(randn(d_model, p.d_head));
        }
        p.wo = randn(d_model, d_model);
        if (bias) p.bo = Tensor<T>::param({static_cast<std::size_t>(d_model)},
                                          std::vector<T>(d_model, T(0)));
        return p;
    }
};

template <typename T>
struct MhaOptions {
    Mode mode = Mode::inference;
    bool causal = false;
    const std::vector<std::uint8_t>* key_valid = nullptr;
    const DropHeadConfig* drophead = nullptr;   // nullptr = DropHead off
    const HeadMask* forced_mask = nullptr;      // diagnostics; overrides sampling
    bool forced_rescale = true;
    const std::vector<Tensor<T>>* head_gates = nullptr;  // importance probes
    double attn_dropout_p = 0.0;                          // unit dropout on weights
    StreamKey attn_dropout_key;
};

// head_i = Attn(X_q W_i^Q, X_kv W_i^K, X_kv W_i^V); DropHead masks and
// rescales heads before concatenation; result = concat(heads) W^O (+ bias).
template <typename T>
Tensor<T> multi_head_attention(Tape<T>* tape, const Tensor<T>& x_q, const Tensor<T>& x_kv,
                               const AttentionParams<T>& params, const MhaOptions<T>& opt) {
    if (x_q.cols() != static_cast<std::size_t>(params.d_model) ||
        x_kv.cols() != static_cast<std::size_t>(params.d_model)) {
        throw shape_error("multi_head_attention: input width != d_model " +
                          std::to_string(params.d_model) + ", got " + shape_str(x_q.shape()) +
                          " / " + shape_str(x_kv.shape()));
    }
    if (opt.drophead && opt.drophead->mode == Mode::training && opt.mode == Mode::inference) {
        throw std::invalid_argument(
            "multi_head_attention: DropHead config active in inference mode");
    }
    const int h = params.num_heads;
    std::vector<Tensor<T>> heads;
    heads.reserve(h);
    AttentionMask amask{opt.causal, opt.key_valid};
    const bool use_attn_dropout = opt.attn_dropout_p > 0.0 && opt.mode == Mode::training;
    for (int i = 0; i < h; ++i) {
        Tensor<T> q = matmul(tape, x_q, params.wq[i]);
        Tensor<T> k = matmul(tape, x_kv, params.wk[i]);
        Tensor<T> v = matmul(tape, x_kv, params.wv[i]);
        StreamKey dk = opt.attn_dropout_key;
        dk.site = dk.site * 64 + static_cast<std::uint64_t>(i);
        auto att = scaled_dot_attention(tape, q, k, v, amask,
                                        use_attn_dropout ? opt.attn_dropout_p : 0.0, &dk);
        Tensor<T> head = att.output;
        if (opt.head_gates) {
            if (static_cast<int>(opt.head_gates->size()) != h) {
                throw shape_error("multi_head_attention: gate count != num_heads");
            }
            head = scale_by(tape, head, (*opt.head_gates)[i]);
        }
        heads.push_back(head);
    }

    std::optional<HeadMask> mask;
    bool rescale_before_wo = true;
    bool rescale_after_wo = false;
    if (opt.forced_mask) {
        mask = *opt.forced_mask;
        rescale_before_wo = opt.forced_rescale;
    } else if (opt.drophead && opt.mode == Mode::training &&
               opt.drophead->mode == Mode::training) {
        mask = sample_head_mask(*opt.drophead, h);
        if (opt.drophead->rescale_after_wo) {
            rescale_before_wo = false;
            rescale_after_wo = true;
        }
    }
    if (mask) {
        heads = apply_drophead(tape, heads, *mask, rescale_before_wo);
    }

    Tensor<T> concat = concat_cols(tape, heads);
    Tensor<T> out = matmul(tape, concat, params.wo);
    if (params.bo.defined()) out = add_bias(tape, out, params.bo);
    if (mask && rescale_after_wo) out = scale(tape, out, 1.0 / mask->gamma);
    return out;
}

enum class Activation { relu_fn, linear_fn };

template <typename T>
struct FeedForwardParams {
    Tensor<T> w1, b1, w2, b2;

    static FeedForwardParams init(int d_model, int d_ff, RngStream& rng) {
        FeedForwardParams p;
        auto randn = [&rng](std::size_t r, std::size_t c) {
            std::vector<T> v(r * c);
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(r));
            for (auto& x : v) x = static_cast<T>(rng.next_normal() * std_dev);
            return Tensor<T>::param({r, c}, std::move(v));
        };
        p.w1 = randn(d_model, d_ff);
        p.b1 = Tensor<T>::param({static_cast<std::size_t>(d_ff)}, std::vector<T>(d_ff, T(0)));
        p.w2 = randn(d_ff, d_model);
        p.b2 = Tensor<T>::param({static_cast<std::size_t>(d_model)},
                                std::vector<T>(d_model, T(0)));
        return p;
    }
};

// Two affine maps with a nonlinearity between; residual and layer norm are
// the caller's business.
template <typename T>
Tensor<T> feed_forward_block(Tape<T>* tape, const Tensor<T>& x, const FeedForwardParams<T>& p,
                             Activation act = Activation::relu_fn) {
    Tensor<T> hidden = add_bias(tape, matmul(tape, x, p.w1), p.b1);
    if (act == Activation::relu_fn) hidden = relu(tape, hidden);
    return add_bias(tape, matmul(tape, hidden, p.w2), p.b2);
}

}  // namespace drophead
