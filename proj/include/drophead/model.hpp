#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drophead/data.hpp"
#include "drophead/nn.hpp"
#include "drophead/ops.hpp"
#include "drophead/rng.hpp"

namespace drophead {

enum class Architecture { classifier, seq2seq };
enum class StackId { encoder, decoder };
enum class AttnType { enc_enc, enc_dec, dec_dec };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);
std::string to_string(AttnType t);
AttnType attn_type_from_string(const std::string& s);

// Stable identifier for one attention sublayer; used for rng streams, mask
// overrides and importance reports.
struct AttnSite {
    StackId stack = StackId::encoder;
    int layer = 0;
    AttnType type = AttnType::enc_enc;

    int id() const {
        switch (type) {
            case AttnType::enc_enc: return layer;
            case AttnType::dec_dec: return 1000 + layer;
            case AttnType::enc_dec: return 2000 + layer;
        }
        return -1;
    }
    bool operator<(const AttnSite& o) const { return id() < o.id(); }
    bool operator==(const AttnSite& o) const { return id() == o.id(); }
};

struct PlacementFlags {
    bool enc_enc = true;
    bool enc_dec = true;
    bool dec_dec = true;

    bool enabled(AttnType t) const {
        switch (t) {
            case AttnType::enc_enc: return enc_enc;
            case AttnType::enc_dec: return enc_dec;
            case AttnType::dec_dec: return dec_dec;
        }
        return false;
    }
    bool any() const { return enc_enc || enc_dec || dec_dec; }
};

struct ModelConfig {
    Architecture architecture = Architecture::seq2seq;
    int num_encoder_layers = 2;
    int num_decoder_layers = 2;
    int num_heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int vocab = 32;
    int max_len = 64;
    int num_classes = 4;     // classifier only
    PlacementFlags placement;
    double ff_dropout = 0.1;
    bool tied_output = false;  // seq2seq: project logits through the embedding

    void validate() const;
};

// Per-step stochastic-regularization state threaded through a forward pass.
struct DropState {
    bool drophead_on = false;
    double drophead_p = 0.0;
    MaskGranularity granularity = MaskGranularity::per_example;
    bool rescale_after_wo = false;
    double attn_dropout_p = 0.0;
    double ff_dropout_p = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::uint64_t example = 0;
};

// Diagnostic hooks: force specific head masks or attach importance gates.
template <typename T>
struct ForwardOverrides {
    const std::map<int, HeadMask>* forced_masks = nullptr;  // keyed by AttnSite::id()
    bool forced_rescale = true;
    const std::map<int, std::vector<Tensor<T>>>* head_gates = nullptr;
};

template <typename T>
struct EncoderLayer {
    AttentionParams<T> self_attn;
    FeedForwardParams<T> ff;
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
};

template <typename T>
struct DecoderLayer {
    AttentionParams<T> self_attn;
    AttentionParams<T> cross_attn;
    FeedForwardParams<T> ff;
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

template <typename T>
struct TransformerModel {
    ModelConfig config;
    Tensor<T> embedding;  // [vocab x d]
    Tensor<T> pos_enc;    // [max_len x d], sinusoidal, not learned
    std::vector<EncoderLayer<T>> encoder;
    std::vector<DecoderLayer<T>> decoder;
    Tensor<T> enc_ln_g, enc_ln_b;  // final norm of the encoder stack
    Tensor<T> dec_ln_g, dec_ln_b;  // final norm of the decoder stack (seq2seq)
    Tensor<T> out_w, out_b;        // zero-initialized output head (untied)

    static TransformerModel init(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<std::pair<std::string, Tensor<T>>> named_params();
    void zero_grads();
    std::vector<AttnSite> attention_sites() const;
};

namespace detail_model {

template <typename T>
Tensor<T> ones_param(std::size_t n) {
    return Tensor<T>::param({n}, std::vector<T>(n, T(1)));
}
template <typename T>
Tensor<T> zeros_param(std::size_t n) {
    return Tensor<T>::param({n}, std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> sinusoidal_positions(int max_len, int d) {
    std::vector<T> v(static_cast<std::size_t>(max_len) * d);
    for (int pos = 0; pos < max_len; ++pos) {
        for (int i = 0; i < d; i += 2) {
            const double angle =
                pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            v[pos * d + i] = static_cast<T>(std::sin(angle));
            if (i + 1 < d) v[pos * d + i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>::from({static_cast<std::size_t>(max_len), static_cast<std::size_t>(d)},
                           std::move(v));
}

}  // namespace detail_model

void validate_model_config_impl(const ModelConfig& cfg);

inline void ModelConfig::validate() const { validate_model_config_impl(*this); }

template <typename T>
TransformerModel<T> TransformerModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    using detail_model::ones_param;
    using detail_model::zeros_param;
    TransformerModel<T> m;
    m.config = cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    std::uint64_t site_counter = 0;
    auto next_rng = [&] { return RngStream(seed, ++site_counter, 0, 0, stream_tag::init); };
    {
        RngStream rng = next_rng();
        std::vector<T> v(static_cast<std::size_t>(cfg.vocab) * d);
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        for (auto& x : v) x = static_cast<T>(rng.next_normal() * std_dev);
        m.embedding = Tensor<T>::param({static_cast<std::size_t>(cfg.vocab), d}, std::move(v));
    }
    m.pos_enc = detail_model::sinusoidal_positions<T>(cfg.max_len, cfg.d_model);
    for (int l = 0; l < cfg.num_encoder_layers; ++l) {
        EncoderLayer<T> layer;
        RngStream attn_rng = next_rng();
        layer.self_attn = AttentionParams<T>::init(cfg.num_heads, cfg.d_model, attn_rng);
        RngStream ff_rng = next_rng();
        layer.ff = FeedForwardParams<T>::init(cfg.d_model, cfg.d_ff, ff_rng);
        layer.ln1_g = ones_param<T>(d);
        layer.ln1_b = zeros_param<T>(d);
        layer.ln2_g = ones_param<T>(d);
        layer.ln2_b = zeros_param<T>(d);
        m.encoder.push_back(std::move(layer));
    }
    if (cfg.architecture == Architecture::seq2seq) {
        for (int l = 0; l < cfg.num_decoder_layers; ++l) {
            DecoderLayer<T> layer;
            RngStream self_rng = next_rng();
            layer.self_attn = AttentionParams<T>::init(cfg.num_heads, cfg.d_model, self_rng);
            RngStream cross_rng = next_rng();
            layer.cross_attn = AttentionParams<T>::init(cfg.num_heads, cfg.d_model, cross_rng);
            RngStream ff_rng = next_rng();
            layer.ff = FeedForwardParams<T>::init(cfg.d_model, cfg.d_ff, ff_rng);
            layer.ln1_g = ones_param<T>(d);
            layer.ln1_b = zeros_param<T>(d);
            layer.ln2_g = ones_param<T>(d);
            layer.ln2_b = zeros_param<T>(d);
            layer.ln3_g = ones_param<T>(d);
            layer.ln3_b = zeros_param<T>(d);
            m.decoder.push_back(std::move(layer));
        }
    }
    m.enc_ln_g = ones_param<T>(d);
    m.enc_ln_b = zeros_param<T>(d);
    if (cfg.architecture == Architecture::seq2seq) {
        m.dec_ln_g = ones_param<T>(d);
        m.dec_ln_b = zeros_param<T>(d);
    }
    const std::size_t out_dim = cfg.architecture == Architecture::classifier
                                    ? static_cast<std::size_t>(cfg.num_classes)
                                    : static_cast<std::size_t>(cfg.vocab);
    if (!(cfg.architecture == Architecture::seq2seq && cfg.tied_output)) {
        m.out_w = Tensor<T>::param({d, out_dim}, std::vector<T>(d * out_dim, T(0)));
    }
    m.out_b = zeros_param<T>(out_dim);
    return m;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> TransformerModel<T>::named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embedding", embedding);
    auto add_attn = [&out](const std::string& prefix, AttentionParams<T>& a) {
        for (int i = 0; i < a.num_heads; ++i) {
            const std::string h = std::to_string(i);
            out.emplace_back(prefix + ".wq" + h, a.wq[i]);
            out.emplace_back(prefix + ".wk" + h, a.wk[i]);
            out.emplace_back(prefix + ".wv" + h, a.wv[i]);
        }
        out.emplace_back(prefix + ".wo", a.wo);
        if (a.bo.defined()) out.emplace_back(prefix + ".bo", a.bo);
    };
    auto add_ff = [&out](const std::string& prefix, FeedForwardParams<T>& f) {
        out.emplace_back(prefix + ".w1", f.w1);
        out.emplace_back(prefix + ".b1", f.b1);
        out.emplace_back(prefix + ".w2", f.w2);
        out.emplace_back(prefix + ".b2", f.b2);
    };
    for (std::size_t l = 0; l < encoder.size(); ++l) {
        const std::string p = "encoder." + std::to_string(l);
        add_attn(p + ".self", encoder[l].self_attn);
        add_ff(p + ".ff", encoder[l].ff);
        out.emplace_back(p + ".ln1_g", encoder[l].ln1_g);
        out.emplace_back(p + ".ln1_b", encoder[l].ln1_b);
        out.emplace_back(p + ".ln2_g", encoder[l].ln2_g);
        out.emplace_back(p + ".ln2_b", encoder[l].ln2_b);
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
        const std::string p = "decoder." + std::to_string(l);
        add_attn(p + ".self", decoder[l].self_attn);
        add_attn(p + ".cross", decoder[l].cross_attn);
        add_ff(p + ".ff", decoder[l].ff);
        out.emplace_back(p + ".ln1_g", decoder[l].ln1_g);
        out.emplace_back(p + ".ln1_b", decoder[l].ln1_b);
        out.emplace_back(p + ".ln2_g", decoder[l].ln2_g);
        out.emplace_back(p + ".ln2_b", decoder[l].ln2_b);
        out.emplace_back(p + ".ln3_g", decoder[l].ln3_g);
        out.emplace_back(p + ".ln3_b", decoder[l].ln3_b);
    }
    out.emplace_back("enc_ln_g", enc_ln_g);
    out.emplace_back("enc_ln_b", enc_ln_b);
    if (dec_ln_g.defined()) {
        out.emplace_back("dec_ln_g", dec_ln_g);
        out.emplace_back("dec_ln_b", dec_ln_b);
    }
    if (out_w.defined()) out.emplace_back("out_w", out_w);
    out.emplace_back("out_b", out_b);
    return out;
}

template <typename T>
void TransformerModel<T>::zero_grads() {
    for (auto& [name, t] : named_params()) t.zero_grad();
}

template <typename T>
std::vector<AttnSite> TransformerModel<T>::attention_sites() const {
    std::vector<AttnSite> sites;
    for (int l = 0; l < static_cast<int>(encoder.size()); ++l) {
        sites.push_back({StackId::encoder, l, AttnType::enc_enc});
    }
    for (int l = 0; l < static_cast<int>(decoder.size()); ++l) {
        sites.push_back({StackId::decoder, l, AttnType::dec_dec});
        sites.push_back({StackId::decoder, l, AttnType::enc_dec});
    }
    return sites;
}

namespace detail_model {

// Builds MhaOptions for one attention site from the drop state + overrides.
// The caller must call wire() once the struct has its final address, since
// opt.drophead points at the embedded config.
template <typename T>
struct SiteContext {
    MhaOptions<T> opt;
    DropHeadConfig drophead_cfg;
    bool has_drophead = false;

    MhaOptions<T>& wire() {
        if (has_drophead) opt.drophead = &drophead_cfg;
        return opt;
    }
};

template <typename T>
SiteContext<T> site_options(const ModelConfig& mc, const AttnSite& site, Mode mode,
                            const DropState& drop, const ForwardOverrides<T>* ov) {
    SiteContext<T> ctx;
    ctx.opt.mode = mode;
    if (ov && ov->forced_masks) {
        auto it = ov->forced_masks->find(site.id());
        if (it != ov->forced_masks->end()) {
            ctx.opt.forced_mask = &it->second;
            ctx.opt.forced_rescale = ov->forced_rescale;
        }
    }
    if (ov && ov->head_gates) {
        auto it = ov->head_gates->find(site.id());
        if (it != ov->head_gates->end()) ctx.opt.head_gates = &it->second;
    }
    const bool placed = mc.placement.enabled(site.type);
    if (drop.drophead_on && placed && mode == Mode::training && !ctx.opt.forced_mask) {
        ctx.drophead_cfg.p = drop.drophead_p;
        ctx.drophead_cfg.mode = Mode::training;
        ctx.drophead_cfg.granularity = drop.granularity;
        ctx.drophead_cfg.rescale_after_wo = drop.rescale_after_wo;
        ctx.drophead_cfg.stream = StreamKey{drop.seed, static_cast<std::uint64_t>(site.id()),
                                            drop.step, drop.example, 0};
        ctx.has_drophead = true;
    }
    if (drop.attn_dropout_p > 0.0 && placed && mode == Mode::training) {
        ctx.opt.attn_dropout_p = drop.attn_dropout_p;
        ctx.opt.attn_dropout_key = StreamKey{drop.seed, static_cast<std::uint64_t>(site.id()),
                                             drop.step, drop.example, 0};
    }
    return ctx;
}

template <typename T>
Tensor<T> embed(Tape<T>* tape, const TransformerModel<T>& m, std::span<const int> tokens) {
    if (tokens.size() > static_cast<std::size_t>(m.config.max_len)) {
        throw shape_error("forward: sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_len " + std::to_string(m.config.max_len));
    }
    Tensor<T> x = embedding_lookup(tape, m.embedding, tokens);
    x = scale(tape, x, std::sqrt(static_cast<double>(m.config.d_model)));
    const std::size_t l = tokens.size(), d = static_cast<std::size_t>(m.config.d_model);
    std::vector<T> pos(l * d);
    std::copy(m.pos_enc.values().data(), m.pos_enc.values().data() + l * d, pos.begin());
    return add(tape, x, Tensor<T>::from({l, d}, std::move(pos)));
}

template <typename T>
Tensor<T> ff_sublayer(Tape<T>* tape, const Tensor<T>& x, const FeedForwardParams<T>& ff,
                      const Tensor<T>& ln_g, const Tensor<T>& ln_b, Mode mode,
                      const DropState& drop, std::uint64_t ff_site) {
    Tensor<T> h = layer_norm(tape, x, ln_g, ln_b);
    Tensor<T> f = feed_forward_block(tape, h, ff);
    if (mode == Mode::training && drop.ff_dropout_p > 0.0) {
        f = dropout(tape, f, drop.ff_dropout_p,
                    RngStream(drop.seed, ff_site, drop.step, drop.example,
                              stream_tag::ff_dropout));
    }
    return add(tape, x, f);
}

}  // namespace detail_model

// Encoder stack over already-embedded input; returns the normalized memory.
template <typename T>
Tensor<T> encode(Tape<T>* tape, const TransformerModel<T>& m, std::span<const int> src,
                 Mode mode, const DropState& drop = {},
                 const ForwardOverrides<T>* ov = nullptr,
                 const std::vector<std::uint8_t>* src_valid = nullptr) {
    using namespace detail_model;
    Tensor<T> x = embed(tape, m, src);
    for (int l = 0; l < static_cast<int>(m.encoder.size()); ++l) {
        const EncoderLayer<T>& layer = m.encoder[l];
        AttnSite site{StackId::encoder, l, AttnType::enc_enc};
        auto ctx = site_options<T>(m.config, site, mode, drop, ov);
        ctx.opt.key_valid = src_valid;
        Tensor<T> h = layer_norm(tape, x, layer.ln1_g, layer.ln1_b);
        Tensor<T> a = multi_head_attention(tape, h, h, layer.self_attn, ctx.wire());
        x = add(tape, x, a);
        x = ff_sublayer(tape, x, layer.ff, layer.ln2_g, layer.ln2_b, mode, drop,
                        3000 + static_cast<std::uint64_t>(l));
    }
    return layer_norm(tape, x, m.enc_ln_g, m.enc_ln_b);
}

// Decoder over embedded target prefix + encoder memory; causal self-attention.
template <typename T>
Tensor<T> decode_logits(Tape<T>* tape, const TransformerModel<T>& m, const Tensor<T>& memory,
                        std::span<const int> tgt_in, Mode mode, const DropState& drop = {},
                        const ForwardOverrides<T>* ov = nullptr,
                        const std::vector<std::uint8_t>* src_valid = nullptr) {
    using namespace detail_model;
    Tensor<T> x = embed(tape, m, tgt_in);
    for (int l = 0; l < static_cast<int>(m.decoder.size()); ++l) {
        const DecoderLayer<T>& layer = m.decoder[l];
        {
            AttnSite site{StackId::decoder, l, AttnType::dec_dec};
            auto ctx = site_options<T>(m.config, site, mode, drop, ov);
            ctx.opt.causal = true;
            Tensor<T> h = layer_norm(tape, x, layer.ln1_g, layer.ln1_b);
            Tensor<T> a = multi_head_attention(tape, h, h, layer.self_attn, ctx.wire());
            x = add(tape, x, a);
        }
        {
            AttnSite site{StackId::decoder, l, AttnType::enc_dec};
            auto ctx = site_options<T>(m.config, site, mode, drop, ov);
            ctx.opt.key_valid = src_valid;
            Tensor<T> h = layer_norm(tape, x, layer.ln2_g, layer.ln2_b);
            Tensor<T> a = multi_head_attention(tape, h, memory, layer.cross_attn, ctx.wire());
            x = add(tape, x, a);
        }
        x = ff_sublayer(tape, x, layer.ff, layer.ln3_g, layer.ln3_b, mode, drop,
                        4000 + static_cast<std::uint64_t>(l));
    }
    x = layer_norm(tape, x, m.dec_ln_g, m.dec_ln_b);
    Tensor<T> logits = m.config.tied_output ? matmul_nt(tape, x, m.embedding)
                                            : matmul(tape, x, m.out_w);
    return add_bias(tape, logits, m.out_b);
}

// Embedding + encoder stack + mean pooling + classification head.
template <typename T>
Tensor<T> forward_classifier(Tape<T>* tape, const TransformerModel<T>& m,
                             std::span<const int> tokens, Mode mode, const DropState& drop = {},
                             const ForwardOverrides<T>* ov = nullptr,
                             const std::vector<std::uint8_t>* valid = nullptr) {
    if (m.config.architecture != Architecture::classifier) {
        throw std::invalid_argument("forward_classifier: model is not a classifier");
    }
    Tensor<T> enc = encode(tape, m, tokens, mode, drop, ov, valid);
    Tensor<T> pooled = mean_rows(tape, enc, valid);
    return add_bias(tape, matmul(tape, pooled, m.out_w), m.out_b);
}

// Next-token logits for every target position.
template <typename T>
Tensor<T> forward_seq2seq(Tape<T>* tape, const TransformerModel<T>& m, std::span<const int> src,
                          std::span<const int> tgt_in, Mode mode, const DropState& drop = {},
                          const ForwardOverrides<T>* ov = nullptr,
                          const std::vector<std::uint8_t>* src_valid = nullptr) {
    if (m.config.architecture != Architecture::seq2seq) {
        throw std::invalid_argument("forward_seq2seq: model is not seq2seq");
    }
    Tensor<T> memory = encode(tape, m, src, mode, drop, ov, src_valid);
    return decode_logits(tape, m, memory, tgt_in, mode, drop, ov, src_valid);
}

// Iterative argmax decoding until EOS or max_len payload tokens; ties break
// toward the lowest index, so decoding is deterministic.
template <typename T>
std::vector<int> greedy_decode(const TransformerModel<T>& m, std::span<const int> src,
                               int max_len, const ForwardOverrides<T>* ov = nullptr) {
    Tensor<T> memory = encode<T>(nullptr, m, src, Mode::inference, {}, ov);
    std::vector<int> tgt{kBos};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
        Tensor<T> logits =
            decode_logits<T>(nullptr, m, memory, tgt, Mode::inference, {}, ov);
        const std::size_t last = logits.rows() - 1;
        int best = 0;
        T best_v = logits(last, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits(last, j) > best_v) {
                best_v = logits(last, j);
                best = static_cast<int>(j);
            }
        }
        if (best == kEos) break;
        out.push_back(best);
        tgt.push_back(best);
        if (tgt.size() >= static_cast<std::size_t>(m.config.max_len)) break;
    }
    return out;
}

}  // namespace drophead
