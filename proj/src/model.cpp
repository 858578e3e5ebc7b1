#include "drophead/model.hpp"

#include <stdexcept>

namespace drophead {

std::string to_string(Architecture a) {
    return a == Architecture::classifier ? "classifier" : "seq2seq";
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "classifier") return Architecture::classifier;
    if (s == "seq2seq") return Architecture::seq2seq;
    throw std::invalid_argument("unknown architecture: " + s);
}

std::string to_string(AttnType t) {
    switch (t) {
        case AttnType::enc_enc: return "enc_enc";
        case AttnType::enc_dec: return "enc_dec";
        case AttnType::dec_dec: return "dec_dec";
    }
    throw std::logic_error("unknown attention type");
}

AttnType attn_type_from_string(const std::string& s) {
    if (s == "enc_enc") return AttnType::enc_enc;
    if (s == "enc_dec") return AttnType::enc_dec;
    if (s == "dec_dec") return AttnType::dec_dec;
    throw std::invalid_argument("unknown attention type: " + s);
}

void validate_model_config_impl(const ModelConfig& cfg) {
    if (cfg.num_heads < 1 || cfg.d_model < 1 || cfg.d_model % cfg.num_heads != 0) {
        throw std::invalid_argument("ModelConfig: num_heads must divide d_model, got H=" +
                                    std::to_string(cfg.num_heads) +
                                    " d=" + std::to_string(cfg.d_model));
    }
    if (cfg.num_encoder_layers < 1) {
        throw std::invalid_argument("ModelConfig: need at least one encoder layer");
    }
    if (cfg.architecture == Architecture::seq2seq && cfg.num_decoder_layers < 1) {
        throw std::invalid_argument("ModelConfig: seq2seq needs at least one decoder layer");
    }
    if (cfg.vocab < kFirstSymbol + 1) {
        throw std::invalid_argument("ModelConfig: vocab must be >= " +
                                    std::to_string(kFirstSymbol + 1));
    }
    if (cfg.max_len < 2) throw std::invalid_argument("ModelConfig: max_len too small");
    if (cfg.architecture == Architecture::classifier && cfg.num_classes < 2) {
        throw std::invalid_argument("ModelConfig: classifier needs >= 2 classes");
    }
    if (cfg.d_ff < 1) throw std::invalid_argument("ModelConfig: d_ff must be positive");
    if (cfg.ff_dropout < 0.0 || cfg.ff_dropout >= 1.0) {
        throw std::invalid_argument("ModelConfig: ff_dropout must lie in [0,1)");
    }
}

}  // namespace drophead
