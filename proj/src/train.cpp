#include "drophead/train.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace drophead {

std::string to_string(Arm a) {
    switch (a) {
        case Arm::none: return "none";
        case Arm::attention_dropout: return "attention_dropout";
        case Arm::drophead: return "drophead";
        case Arm::combination: return "combination";
    }
    throw std::logic_error("unknown arm");
}

Arm arm_from_string(const std::string& s) {
    if (s == "none") return Arm::none;
    if (s == "attention_dropout") return Arm::attention_dropout;
    if (s == "drophead") return Arm::drophead;
    if (s == "combination") return Arm::combination;
    throw std::invalid_argument("unknown arm: " + s);
}

void TrainConfig::validate() const {
    model.validate();
    if (arm == Arm::drophead || arm == Arm::combination) {
        schedule.validate();
        if (!model.placement.any()) {
            throw std::invalid_argument(
                "train: DropHead requested but every placement flag is off");
        }
    }
    if (attn_dropout_p < 0.0 || attn_dropout_p >= 1.0) {
        throw std::invalid_argument("train: attn_dropout_p must lie in [0,1)");
    }
    if (base_lr <= 0.0) throw std::invalid_argument("train: base_lr must be positive");
    if (warmup_steps < 1) throw std::invalid_argument("train: warmup_steps must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("train: total_steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("train: eval_interval must be >= 1");
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

std::string metrics_csv_line(const MetricsRecord& r) {
    std::ostringstream os;
    os << r.step << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.dev_loss) << ','
       << fmt_double(r.dev_acc) << ',' << fmt_double(r.drop_rate) << ',' << fmt_double(r.lr)
       << ',' << r.wall_ms;
    return os.str();
}

void write_model_config_json(const ModelConfig& cfg, const std::string& path) {
    nlohmann::json j;
    j["architecture"] = to_string(cfg.architecture);
    j["num_encoder_layers"] = cfg.num_encoder_layers;
    j["num_decoder_layers"] = cfg.num_decoder_layers;
    j["num_heads"] = cfg.num_heads;
    j["d_model"] = cfg.d_model;
    j["d_ff"] = cfg.d_ff;
    j["vocab"] = cfg.vocab;
    j["max_len"] = cfg.max_len;
    j["num_classes"] = cfg.num_classes;
    j["placement"] = {{"enc_enc", cfg.placement.enc_enc},
                      {"enc_dec", cfg.placement.enc_dec},
                      {"dec_dec", cfg.placement.dec_dec}};
    j["ff_dropout"] = cfg.ff_dropout;
    j["tied_output"] = cfg.tied_output;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << '\n';
}

ModelConfig read_model_config_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    ModelConfig cfg;
    cfg.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    cfg.num_encoder_layers = j.at("num_encoder_layers").get<int>();
    cfg.num_decoder_layers = j.at("num_decoder_layers").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    const auto& p = j.at("placement");
    cfg.placement.enc_enc = p.at("enc_enc").get<bool>();
    cfg.placement.enc_dec = p.at("enc_dec").get<bool>();
    cfg.placement.dec_dec = p.at("dec_dec").get<bool>();
    cfg.ff_dropout = j.at("ff_dropout").get<double>();
    cfg.tied_output = j.at("tied_output").get<bool>();
    cfg.validate();
    return cfg;
}

}  // namespace drophead
