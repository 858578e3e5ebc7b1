#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "drophead/checkpoint.hpp"
#include "drophead/data.hpp"
#include "drophead/model.hpp"
#include "drophead/schedule.hpp"

namespace drophead {

enum class Arm { none, attention_dropout, drophead, combination };

std::string to_string(Arm a);
Arm arm_from_string(const std::string& s);

struct TrainConfig {
    ModelConfig model;
    ScheduleSpec schedule;  // drives the DropHead rate for drophead/combination arms
    Arm arm = Arm::none;
    double drophead_p = 0.2;       // p_start/p_end source for schedule construction
    double attn_dropout_p = 0.1;   // attention_dropout/combination arms
    double base_lr = 2e-3;
    std::int64_t warmup_steps = 400;
    std::int64_t total_steps = 3000;
    int batch_size = 16;
    std::uint64_t seed = 1;
    std::int64_t eval_interval = 250;
    double clip_norm = 1.0;  // <= 0 disables clipping
    MaskGranularity granularity = MaskGranularity::per_example;
    bool rescale_after_wo = false;
    Dtype dtype = Dtype::f32;

    void validate() const;
};

struct MetricsRecord {
    std::int64_t step = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double dev_acc = 0.0;
    double drop_rate = 0.0;
    double lr = 0.0;
    std::int64_t wall_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,dev_loss,dev_acc,drop_rate,lr,wall_ms";

std::string metrics_csv_line(const MetricsRecord& r);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;  // token accuracy (seq2seq) or label accuracy
};

class training_diverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bias-corrected Adam over a fixed parameter list; aborts on NaN gradients
// naming the offending parameter.
template <typename T>
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr,
              double clip_norm) {
        if (lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
        if (m_.empty()) {
            for (auto& [name, p] : params) {
                m_.emplace_back(p.numel(), T(0));
                v_.emplace_back(p.numel(), T(0));
            }
        }
        ++t_;
        double sq_norm = 0.0;
        for (auto& [name, p] : params) {
            p.ensure_grad();
            for (T g : p.grad()) {
                if (!std::isfinite(static_cast<double>(g))) {
                    throw training_diverged("adam: non-finite gradient in parameter " + name);
                }
                sq_norm += static_cast<double>(g) * static_cast<double>(g);
            }
        }
        const double norm = std::sqrt(sq_norm);
        const double clip_scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].second;
            auto grad = p.grad();
            auto vals = p.values();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double g = static_cast<double>(grad[j]) * clip_scale;
                const double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * g;
                const double v =
                    beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                vals[j] = static_cast<T>(static_cast<double>(vals[j]) -
                                         lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Per-example loss for either architecture; targets of pad rows never enter.
template <typename T>
Tensor<T> example_loss(Tape<T>* tape, const TransformerModel<T>& model, const Example& ex,
                       Mode mode, const DropState& drop = {},
                       const ForwardOverrides<T>* ov = nullptr) {
    if (model.config.architecture == Architecture::classifier) {
        Tensor<T> logits = forward_classifier(tape, model, ex.src, mode, drop, ov);
        const int label[1] = {ex.label};
        return cross_entropy(tape, logits, std::span<const int>(label, 1));
    }
    std::span<const int> tgt_in(ex.tgt.data(), ex.tgt.size() - 1);
    std::span<const int> tgt_out(ex.tgt.data() + 1, ex.tgt.size() - 1);
    Tensor<T> logits = forward_seq2seq(tape, model, ex.src, tgt_in, mode, drop, ov);
    return cross_entropy(tape, logits, tgt_out);
}

// Loss + accuracy over a full example list; deterministic order.
template <typename T>
EvalResult evaluate_model(const TransformerModel<T>& model, const std::vector<Example>& examples,
                          const ForwardOverrides<T>* ov = nullptr) {
    if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    double loss_sum = 0.0;
    std::int64_t correct = 0, total = 0;
    for (const Example& ex : examples) {
        if (model.config.architecture == Architecture::classifier) {
            Tensor<T> logits =
                forward_classifier<T>(nullptr, model, ex.src, Mode::inference, {}, ov);
            const int label[1] = {ex.label};
            loss_sum += static_cast<double>(
                cross_entropy<T>(nullptr, logits, std::span<const int>(label, 1)).at(0));
            int best = 0;
            for (std::size_t j = 1; j < logits.cols(); ++j)
                if (logits(0, j) > logits(0, best)) best = static_cast<int>(j);
            correct += best == ex.label ? 1 : 0;
            ++total;
        } else {
            std::span<const int> tgt_in(ex.tgt.data(), ex.tgt.size() - 1);
            std::span<const int> tgt_out(ex.tgt.data() + 1, ex.tgt.size() - 1);
            Tensor<T> logits =
                forward_seq2seq<T>(nullptr, model, ex.src, tgt_in, Mode::inference, {}, ov);
            loss_sum +=
                static_cast<double>(cross_entropy<T>(nullptr, logits, tgt_out).at(0));
            for (std::size_t i = 0; i < tgt_out.size(); ++i) {
                int best = 0;
                for (std::size_t j = 1; j < logits.cols(); ++j)
                    if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
                correct += best == tgt_out[i] ? 1 : 0;
                ++total;
            }
        }
    }
    return {loss_sum / static_cast<double>(examples.size()),
            static_cast<double>(correct) / static_cast<double>(total)};
}

// Fraction of examples whose greedy decode reproduces the target payload.
template <typename T>
double exact_match_rate(const TransformerModel<T>& model, const std::vector<Example>& examples,
                        const ForwardOverrides<T>* ov = nullptr) {
    if (model.config.architecture != Architecture::seq2seq) {
        throw std::invalid_argument("exact_match_rate: seq2seq only");
    }
    std::int64_t hit = 0;
    for (const Example& ex : examples) {
        const std::vector<int> payload(ex.tgt.begin() + 1, ex.tgt.end() - 1);
        const std::vector<int> decoded =
            greedy_decode<T>(model, ex.src, static_cast<int>(payload.size()) + 2, ov);
        hit += decoded == payload ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(examples.size());
}

template <typename T>
struct TrainOutput {
    TransformerModel<T> model;
    std::vector<MetricsRecord> metrics;
    std::vector<double> rate_log;  // DropHead rate actually used at each step
    double best_dev_acc = 0.0;
    double final_dev_acc = 0.0;
    double final_dev_loss = 0.0;
    std::int64_t best_step = 0;
};

template <typename T>
std::vector<TensorRecord> model_records(TransformerModel<T>& model) {
    std::vector<TensorRecord> records;
    for (auto& [name, t] : model.named_params()) records.push_back(to_record(name, t));
    return records;
}

template <typename T>
void load_model_params(TransformerModel<T>& model, const std::vector<TensorRecord>& records) {
    std::size_t used = 0;
    auto params = model.named_params();
    for (auto& [name, t] : params) {
        const TensorRecord* found = nullptr;
        for (const auto& r : records) {
            if (r.name == name) {
                found = &r;
                break;
            }
        }
        if (!found) throw std::runtime_error("checkpoint: missing parameter " + name);
        Tensor<T> loaded = from_record<T>(*found);
        if (loaded.shape() != t.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " +
                                     shape_str(loaded.shape()) + " vs " +
                                     shape_str(t.shape()));
        }
        std::copy(loaded.values().begin(), loaded.values().end(), t.values().begin());
        ++used;
    }
    if (used != records.size()) {
        throw std::runtime_error("checkpoint: " + std::to_string(records.size() - used) +
                                 " unused records");
    }
}

void write_model_config_json(const ModelConfig& cfg, const std::string& path);
ModelConfig read_model_config_json(const std::string& path);

// Deterministic training loop: per-step DropHead rate from the schedule,
// per-(step, example) mask streams, Adam with warmup LR, metrics at eval
// intervals. When run_dir is nonempty, writes checkpoint.bin (+ .json
// sidecar) and metrics.csv there.
template <typename T>
TrainOutput<T> run_training(const TrainConfig& cfg, const Dataset& data,
                            const std::string& run_dir = "") {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: empty training split");
    if (data.vocab != cfg.model.vocab) {
        throw std::invalid_argument("train: dataset vocab " + std::to_string(data.vocab) +
                                    " != model vocab " + std::to_string(cfg.model.vocab));
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto wall_ms = [&t0] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    };

    TrainOutput<T> out;
    out.model = TransformerModel<T>::init(cfg.model, cfg.seed);
    auto params = out.model.named_params();
    Adam<T> opt;
    Tape<T> tape;

    std::ofstream metrics_file;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        metrics_file.open(run_dir + "/metrics.csv", std::ios::trunc);
        if (!metrics_file) throw std::runtime_error("train: cannot write metrics in " + run_dir);
        metrics_file << kMetricsHeader << '\n' << std::flush;
    }
    auto save = [&] {
        if (run_dir.empty()) return;
        auto records = model_records(out.model);
        save_checkpoint(run_dir + "/checkpoint.bin", records);
        write_model_config_json(cfg.model, run_dir + "/checkpoint.json");
    };
    save();  // total_steps == 0 leaves the checkpoint at initialization

    const bool drophead_arm = cfg.arm == Arm::drophead || cfg.arm == Arm::combination;
    const bool attn_arm = cfg.arm == Arm::attention_dropout || cfg.arm == Arm::combination;

    std::vector<Batch> epoch_batches;
    std::size_t batch_cursor = 0;
    std::uint64_t epoch = 0;
    double loss_accum = 0.0;
    std::int64_t loss_count = 0;
    out.best_dev_acc = -1.0;

    try {
        for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
            if (batch_cursor >= epoch_batches.size()) {
                epoch_batches =
                    make_batches(data.train, cfg.batch_size, cfg.seed * 1000003ull + epoch);
                batch_cursor = 0;
                ++epoch;
            }
            const Batch& batch = epoch_batches[batch_cursor++];

            const double rate = drophead_arm ? drop_rate_at(cfg.schedule, step) : 0.0;
            out.rate_log.push_back(rate);
            const double lr = learning_rate_at(cfg.base_lr, cfg.warmup_steps, step + 1);

            tape.reset();
            Tensor<T> total;
            for (std::size_t e = 0; e < batch.size; ++e) {
                Example ex;
                ex.src = batch.src_row(e);
                ex.tgt = batch.tgt_len ? batch.tgt_row(e) : std::vector<int>{};
                ex.label = batch.labels.empty() ? -1 : batch.labels[e];
                DropState drop;
                drop.drophead_on = drophead_arm;
                drop.drophead_p = rate;
                drop.granularity = cfg.granularity;
                drop.rescale_after_wo = cfg.rescale_after_wo;
                drop.attn_dropout_p = attn_arm ? cfg.attn_dropout_p : 0.0;
                drop.ff_dropout_p = cfg.model.ff_dropout;
                drop.seed = cfg.seed;
                drop.step = static_cast<std::uint64_t>(step);
                drop.example = static_cast<std::uint64_t>(e);
                Tensor<T> loss = example_loss(&tape, out.model, ex, Mode::training, drop);
                total = total.defined() ? add(&tape, total, loss) : loss;
            }
            Tensor<T> mean_loss = scale(&tape, total, 1.0 / static_cast<double>(batch.size));
            loss_accum += static_cast<double>(mean_loss.at(0));
            ++loss_count;
            out.model.zero_grads();
            tape.backward(mean_loss);
            opt.step(params, lr, cfg.clip_norm);

            const bool at_eval = (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.total_steps;
            if (at_eval && !data.dev.empty()) {
                EvalResult dev = evaluate_model(out.model, data.dev);
                MetricsRecord rec;
                rec.step = step + 1;
                rec.train_loss = loss_accum / static_cast<double>(loss_count);
                rec.dev_loss = dev.loss;
                rec.dev_acc = dev.accuracy;
                rec.drop_rate = rate;
                rec.lr = lr;
                rec.wall_ms = wall_ms();
                out.metrics.push_back(rec);
                if (metrics_file) metrics_file << metrics_csv_line(rec) << '\n' << std::flush;
                loss_accum = 0.0;
                loss_count = 0;
                if (dev.accuracy > out.best_dev_acc) {
                    out.best_dev_acc = dev.accuracy;
                    out.best_step = rec.step;
                }
                out.final_dev_acc = dev.accuracy;
                out.final_dev_loss = dev.loss;
                save();
            }
        }
    } catch (const numeric_error& e) {
        // Divergence: keep the last checkpoint and metrics, then surface.
        throw training_diverged(std::string("training diverged: ") + e.what());
    }
    save();
    return out;
}

}  // namespace drophead
