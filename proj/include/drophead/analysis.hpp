#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drophead/model.hpp"
#include "drophead/train.hpp"

namespace drophead {

struct HeadRef {
    AttnSite site;
    int head = 0;
};

// Per-(stack, layer, type, head) importance: mean absolute loss-gradient
// w.r.t. a multiplicative head gate, with an l2-normalized per-site variant.
struct HeadImportance {
    AttnSite site;
    int head = 0;
    double score = 0.0;
    double score_norm = 0.0;
};

struct AblationEntry {
    AttnSite site;
    int head = 0;
    double acc = 0.0;
    double loss = 0.0;
    double delta_acc = 0.0;  // ablated - baseline; negative = degradation
};

struct TypeSummary {
    AttnType type = AttnType::enc_enc;
    double avg_dominant_delta = 0.0;  // mean over layers of the worst head's delta
    std::vector<AblationEntry> dominant_per_layer;
};

struct AblationReport {
    EvalResult baseline;
    std::vector<AblationEntry> grid;
    std::vector<TypeSummary> per_type;
};

struct PrunePoint {
    double fraction = 0.0;
    int heads_pruned = 0;
    double acc = 0.0;
    double loss = 0.0;
    std::vector<int> pinned_sites;  // sites held at one head by the floor
};

// Evaluation with one head forced to zero; survivors rescaled by H/(H-1)
// unless rescale is false.
template <typename T>
EvalResult mask_single_head_eval(const TransformerModel<T>& model,
                                 const std::vector<Example>& examples, const HeadRef& head,
                                 bool rescale = true) {
    const int h = model.config.num_heads;
    if (h < 2) {
        throw std::invalid_argument(
            "mask_single_head_eval: masking the only head would drop all heads");
    }
    bool site_found = false;
    for (const AttnSite& s : model.attention_sites()) site_found |= s == head.site;
    if (!site_found || head.head < 0 || head.head >= h) {
        throw std::invalid_argument("mask_single_head_eval: invalid head id (site " +
                                    std::to_string(head.site.id()) + ", head " +
                                    std::to_string(head.head) + ")");
    }
    std::vector<std::uint8_t> bits(h, 1);
    bits[head.head] = 0;
    std::map<int, HeadMask> masks;
    masks.emplace(head.site.id(), HeadMask::from_bits(std::move(bits)));
    ForwardOverrides<T> ov;
    ov.forced_masks = &masks;
    ov.forced_rescale = rescale;
    return evaluate_model(model, examples, &ov);
}

// Full single-head ablation grid; per attention type, the dominant head of
// each layer is the one whose removal degrades accuracy most.
template <typename T>
AblationReport dominant_head_report(const TransformerModel<T>& model,
                                    const std::vector<Example>& examples, bool rescale = true) {
    AblationReport report;
    report.baseline = evaluate_model(model, examples);
    const int h = model.config.num_heads;
    if (h < 2) {
        throw std::invalid_argument(
            "dominant_head_report: models with a single head per layer have no valid "
            "single-head removal");
    }
    for (const AttnSite& site : model.attention_sites()) {
        for (int head = 0; head < h; ++head) {
            EvalResult r = mask_single_head_eval(model, examples, {site, head}, rescale);
            AblationEntry e;
            e.site = site;
            e.head = head;
            e.acc = r.accuracy;
            e.loss = r.loss;
            e.delta_acc = r.accuracy - report.baseline.accuracy;
            report.grid.push_back(e);
        }
    }
    for (AttnType type : {AttnType::enc_enc, AttnType::enc_dec, AttnType::dec_dec}) {
        TypeSummary summary;
        summary.type = type;
        for (const AttnSite& site : model.attention_sites()) {
            if (site.type != type) continue;
            const AblationEntry* worst = nullptr;
            for (const AblationEntry& e : report.grid) {
                if (!(e.site == site)) continue;
                if (!worst || e.delta_acc < worst->delta_acc) worst = &e;
            }
            if (worst) summary.dominant_per_layer.push_back(*worst);
        }
        if (summary.dominant_per_layer.empty()) continue;
        double sum = 0.0;
        for (const auto& e : summary.dominant_per_layer) sum += e.delta_acc;
        summary.avg_dominant_delta = sum / static_cast<double>(summary.dominant_per_layer.size());
        report.per_type.push_back(summary);
    }
    return report;
}

// score = mean over examples of |dloss/dgate| for a per-head gate of value 1
// multiplied onto the head output; score_norm is l2-normalized within each
// (stack, layer, type) site. Model parameter grads are left untouched: the
// gates are the only leaves tracked during the backward passes.
template <typename T>
std::vector<HeadImportance> head_importance_scores(TransformerModel<T>& model,
                                                   const std::vector<Example>& examples) {
    if (examples.empty()) throw std::invalid_argument("head_importance_scores: empty dataset");
    const int h = model.config.num_heads;
    const auto sites = model.attention_sites();
    std::map<int, std::vector<Tensor<T>>> gates;
    for (const AttnSite& site : sites) {
        std::vector<Tensor<T>> site_gates;
        for (int i = 0; i < h; ++i) {
            Tensor<T> g = Tensor<T>::scalar(T(1));
            g.set_requires_grad(true);
            site_gates.push_back(g);
        }
        gates.emplace(site.id(), std::move(site_gates));
    }
    ForwardOverrides<T> ov;
    ov.head_gates = &gates;
    std::map<int, std::vector<double>> abs_grad_sums;
    for (const AttnSite& site : sites) abs_grad_sums[site.id()].assign(h, 0.0);

    auto params = model.named_params();
    for (auto& [name, p] : params) p.set_requires_grad(false);
    struct RestoreGrad {
        std::vector<std::pair<std::string, Tensor<T>>>* params;
        ~RestoreGrad() {
            for (auto& [name, p] : *params) p.set_requires_grad(true);
        }
    } restore{&params};

    Tape<T> tape;
    for (const Example& ex : examples) {
        tape.reset();
        Tensor<T> loss = example_loss(&tape, model, ex, Mode::inference, {}, &ov);
        for (auto& [site_id, site_gates] : gates)
            for (auto& g : site_gates) g.zero_grad();
        tape.backward(loss);
        for (auto& [site_id, site_gates] : gates) {
            for (int i = 0; i < h; ++i) {
                const auto& g = site_gates[i];
                const double grad = g.has_grad() ? static_cast<double>(g.grad()[0]) : 0.0;
                if (!std::isfinite(grad)) {
                    throw numeric_error("head_importance_scores: non-finite gate gradient at "
                                        "site " + std::to_string(site_id) + ", head " +
                                        std::to_string(i));
                }
                abs_grad_sums[site_id][i] += std::abs(grad);
            }
        }
    }
    std::vector<HeadImportance> out;
    for (const AttnSite& site : sites) {
        const auto& sums = abs_grad_sums[site.id()];
        double sq = 0.0;
        for (double s : sums) sq += (s / examples.size()) * (s / examples.size());
        const double norm = std::sqrt(sq);
        for (int i = 0; i < h; ++i) {
            HeadImportance imp;
            imp.site = site;
            imp.head = i;
            imp.score = sums[i] / static_cast<double>(examples.size());
            imp.score_norm = norm > 0.0 ? imp.score / norm : 0.0;
            out.push_back(imp);
        }
    }
    return out;
}

// Heads removed globally in ascending importance order; every layer keeps at
// least one head, and survivors are rescaled by H / kept.
template <typename T>
std::vector<PrunePoint> pruning_sweep(TransformerModel<T>& model,
                                      const std::vector<Example>& examples,
                                      const std::vector<double>& fractions,
                                      const std::vector<HeadImportance>* precomputed = nullptr) {
    for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
        if (fractions[i] > fractions[i + 1]) {
            throw std::invalid_argument("pruning_sweep: fractions must be sorted ascending");
        }
    }
    for (double f : fractions) {
        if (f < 0.0 || f >= 1.0) {
            throw std::invalid_argument("pruning_sweep: fractions must lie in [0,1)");
        }
    }
    std::vector<HeadImportance> scores =
        precomputed ? *precomputed : head_importance_scores(model, examples);
    // Ascending by score; ties broken by (site id, head) so the order is total.
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.site.id() != b.site.id()) return a.site.id() < b.site.id();
        return a.head < b.head;
    });
    const int h = model.config.num_heads;
    const int total_heads = static_cast<int>(model.attention_sites().size()) * h;

    std::vector<PrunePoint> curve;
    for (double fraction : fractions) {
        const int want = static_cast<int>(fraction * total_heads);
        std::map<int, int> kept_per_site;
        for (const AttnSite& site : model.attention_sites()) kept_per_site[site.id()] = h;
        std::map<int, std::vector<std::uint8_t>> bits;
        for (const AttnSite& site : model.attention_sites())
            bits[site.id()] = std::vector<std::uint8_t>(h, 1);
        PrunePoint point;
        point.fraction = fraction;
        int pruned = 0;
        for (const HeadImportance& s : scores) {
            if (pruned >= want) break;
            int& kept = kept_per_site[s.site.id()];
            if (kept <= 1) {
                if (std::find(point.pinned_sites.begin(), point.pinned_sites.end(),
                              s.site.id()) == point.pinned_sites.end()) {
                    point.pinned_sites.push_back(s.site.id());
                }
                continue;
            }
            bits[s.site.id()][s.head] = 0;
            --kept;
            ++pruned;
        }
        point.heads_pruned = pruned;
        if (pruned == 0) {
            EvalResult r = evaluate_model(model, examples);
            point.acc = r.accuracy;
            point.loss = r.loss;
        } else {
            std::map<int, HeadMask> masks;
            for (auto& [site_id, b] : bits) {
                bool all = true;
                for (auto v : b) all &= v == 1;
                if (!all) masks.emplace(site_id, HeadMask::from_bits(b));
            }
            ForwardOverrides<T> ov;
            ov.forced_masks = &masks;
            ov.forced_rescale = true;
            EvalResult r = evaluate_model(model, examples, &ov);
            point.acc = r.accuracy;
            point.loss = r.loss;
        }
        curve.push_back(std::move(point));
    }
    return curve;
}

// Report serialization (JSON + CSV) lives in src/analysis_io.cpp.
void write_ablation_report_json(const AblationReport& report, const std::string& path);
void write_ablation_report_csv(const AblationReport& report, const std::string& path);
void write_importance_json(const std::vector<HeadImportance>& scores, const std::string& path);
void write_importance_csv(const std::vector<HeadImportance>& scores, const std::string& path);
void write_pruning_json(const std::vector<PrunePoint>& curve, const std::string& path);
void write_pruning_csv(const std::vector<PrunePoint>& curve, const std::string& path);

}  // namespace drophead
